// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// qlab: train, evaluate and compare quantizer approximations on a toy codec.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "qlab/checkpoint.h"
#include "qlab/codec.h"
#include "qlab/experiment.h"
#include "qlab/image_io.h"
#include "qlab/metrics.h"

namespace fs = std::filesystem;

namespace {

struct RunFlags {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::size_t parallel = 1;
  bool resume = false;
  long iterations = -1;
};

void AddRunFlags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "Config or manifest file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory (overrides the file)");
  cmd->add_option("--seeds", f.seeds, "Comma-separated seeds (overrides the file)")->delimiter(',');
  cmd->add_option("--parallel", f.parallel, "Cells trained concurrently")->check(CLI::PositiveNumber);
  cmd->add_flag("--resume", f.resume, "Skip cells that already have results");
  cmd->add_option("--iterations", f.iterations, "Training iterations (overrides the file)");
}

void ApplyOverrides(qlab::ExperimentConfig& cfg, const RunFlags& f) {
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (f.iterations >= 0) cfg.iterations = f.iterations;
  cfg.Validate();
}

void PrintPoint(const std::string& dataset, const qlab::EvalPoint& p) {
  std::printf("%-12s bpp_estimated=%.4f bpp_payload=%.4f bpp_total=%.4f psnr=%.3f\n",
              dataset.c_str(), p.bpp_estimated, p.bpp_payload, p.bpp_total, p.psnr);
}

int Train(const RunFlags& f) {
  qlab::ExperimentConfig cfg = qlab::LoadConfig(f.config);
  ApplyOverrides(cfg, f);
  const auto result = qlab::RunExperiment(cfg, {f.parallel, f.resume, &std::cerr});
  for (const auto& cell : result.cells) {
    if (!cell.ok) continue;
    for (const auto& [name, point] : cell.points) {
      std::printf("lambda=%-8g seed=%-4llu ", cell.lambda,
                  static_cast<unsigned long long>(cell.seed));
      PrintPoint(name, point);
    }
  }
  return result.all_ok() ? 0 : 1;
}

int Matrix(const RunFlags& f) {
  qlab::Manifest manifest = qlab::LoadManifest(f.config);
  if (!f.out.empty()) manifest.base.out = f.out;
  if (!f.seeds.empty()) manifest.base.seeds = f.seeds;
  if (f.iterations >= 0) manifest.base.iterations = f.iterations;
  const auto configs = manifest.Expand();
  std::cerr << configs.size() << " configurations\n";
  bool ok = true;
  std::vector<qlab::LabeledCurve> curves;
  std::vector<qlab::RDCurve> flat;
  for (const auto& cfg : configs) {
    const auto result = qlab::RunExperiment(cfg, {f.parallel, f.resume, &std::cerr});
    ok = ok && result.all_ok();
    for (const auto& c : result.curves) {
      curves.push_back(c);
      flat.push_back(c.curve);
    }
  }
  qlab::WriteIfChanged(manifest.base.out / "curves.csv", qlab::CurvesToCsv(flat));
  const bool has_anchor = std::any_of(configs.begin(), configs.end(), [](const auto& c) {
    return c.name == qlab::kAnchorLabel;
  });
  if (has_anchor) {
    const auto table = qlab::EmitTable(curves);
    qlab::WriteIfChanged(manifest.base.out / "table.csv", table.ToCsv());
    std::cout << table.Render();
  } else {
    std::cerr << "no " << qlab::kAnchorLabel << " configuration; table skipped\n";
  }
  return ok ? 0 : 1;
}

int Eval(const std::string& checkpoint, const std::string& data, std::size_t count,
         std::size_t size, std::uint64_t seed) {
  const auto params = qlab::CodecFromNamed(qlab::LoadCheckpoint(checkpoint));
  const qlab::ImageSet set = data.empty() ? qlab::SynthDataset(count, size, seed)
                                          : qlab::LoadPpmDir(data);
  PrintPoint(data.empty() ? "synthetic" : fs::path(data).filename().string(),
             qlab::EvaluateCodec(params, set));
  return 0;
}

int Bd(const std::vector<std::string>& curve_files, const std::vector<std::string>& table_files,
       const std::string& anchor, const std::string& out) {
  qlab::ResultTable table;
  if (!table_files.empty()) {
    std::vector<qlab::ResultTable> tables;
    for (const auto& path : table_files) {
      const auto bytes = qlab::ReadFileBytes(path);
      tables.push_back(qlab::ResultTable::FromCsv(std::string(bytes.begin(), bytes.end())));
      tables.back().anchor = anchor;
    }
    table = qlab::AverageTables(tables);
  } else {
    std::vector<qlab::LabeledCurve> curves;
    for (const auto& path : curve_files) {
      for (const auto& c : qlab::ReadCurvesCsv(path)) curves.push_back(qlab::ParseCurveLabel(c));
    }
    table = qlab::EmitTable(curves, anchor);
  }
  if (!out.empty()) qlab::WriteIfChanged(out, table.ToCsv());
  std::cout << table.Render();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantizer approximation lab for learned image compression"};
  app.require_subcommand(1);

  RunFlags train_flags, matrix_flags;
  auto* train = app.add_subcommand("train", "Train one configuration over its lambda/seed grid");
  AddRunFlags(train, train_flags);
  auto* matrix = app.add_subcommand("matrix", "Train every configuration of a manifest");
  AddRunFlags(matrix, matrix_flags);

  std::string checkpoint, data;
  std::size_t count = 16, size = 64;
  std::uint64_t seed = 1001;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Directory of .ppm images (default: synthetic)");
  eval->add_option("--count", count, "Synthetic image count");
  eval->add_option("--size", size, "Synthetic image side");
  eval->add_option("--seed", seed, "Synthetic dataset seed");

  std::vector<std::string> curve_files, table_files;
  std::string anchor = qlab::kAnchorLabel, bd_out;
  auto* bd = app.add_subcommand("bd", "BD-rate table from curve CSVs or averaged tables");
  auto* curves_opt = bd->add_option("--curves", curve_files, "Curve CSV files")->check(CLI::ExistingFile);
  auto* tables_opt = bd->add_option("--average", table_files, "Table CSVs to average")->check(CLI::ExistingFile);
  curves_opt->excludes(tables_opt);
  bd->add_option("--anchor", anchor, "Anchor configuration label");
  bd->add_option("--out", bd_out, "Write the table CSV here");

  std::string synth_out;
  std::size_t synth_count = 16, synth_size = 64;
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth", "Write a synthetic PPM dataset");
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--count", synth_count);
  synth->add_option("--size", synth_size);
  synth->add_option("--seed", synth_seed);

  auto* codec = app.add_subcommand("codec", "Compress or decompress one image");
  codec->require_subcommand(1);
  std::string codec_ckpt, codec_in, codec_out;
  auto* encode = codec->add_subcommand("encode", "PPM image to bitstream");
  auto* decode = codec->add_subcommand("decode", "Bitstream to PPM image");
  for (auto* sub : {encode, decode}) {
    sub->add_option("--checkpoint", codec_ckpt)->required()->check(CLI::ExistingFile);
    sub->add_option("--in", codec_in)->required()->check(CLI::ExistingFile);
    sub->add_option("--out", codec_out)->required();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return Train(train_flags);
    if (*matrix) return Matrix(matrix_flags);
    if (*eval) return Eval(checkpoint, data, count, size, seed);
    if (*bd) {
      if (curve_files.empty() && table_files.empty()) {
        std::cerr << "bd: pass --curves or --average\n";
        return 2;
      }
      return Bd(curve_files, table_files, anchor, bd_out);
    }
    if (*synth) {
      qlab::SaveImageSet(synth_out, qlab::SynthDataset(synth_count, synth_size, synth_seed));
      return 0;
    }
    if (*encode) {
      const auto params = qlab::CodecFromNamed(qlab::LoadCheckpoint(codec_ckpt));
      const qlab::Image image = qlab::LoadPpm(codec_in);
      const auto stream = qlab::CompressImage(qlab::ImageToTensor(image), params,
                                              qlab::BuildCdfTables(params.prior));
      qlab::WriteFileBytes(codec_out, stream.Serialize());
      std::printf("%zu bytes, %.4f bpp (payload %.4f bpp)\n", stream.TotalBits() / 8,
                  double(stream.TotalBits()) / double(image.pixel_count()),
                  double(stream.PayloadBits()) / double(image.pixel_count()));
      return 0;
    }
    if (*decode) {
      const auto params = qlab::CodecFromNamed(qlab::LoadCheckpoint(codec_ckpt));
      const auto stream = qlab::Bitstream::Parse(qlab::ReadFileBytes(codec_in));
      qlab::SavePpm(codec_out, qlab::TensorToImage(qlab::DecompressImage(stream, params)));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
