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

#include "qlab/experiment.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>

#include "gtest/gtest.h"

namespace qlab {
namespace {

namespace fs = std::filesystem;

using K = QuantizerKind;

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("qlab_experiment_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::map<fs::path, std::string> Snapshot(const fs::path& root) {
  std::map<fs::path, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto bytes = ReadFileBytes(e.path());
    out[e.path()] = std::string(bytes.begin(), bytes.end());
  }
  return out;
}

// Paths whose contents differ between two snapshots.
std::vector<std::string> Changed(const std::map<fs::path, std::string>& a,
                                 const std::map<fs::path, std::string>& b) {
  std::vector<std::string> out;
  for (const auto& [path, bytes] : a) {
    auto it = b.find(path);
    if (it == b.end() || it->second != bytes) out.push_back(path.string());
  }
  for (const auto& [path, bytes] : b) {
    if (!a.count(path)) out.push_back(path.string());
  }
  return out;
}

std::map<fs::path, fs::file_time_type> Times(const fs::path& root) {
  std::map<fs::path, fs::file_time_type> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[e.path()] = e.last_write_time();
  }
  return out;
}

TEST(Matrix, AllSevenKindsGiveThirtySevenConfigs) {
  const auto m = EnumerateMatrix(kApproximationKinds);
  EXPECT_EQ(m.size(), 37u);
  std::set<std::string> labels;
  for (const auto& p : m) {
    labels.insert(p.Label());
    if (p.ent == K::kSth || p.dec == K::kSth) {
      EXPECT_EQ(p.ent, p.dec);
    }
  }
  EXPECT_EQ(labels.size(), 37u);
  EXPECT_TRUE(labels.count("aun+aun"));
  EXPECT_TRUE(labels.count("uq+sra"));
  EXPECT_FALSE(labels.count("sth+aun"));
}

TEST(Matrix, SmallKindSets) {
  const K one[] = {K::kAun};
  EXPECT_EQ(EnumerateMatrix(one).size(), 1u);
  const K two[] = {K::kAun, K::kSte};
  const auto m = EnumerateMatrix(two);
  ASSERT_EQ(m.size(), 4u);
  EXPECT_EQ(m[2].Label(), "aun+ste");
  EXPECT_EQ(m[3].Label(), "ste+aun");
  const K with_sth[] = {K::kSth, K::kAun};
  EXPECT_EQ(EnumerateMatrix(with_sth).size(), 2u);
  const K dup[] = {K::kAun, K::kAun};
  EXPECT_THROW(EnumerateMatrix(dup), std::invalid_argument);
}

constexpr char kConfig[] = R"(# mixed approach
[experiment]
iterations = 30
patch = 32
lambdas = 0.001, 0.01
seeds = 3
out = somewhere

[ent]
kind = aun

[dec]
kind = sga
c = 0.001
t0 = 500

[test:kodak]
source = ppm
dir = images
)";

TEST(Config, ParsesAndFormatsRoundTrip) {
  ExperimentConfig cfg = ParseConfig(kConfig, "/data");
  EXPECT_EQ(cfg.Label(), "aun+sga");
  EXPECT_EQ(cfg.name, "aun+sga");
  EXPECT_FALSE(cfg.single_path);
  EXPECT_EQ(cfg.iterations, 30);
  EXPECT_EQ(cfg.lambdas, (std::vector<double>{0.001, 0.01}));
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{3}));
  EXPECT_EQ(cfg.spec_dec.c, 0.001);
  EXPECT_EQ(cfg.spec_dec.t0, 500);
  EXPECT_EQ(cfg.spec_ent.t0, 960000);
  ASSERT_EQ(cfg.test.size(), 1u);
  EXPECT_EQ(cfg.test[0].dir, fs::path("/data/images"));
  ExperimentConfig again = ParseConfig(FormatConfig(cfg));
  EXPECT_EQ(FormatConfig(again), FormatConfig(cfg));
  EXPECT_EQ(again.Hash(), cfg.Hash());
}

TEST(Config, SingleQuantizerWhenDecoderOmitted) {
  ExperimentConfig cfg = ParseConfig("[experiment]\n[ent]\nkind = dsq\nk = 0.5\n");
  EXPECT_TRUE(cfg.single_path);
  EXPECT_EQ(cfg.Label(), "dsq+dsq");
  EXPECT_EQ(cfg.spec_dec.k, 0.5);
  EXPECT_EQ(cfg.lambdas.size(), 4u);
}

TEST(Config, RejectsInvalidFiles) {
  const char* bad[] = {
      "[ent]\nkind = aun\n",                                          // no [experiment]
      "[experiment]\n",                                               // no [ent]
      "[experiment]\nbogus = 1\n[ent]\nkind = aun\n",                 // unknown key
      "[experiment]\n[ent]\nkind = sth\n[dec]\nkind = aun\n",         // sth paired
      "[experiment]\nlambdas =\n[ent]\nkind = aun\n",                 // empty lambdas
      "[experiment]\nlambdas = 0.1, -1\n[ent]\nkind = aun\n",         // negative lambda
      "[experiment]\niterations = 3x\n[ent]\nkind = aun\n",           // bad number
      "[experiment]\n[ent]\nkind = round\n",                          // not trainable
      "[experiment]\n[ent]\nkind = aun\n[extra]\n",                   // unknown section
      "[experiment]\npatch = 12\n[ent]\nkind = aun\n",                // patch not /8
      "iterations = 5\n[experiment]\n[ent]\nkind = aun\n",            // key outside section
      "[experiment]\nsingle = true\n[ent]\nkind = aun\n[dec]\nkind = ste\n",
  };
  for (const char* text : bad) EXPECT_THROW(ParseConfig(text), std::invalid_argument) << text;
}

TEST(Config, ManifestExpandsTheMatrix) {
  Manifest m = ParseManifest(
      "[experiment]\niterations = 10\nout = runs\n[matrix]\nkinds = aun, ste, sth\n"
      "[kind:sth]\nt0 = 123\n");
  const auto configs = m.Expand();
  ASSERT_EQ(configs.size(), 5u);
  EXPECT_EQ(configs[0].name, "aun+aun");
  EXPECT_TRUE(configs[0].single_path);
  EXPECT_EQ(configs[2].spec_ent.t0, 123);
  EXPECT_EQ(configs[3].name, "aun+ste");
  EXPECT_EQ(configs[3].out, fs::path("runs") / "aun+ste");
  EXPECT_THROW(ParseManifest("[experiment]\n[matrix]\nkinds = aun, aun\n"), std::invalid_argument);
  EXPECT_THROW(ParseManifest("[experiment]\n[matrix]\nkinds = aun\n[ent]\nkind = aun\n"),
               std::invalid_argument);
}

TEST(Streams, NoiseDependsOnEveryCellCoordinate) {
  const std::uint64_t base = NoiseStream(1, 0.01, 2, 3).key();
  EXPECT_EQ(NoiseStream(1, 0.01, 2, 3).key(), base);
  EXPECT_NE(NoiseStream(9, 0.01, 2, 3).key(), base);
  EXPECT_NE(NoiseStream(1, 0.03, 2, 3).key(), base);
  EXPECT_NE(NoiseStream(1, 0.01, 4, 3).key(), base);
  EXPECT_NE(NoiseStream(1, 0.01, 2, 4).key(), base);
}

TEST(Streams, SingleAndPairConfigsHashEqual) {
  ExperimentConfig single = ParseConfig("[experiment]\n[ent]\nkind = sga\n");
  ExperimentConfig pair = ParseConfig("[experiment]\n[ent]\nkind = sga\n[dec]\nkind = sga\n");
  EXPECT_TRUE(single.single_path);
  EXPECT_FALSE(pair.single_path);
  EXPECT_EQ(single.Hash(), pair.Hash());
  ExperimentConfig other = ParseConfig("[experiment]\n[ent]\nkind = sga\nc = 0.1\n");
  EXPECT_NE(single.Hash(), other.Hash());
}

TEST(Training, LearningRateDropsForTheFinalFraction) {
  ExperimentConfig cfg;
  cfg.iterations = 100;
  EXPECT_EQ(cfg.LearningRateAt(79), cfg.learning_rate);
  EXPECT_DOUBLE_EQ(cfg.LearningRateAt(80), cfg.learning_rate * cfg.lr_decay_factor);
}

TEST(Training, BlockMeans) {
  const double v[] = {4, 2, 3, 1, 1, 0, 9};
  EXPECT_EQ(BlockMeans(v, 2), (std::vector<double>{3, 2, 0.5}));
  EXPECT_TRUE(SmoothedLossDecreased(v, 2));
  const double up[] = {1, 1, 2, 2};
  EXPECT_FALSE(SmoothedLossDecreased(up, 2));
  EXPECT_FALSE(SmoothedLossDecreased(up, 4));
}

ExperimentConfig TinyConfig(const fs::path& out) {
  ExperimentConfig cfg = ParseConfig(
      "[experiment]\niterations = 6\nbatch = 2\npatch = 16\nlambdas = 0.001, 0.01\n"
      "seeds = 1, 2\nlatent_channels = 4\n[ent]\nkind = aun\n[dec]\nkind = ste\n"
      "[train]\ncount = 4\nsize = 32\n[test:a]\ncount = 2\nsize = 16\nseed = 5\n"
      "[test:b]\ncount = 2\nsize = 16\nseed = 6\n");
  cfg.out = out;
  return cfg;
}

TEST(Runner, WritesCellsAndIsIdempotent) {
  const fs::path out = TempDir("idempotent");
  ExperimentConfig cfg = TinyConfig(out);
  ExperimentResult first = RunExperiment(cfg, {});
  EXPECT_TRUE(first.all_ok());
  EXPECT_EQ(first.cells.size(), 4u);
  EXPECT_EQ(first.curves.size(), 4u);  // 2 seeds x 2 datasets
  for (const auto& c : first.curves) EXPECT_EQ(c.curve.points.size(), 2u);
  EXPECT_TRUE(fs::exists(out / "seed2" / "lambda0.01" / "checkpoint.qlt"));
  EXPECT_TRUE(fs::exists(out / "seed1" / "lambda0.001" / "loss.csv"));
  const auto snapshot = Snapshot(out);
  const auto times = Times(out);

  ExperimentResult resumed = RunExperiment(cfg, {.parallel = 2, .resume = true, .log = nullptr});
  EXPECT_TRUE(std::all_of(resumed.cells.begin(), resumed.cells.end(),
                          [](const CellResult& c) { return c.resumed; }));
  EXPECT_EQ(Times(out), times);

  // Retraining from scratch reproduces every byte.
  ExperimentResult again = RunExperiment(cfg, {.parallel = 2, .resume = false, .log = nullptr});
  EXPECT_EQ(Changed(Snapshot(out), snapshot), std::vector<std::string>{});
  for (std::size_t i = 0; i < first.curves.size(); ++i) {
    EXPECT_EQ(CurvesToCsv(std::vector<RDCurve>{first.curves[i].curve}),
              CurvesToCsv(std::vector<RDCurve>{again.curves[i].curve}));
  }
  fs::remove_all(out);
}

TEST(Runner, ZeroIterationsEvaluatesTheInitialModel) {
  const fs::path out = TempDir("zero");
  ExperimentConfig cfg = TinyConfig(out);
  cfg.iterations = 0;
  ExperimentResult r = RunExperiment(cfg, {});
  EXPECT_TRUE(r.all_ok());
  for (const auto& c : r.cells) EXPECT_GT(c.points.at("a").bpp_estimated, 0);
  fs::remove_all(out);
}

TEST(Runner, DivergentCellIsIsolated) {
  const fs::path out = TempDir("nan");
  ExperimentConfig cfg = TinyConfig(out);
  cfg.seeds = {1};
  cfg.lambdas = {0.01, 1e300};  // lambda * distortion overflows
  ExperimentResult r = RunExperiment(cfg, {});
  EXPECT_FALSE(r.all_ok());
  ASSERT_EQ(r.cells.size(), 2u);
  EXPECT_TRUE(r.cells[0].ok);
  EXPECT_FALSE(r.cells[1].ok);
  EXPECT_NE(r.cells[1].error.find("non-finite loss at iteration 0"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "seed1" / "lambda1e+300" / "failed.txt"));
  EXPECT_EQ(r.curves[0].curve.points.size(), 1u);
  ExperimentResult resumed = RunExperiment(cfg, {.parallel = 1, .resume = true, .log = nullptr});
  EXPECT_FALSE(resumed.cells[1].ok);
  EXPECT_TRUE(resumed.cells[1].resumed);
  fs::remove_all(out);
}

LabeledCurve Labeled(std::string config, std::string dataset, std::uint64_t seed, double scale,
                     double shift = 0) {
  LabeledCurve c;
  c.config = std::move(config);
  c.dataset = std::move(dataset);
  c.seed = seed;
  c.curve.label = CurveLabel(c.config, c.dataset, c.seed);
  const double bpp[] = {0.2, 0.4, 0.7, 1.1};
  const double psnr[] = {27.0, 29.5, 31.8, 33.9};
  for (int i = 0; i < 4; ++i) c.curve.points.push_back({bpp[i] * scale, psnr[i] + shift});
  return c;
}

TEST(Table, AnchorRowIsExactlyZeroAndRowsMatchConfigs) {
  std::vector<LabeledCurve> curves;
  for (std::uint64_t seed : {1, 2}) {
    for (const char* ds : {"kodak", "clic"}) {
      curves.push_back(Labeled("aun+aun", ds, seed, 1.0 + 0.01 * seed));
      curves.push_back(Labeled("uq+sra", ds, seed, 0.9));
      curves.push_back(Labeled("ste+ste", ds, seed, 1.2));
      curves.push_back(Labeled("sga+sga", ds, seed, 1.0, 20.0));  // no PSNR overlap
    }
  }
  ResultTable t = EmitTable(curves);
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.datasets, (std::vector<std::string>{"kodak", "clic"}));
  const ResultRow* anchor = t.Find("aun+aun");
  ASSERT_NE(anchor, nullptr);
  for (const auto& v : anchor->bd) EXPECT_EQ(*v, 0.0);
  EXPECT_EQ(*anchor->average, 0.0);
  // Seeds are paired: anchor scale 1.01 vs 0.9, and 1.02 vs 0.9.
  const double want = 0.5 * ((0.9 / 1.01 - 1) + (0.9 / 1.02 - 1)) * 100;
  EXPECT_NEAR(*t.Find("uq+sra")->average, want, 1e-9);
  EXPECT_FALSE(t.Find("sga+sga")->bd[0].has_value());
  EXPECT_FALSE(t.Find("sga+sga")->average.has_value());

  const std::size_t avg_col = t.datasets.size();
  auto [best, second] = t.Ranking(avg_col);
  EXPECT_EQ(t.rows[*best].label, "uq+sra");
  EXPECT_EQ(t.rows[*second].label, "aun+aun");

  const std::string csv = t.ToCsv();
  EXPECT_NE(csv.find("aun+aun,0.0000,0.0000,0.0000,second"), std::string::npos) << csv;
  EXPECT_NE(csv.find("sga+sga,n/a,n/a,n/a,"), std::string::npos) << csv;
  ResultTable back = ResultTable::FromCsv(csv);
  EXPECT_EQ(back.datasets, t.datasets);
  EXPECT_EQ(back.rows.size(), t.rows.size());
  EXPECT_EQ(*back.Find("aun+aun")->average, 0.0);
  const std::string text = t.Render();
  char cell[32];
  std::snprintf(cell, sizeof cell, "%.2f*", want);
  EXPECT_NE(text.find(cell), std::string::npos) << text;
}

TEST(Table, MissingAnchorIsAnError) {
  std::vector<LabeledCurve> curves{Labeled("ste+ste", "kodak", 1, 1.0)};
  EXPECT_THROW(EmitTable(curves), std::invalid_argument);
}

TEST(Table, AveragingAcrossArchitectures) {
  ResultTable a, b;
  a.datasets = {"kodak", "clic"};
  a.rows = {{"aun+aun", {0.0, 0.0}, 0.0}, {"uq+sra", {-4.0, -2.0}, -3.0}, {"ste+ste", {1.0, 3.0}, 2.0}};
  b.datasets = {"clic", "kodak"};
  b.rows = {{"aun+aun", {0.0, 0.0}, 0.0}, {"uq+sra", {-6.0, -2.0}, -4.0}};
  std::vector<ResultTable> tables{a, b};
  ResultTable avg = AverageTables(tables);
  EXPECT_EQ(avg.datasets, (std::vector<std::string>{"kodak", "clic"}));
  ASSERT_EQ(avg.rows.size(), 2u);  // ste+ste is not shared
  EXPECT_EQ(*avg.Find("uq+sra")->bd[0], -3.0);
  EXPECT_EQ(*avg.Find("uq+sra")->bd[1], -4.0);
  EXPECT_EQ(*avg.Find("uq+sra")->average, -3.5);
  EXPECT_EQ(*avg.Find("aun+aun")->average, 0.0);
}

TEST(Table, CurveLabelsRoundTrip) {
  RDCurve c{CurveLabel("aun+ste", "kodak", 7), {}};
  LabeledCurve l = ParseCurveLabel(c);
  EXPECT_EQ(l.config, "aun+ste");
  EXPECT_EQ(l.dataset, "kodak");
  EXPECT_EQ(l.seed, 7u);
  EXPECT_THROW(ParseCurveLabel(RDCurve{"nolabel", {}}), std::invalid_argument);
}

}  // namespace
}  // namespace qlab
