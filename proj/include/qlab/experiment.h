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

#ifndef QLAB_EXPERIMENT_H_
#define QLAB_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlab/codec.h"
#include "qlab/image_io.h"
#include "qlab/metrics.h"
#include "qlab/quantizers.h"

namespace qlab {

inline constexpr char kAnchorLabel[] = "aun+aun";

struct DatasetSpec {
  std::string name = "synthetic";
  ImageSource source = ImageSource::kSynthetic;
  std::size_t count = 16;
  std::size_t size = 64;
  std::uint64_t seed = 1;
  std::filesystem::path dir;

  ImageSet Load() const;
};

struct ExperimentConfig {
  std::string name;  // defaults to Label()
  QuantizerSpec spec_ent;
  QuantizerSpec spec_dec;
  // Drive both views from one quantizer call instead of the pair path.
  bool single_path = false;
  std::vector<double> lambdas{0.001, 0.003, 0.01, 0.03};
  long iterations = 3000;
  std::size_t batch = 8;
  std::size_t patch = 64;
  std::size_t latent_channels = kDefaultLatentChannels;
  double learning_rate = 1e-3;
  // The last `lr_decay_fraction` of iterations run at learning_rate * lr_decay_factor.
  double lr_decay_fraction = 0.2;
  double lr_decay_factor = 0.1;
  std::vector<std::uint64_t> seeds{1, 2};
  // Rescale t0 and c from the 10^6-iteration reference to `iterations`.
  bool scale_schedule = true;
  DatasetSpec train;
  std::vector<DatasetSpec> test{DatasetSpec{.name = "synthetic", .seed = 1001, .dir = {}}};
  std::filesystem::path out = "runs";

  // "ent+dec", e.g. "aun+ste"; single configs read "k+k".
  std::string Label() const;
  // Stable over everything that changes the quantizer noise; the single and
  // (k, k) paths hash equal.
  std::uint64_t Hash() const;
  QuantizerSpec EffectiveEnt() const;
  QuantizerSpec EffectiveDec() const;
  double LearningRateAt(long iteration) const;
  void Validate() const;
};

// key=value lines under [experiment], [ent], [dec], [train] and
// [test:NAME] sections.
ExperimentConfig ParseConfig(const std::string& text,
                             const std::filesystem::path& base_dir = {});
ExperimentConfig LoadConfig(const std::filesystem::path& path);
std::string FormatConfig(const ExperimentConfig& cfg);

struct ConfigPair {
  QuantizerKind ent;
  QuantizerKind dec;
  std::string Label() const;
};

// Every kind paired with itself, then every ordered pair of distinct kinds
// that excludes STH.
std::vector<ConfigPair> EnumerateMatrix(std::span<const QuantizerKind> kinds);

// A config file plus [matrix] kinds=... and optional [kind:NAME] sections
// overriding a kind's hyper-parameters.
struct Manifest {
  ExperimentConfig base;
  std::vector<QuantizerKind> kinds;
  std::map<QuantizerKind, QuantizerSpec> overrides;

  std::vector<ExperimentConfig> Expand() const;
};
Manifest ParseManifest(const std::string& text, const std::filesystem::path& base_dir = {});
Manifest LoadManifest(const std::filesystem::path& path);

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(long iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

struct TrainLog {
  std::vector<double> total;
  std::vector<double> rate;
  std::vector<double> distortion;
};

// Streams for one cell. Initial weights and crops depend only on the seed so
// every config and lambda starts from the same point and sees the same data;
// quantizer noise depends on (config hash, lambda, seed, iteration).
CounterRng InitStream(std::uint64_t seed);
CounterRng CropStream(std::uint64_t seed, long iteration);
CounterRng NoiseStream(std::uint64_t config_hash, double lambda, std::uint64_t seed,
                       long iteration);

// Adam on the joint loss for cfg.iterations steps. Throws NonFiniteLoss.
TrainLog TrainCodec(CodecParams<float>& params, const ImageSet& train,
                    const ExperimentConfig& cfg, double lambda, std::uint64_t seed,
                    std::ostream* progress = nullptr);

// Means over consecutive windows (the tail shorter than `window` is dropped).
std::vector<double> BlockMeans(std::span<const double> values, std::size_t window);
// Last block mean strictly below the first.
bool SmoothedLossDecreased(std::span<const double> values, std::size_t window);

struct EvalPoint {
  double bpp_estimated = 0;
  double bpp_payload = 0;  // range-coded payload only
  double bpp_total = 0;    // full stream including per-channel tables
  double psnr = 0;         // mean over images of 8-bit PSNR
  double mse = 0;          // mean over images, 0..255 scale
};
EvalPoint EvaluateCodec(const CodecParams<float>& params, const ImageSet& images);

struct CellResult {
  double lambda = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  bool resumed = false;
  std::string error;
  std::map<std::string, EvalPoint> points;  // by dataset
};

struct LabeledCurve {
  std::string config;
  std::string dataset;
  std::uint64_t seed = 0;
  RDCurve curve;  // bpp from the model's estimate
};

// "config/dataset/seed"
std::string CurveLabel(const std::string& config, const std::string& dataset,
                       std::uint64_t seed);
LabeledCurve ParseCurveLabel(const RDCurve& curve);

struct ExperimentResult {
  std::string label;
  std::vector<CellResult> cells;
  std::vector<LabeledCurve> curves;
  bool all_ok() const;
};

struct RunOptions {
  std::size_t parallel = 1;
  // Skip cells whose results are already on disk.
  bool resume = false;
  std::ostream* log = nullptr;
};

// Trains and evaluates every (lambda, seed) cell under cfg.out:
//   config.ini, curves.csv, seed<S>/lambda<L>/{checkpoint.qlt,loss.csv,result.csv}
// A cell whose loss turns non-finite writes failed.txt instead of result.csv.
ExperimentResult RunExperiment(const ExperimentConfig& cfg, const RunOptions& options);

struct ResultRow {
  std::string label;
  std::vector<std::optional<double>> bd;  // per dataset
  std::optional<double> average;
};

struct ResultTable {
  std::string anchor = kAnchorLabel;
  std::vector<std::string> datasets;
  std::vector<ResultRow> rows;

  // Row indices of the lowest and second-lowest value in column `col`
  // (datasets first, then the average).
  std::pair<std::optional<std::size_t>, std::optional<std::size_t>> Ranking(
      std::size_t col) const;
  const ResultRow* Find(const std::string& label) const;

  // config,<datasets...>,average,flag where flag marks best/second on average.
  std::string ToCsv() const;
  static ResultTable FromCsv(const std::string& text);
  // Fixed-width text with * on the best and + on the second-best per column.
  std::string Render() const;
};

// BD rate of every config against `anchor` per dataset, averaged over seeds
// present for both; a dataset entry is n/a when any paired BD fails.
ResultTable EmitTable(std::span<const LabeledCurve> curves,
                      const std::string& anchor = kAnchorLabel);

// Row-wise mean over configs present in every table, on the shared datasets.
ResultTable AverageTables(std::span<const ResultTable> tables);

// Writes only when the content differs, so re-runs leave files untouched.
bool WriteIfChanged(const std::filesystem::path& path, const std::string& content);

}  // namespace qlab

#endif  // QLAB_EXPERIMENT_H_
