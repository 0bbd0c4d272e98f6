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
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qlab/checkpoint.h"

namespace qlab {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

constexpr std::uint64_t kInitTag = 0x1a2b;
constexpr std::uint64_t kCropTag = 0x3c4d;

std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> SplitList(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    std::string item = Trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename N>
N ParseNumber(const std::string& text, const std::string& what) {
  N v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) {
    throw std::invalid_argument("config: bad value '" + text + "' for " + what);
  }
  return v;
}

bool ParseBool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw std::invalid_argument("config: bad boolean '" + text + "' for " + what);
}

// Shortest text that parses back to the same double.
std::string Fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string ShortFmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Section accessor that rejects keys it was not asked about.
class Section {
 public:
  Section(std::string name, const pt::ptree& tree) : name_(std::move(name)), tree_(tree) {}

  std::optional<std::string> Get(const std::string& key) {
    seen_.insert(key);
    auto child = tree_.get_child_optional(pt::ptree::path_type(key, '\0'));
    if (!child) return std::nullopt;
    return Trim(child->data());
  }
  std::string Where(const std::string& key) const { return "[" + name_ + "] " + key; }

  void RejectUnknown() const {
    for (const auto& [key, _] : tree_) {
      if (!seen_.count(key)) {
        throw std::invalid_argument("config: unknown key '" + key + "' in [" + name_ + "]");
      }
    }
  }

 private:
  std::string name_;
  const pt::ptree& tree_;
  std::set<std::string> seen_;
};

pt::ptree ReadIni(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  // The ini reader drops sections without keys; put them back so an empty
  // [experiment] still counts and an empty unknown section is still rejected.
  std::set<std::string> headers;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    line = Trim(line);
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
      headers.insert(Trim(line.substr(1, line.size() - 2)));
    }
  }
  for (const auto& [key, child] : tree) {
    if (child.empty() && !headers.count(key)) {
      throw std::invalid_argument("config: key '" + key + "' outside any [section]");
    }
  }
  for (const auto& h : headers) {
    if (tree.find(h) == tree.not_found()) tree.push_back({h, pt::ptree()});
  }
  return tree;
}

QuantizerSpec ParseQuantizer(Section s, std::optional<QuantizerKind> kind_hint = {}) {
  QuantizerKind kind;
  if (auto k = s.Get("kind")) {
    kind = ParseKind(*k);
  } else if (kind_hint) {
    kind = *kind_hint;
  } else {
    throw std::invalid_argument("config: " + s.Where("kind") + " is required");
  }
  if (kind == QuantizerKind::kHardRound) {
    throw std::invalid_argument("config: 'round' has no gradient and cannot be trained");
  }
  QuantizerSpec spec = QuantizerSpec::ReferenceDefaults(kind);
  if (auto v = s.Get("c")) spec.c = ParseNumber<double>(*v, s.Where("c"));
  if (auto v = s.Get("t0")) spec.t0 = ParseNumber<long>(*v, s.Where("t0"));
  if (auto v = s.Get("k")) spec.k = ParseNumber<double>(*v, s.Where("k"));
  if (auto v = s.Get("epsilon")) spec.epsilon = ParseNumber<double>(*v, s.Where("epsilon"));
  s.RejectUnknown();
  spec.Validate();
  return spec;
}

DatasetSpec ParseDataset(Section s, std::string name, const fs::path& base_dir) {
  DatasetSpec d;
  d.name = std::move(name);
  if (auto v = s.Get("source")) {
    if (*v == "synthetic") {
      d.source = ImageSource::kSynthetic;
    } else if (*v == "ppm") {
      d.source = ImageSource::kPpmDir;
    } else {
      throw std::invalid_argument("config: " + s.Where("source") + " must be synthetic or ppm");
    }
  }
  if (auto v = s.Get("count")) d.count = ParseNumber<std::size_t>(*v, s.Where("count"));
  if (auto v = s.Get("size")) d.size = ParseNumber<std::size_t>(*v, s.Where("size"));
  if (auto v = s.Get("seed")) d.seed = ParseNumber<std::uint64_t>(*v, s.Where("seed"));
  if (auto v = s.Get("dir")) {
    fs::path p(*v);
    d.dir = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  }
  if (d.source == ImageSource::kPpmDir && d.dir.empty()) {
    throw std::invalid_argument("config: " + s.Where("dir") + " is required for ppm datasets");
  }
  s.RejectUnknown();
  return d;
}

// Sections shared by experiment configs and manifests.
void ParseCommon(const pt::ptree& tree, ExperimentConfig& cfg, const fs::path& base_dir,
                 std::optional<bool>* single_key) {
  bool has_experiment = false;
  std::vector<DatasetSpec> tests;
  for (const auto& [name, child] : tree) {
    if (name == "experiment") {
      has_experiment = true;
      Section s(name, child);
      if (auto v = s.Get("name")) cfg.name = *v;
      if (auto v = s.Get("iterations")) cfg.iterations = ParseNumber<long>(*v, s.Where("iterations"));
      if (auto v = s.Get("batch")) cfg.batch = ParseNumber<std::size_t>(*v, s.Where("batch"));
      if (auto v = s.Get("patch")) cfg.patch = ParseNumber<std::size_t>(*v, s.Where("patch"));
      if (auto v = s.Get("latent_channels")) {
        cfg.latent_channels = ParseNumber<std::size_t>(*v, s.Where("latent_channels"));
      }
      if (auto v = s.Get("learning_rate")) {
        cfg.learning_rate = ParseNumber<double>(*v, s.Where("learning_rate"));
      }
      if (auto v = s.Get("lr_decay_fraction")) {
        cfg.lr_decay_fraction = ParseNumber<double>(*v, s.Where("lr_decay_fraction"));
      }
      if (auto v = s.Get("lr_decay_factor")) {
        cfg.lr_decay_factor = ParseNumber<double>(*v, s.Where("lr_decay_factor"));
      }
      if (auto v = s.Get("lambdas")) {
        cfg.lambdas.clear();
        for (const auto& item : SplitList(*v)) {
          cfg.lambdas.push_back(ParseNumber<double>(item, s.Where("lambdas")));
        }
      }
      if (auto v = s.Get("seeds")) {
        cfg.seeds.clear();
        for (const auto& item : SplitList(*v)) {
          cfg.seeds.push_back(ParseNumber<std::uint64_t>(item, s.Where("seeds")));
        }
      }
      if (auto v = s.Get("scale_schedule")) {
        cfg.scale_schedule = ParseBool(*v, s.Where("scale_schedule"));
      }
      if (auto v = s.Get("single")) {
        if (!single_key) throw std::invalid_argument("config: 'single' is not valid here");
        *single_key = ParseBool(*v, s.Where("single"));
      }
      if (auto v = s.Get("out")) cfg.out = *v;
      s.RejectUnknown();
    } else if (name == "train") {
      cfg.train = ParseDataset(Section(name, child), "train", base_dir);
    } else if (name.rfind("test:", 0) == 0) {
      std::string test_name = Trim(name.substr(5));
      if (test_name.empty()) throw std::invalid_argument("config: [test:] needs a name");
      tests.push_back(ParseDataset(Section(name, child), test_name, base_dir));
    }
  }
  if (!has_experiment) throw std::invalid_argument("config: missing [experiment] section");
  if (!tests.empty()) cfg.test = std::move(tests);
}

std::string SpecKey(const QuantizerSpec& s) {
  std::ostringstream os;
  os << KindName(s.kind);
  switch (s.kind) {
    case QuantizerKind::kSga:
    case QuantizerKind::kSra:
      os << ":c=" << Fmt(s.c) << ",t0=" << s.t0 << ",eps=" << Fmt(s.epsilon);
      break;
    case QuantizerKind::kSth:
      os << ":t0=" << s.t0;
      break;
    case QuantizerKind::kDsq:
      os << ":k=" << Fmt(s.k);
      break;
    default:
      break;
  }
  return os.str();
}

void WriteSpec(std::ostream& os, const char* section, const QuantizerSpec& s) {
  os << "[" << section << "]\n"
     << "kind = " << KindName(s.kind) << "\n"
     << "c = " << Fmt(s.c) << "\n"
     << "t0 = " << s.t0 << "\n"
     << "k = " << Fmt(s.k) << "\n"
     << "epsilon = " << Fmt(s.epsilon) << "\n\n";
}

void WriteDataset(std::ostream& os, const std::string& section, const DatasetSpec& d) {
  os << "[" << section << "]\n";
  if (d.source == ImageSource::kPpmDir) {
    os << "source = ppm\ndir = " << d.dir.string() << "\n\n";
  } else {
    os << "source = synthetic\ncount = " << d.count << "\nsize = " << d.size
       << "\nseed = " << d.seed << "\n\n";
  }
}

template <typename V>
std::string JoinList(const std::vector<V>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<V>) {
      out += Fmt(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

std::string ReadText(const fs::path& path) {
  const auto bytes = ReadFileBytes(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ImageSet DatasetSpec::Load() const {
  if (source == ImageSource::kPpmDir) return LoadPpmDir(dir);
  return SynthDataset(count, size, seed);
}

std::string ExperimentConfig::Label() const {
  return std::string(KindName(spec_ent.kind)) + "+" + std::string(KindName(spec_dec.kind));
}

QuantizerSpec ExperimentConfig::EffectiveEnt() const {
  return scale_schedule && iterations > 0 ? spec_ent.ScaledTo(iterations) : spec_ent;
}

QuantizerSpec ExperimentConfig::EffectiveDec() const {
  return scale_schedule && iterations > 0 ? spec_dec.ScaledTo(iterations) : spec_dec;
}

std::uint64_t ExperimentConfig::Hash() const {
  return HashString(SpecKey(EffectiveEnt()) + "|" + SpecKey(EffectiveDec()));
}

double ExperimentConfig::LearningRateAt(long iteration) const {
  const long decay_start =
      iterations - std::lround(lr_decay_fraction * static_cast<double>(iterations));
  return iteration >= decay_start && lr_decay_fraction > 0 ? learning_rate * lr_decay_factor
                                                           : learning_rate;
}

void ExperimentConfig::Validate() const {
  spec_ent.Validate();
  spec_dec.Validate();
  if (spec_ent.kind == QuantizerKind::kHardRound || spec_dec.kind == QuantizerKind::kHardRound) {
    throw std::invalid_argument("config: 'round' cannot be trained");
  }
  if ((spec_ent.kind == QuantizerKind::kSth || spec_dec.kind == QuantizerKind::kSth) &&
      spec_ent.kind != spec_dec.kind) {
    throw std::invalid_argument("config: sth can only be paired with itself, got " + Label());
  }
  if (single_path && !(spec_ent == spec_dec)) {
    throw std::invalid_argument("config: single path needs identical quantizers, got " +
                                Label());
  }
  if (lambdas.empty()) throw std::invalid_argument("config: lambdas must not be empty");
  for (double l : lambdas) {
    if (!(l > 0) || !std::isfinite(l)) {
      throw std::invalid_argument("config: lambdas must be positive, got " + ShortFmt(l));
    }
  }
  if (std::set<double>(lambdas.begin(), lambdas.end()).size() != lambdas.size()) {
    throw std::invalid_argument("config: duplicate lambda");
  }
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw std::invalid_argument("config: duplicate seed");
  }
  if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
  if (batch == 0) throw std::invalid_argument("config: batch must be > 0");
  if (patch == 0 || patch % kDownsample != 0) {
    throw std::invalid_argument("config: patch must be a positive multiple of 8");
  }
  if (train.source == ImageSource::kSynthetic && patch > train.size) {
    throw std::invalid_argument("config: patch larger than the synthetic training images");
  }
  if (latent_channels == 0) throw std::invalid_argument("config: latent_channels must be > 0");
  if (!(learning_rate > 0)) throw std::invalid_argument("config: learning_rate must be > 0");
  if (!(lr_decay_fraction >= 0 && lr_decay_fraction <= 1) || !(lr_decay_factor > 0)) {
    throw std::invalid_argument("config: lr_decay_fraction must lie in [0,1], factor > 0");
  }
  if (test.empty()) throw std::invalid_argument("config: at least one test set is required");
  std::set<std::string> names;
  for (const auto& t : test) {
    if (t.name.empty() || t.name.find_first_of("/,") != std::string::npos) {
      throw std::invalid_argument("config: test set name '" + t.name + "' is not usable");
    }
    if (!names.insert(t.name).second) {
      throw std::invalid_argument("config: duplicate test set '" + t.name + "'");
    }
  }
}

ExperimentConfig ParseConfig(const std::string& text, const fs::path& base_dir) {
  const pt::ptree tree = ReadIni(text);
  ExperimentConfig cfg;
  std::optional<bool> single;
  ParseCommon(tree, cfg, base_dir, &single);
  bool has_ent = false, has_dec = false;
  for (const auto& [name, child] : tree) {
    if (name == "ent") {
      cfg.spec_ent = ParseQuantizer(Section(name, child));
      has_ent = true;
    } else if (name == "dec") {
      cfg.spec_dec = ParseQuantizer(Section(name, child));
      has_dec = true;
    } else if (name != "experiment" && name != "train" && name.rfind("test:", 0) != 0) {
      throw std::invalid_argument("config: unknown section [" + name + "]");
    }
  }
  if (!has_ent) throw std::invalid_argument("config: missing [ent] section");
  if (!has_dec) cfg.spec_dec = cfg.spec_ent;
  cfg.single_path = single.value_or(!has_dec);
  if (cfg.name.empty()) cfg.name = cfg.Label();
  cfg.Validate();
  return cfg;
}

ExperimentConfig LoadConfig(const fs::path& path) {
  return ParseConfig(ReadText(path), path.parent_path());
}

std::string FormatConfig(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[experiment]\n"
     << "name = " << cfg.name << "\n"
     << "single = " << (cfg.single_path ? "true" : "false") << "\n"
     << "iterations = " << cfg.iterations << "\n"
     << "batch = " << cfg.batch << "\n"
     << "patch = " << cfg.patch << "\n"
     << "latent_channels = " << cfg.latent_channels << "\n"
     << "learning_rate = " << Fmt(cfg.learning_rate) << "\n"
     << "lr_decay_fraction = " << Fmt(cfg.lr_decay_fraction) << "\n"
     << "lr_decay_factor = " << Fmt(cfg.lr_decay_factor) << "\n"
     << "lambdas = " << JoinList(cfg.lambdas) << "\n"
     << "seeds = " << JoinList(cfg.seeds) << "\n"
     << "scale_schedule = " << (cfg.scale_schedule ? "true" : "false") << "\n"
     << "out = " << cfg.out.string() << "\n\n";
  WriteSpec(os, "ent", cfg.spec_ent);
  WriteSpec(os, "dec", cfg.spec_dec);
  WriteDataset(os, "train", cfg.train);
  for (const auto& t : cfg.test) WriteDataset(os, "test:" + t.name, t);
  return os.str();
}

// ---------------------------------------------------------------------------
// Matrix

std::string ConfigPair::Label() const {
  return std::string(KindName(ent)) + "+" + std::string(KindName(dec));
}

std::vector<ConfigPair> EnumerateMatrix(std::span<const QuantizerKind> kinds) {
  std::set<QuantizerKind> seen;
  for (auto k : kinds) {
    if (k == QuantizerKind::kHardRound) {
      throw std::invalid_argument("enumerate_matrix: 'round' is not an approximation");
    }
    if (!seen.insert(k).second) {
      throw std::invalid_argument("enumerate_matrix: duplicate kind " + std::string(KindName(k)));
    }
  }
  std::vector<ConfigPair> out;
  for (auto k : kinds) out.push_back({k, k});
  for (auto e : kinds) {
    if (e == QuantizerKind::kSth) continue;
    for (auto d : kinds) {
      if (d == QuantizerKind::kSth || d == e) continue;
      out.push_back({e, d});
    }
  }
  return out;
}

std::vector<ExperimentConfig> Manifest::Expand() const {
  std::vector<ExperimentConfig> out;
  for (const auto& pair : EnumerateMatrix(kinds)) {
    ExperimentConfig cfg = base;
    auto spec_for = [&](QuantizerKind k) {
      auto it = overrides.find(k);
      return it != overrides.end() ? it->second : QuantizerSpec::ReferenceDefaults(k);
    };
    cfg.spec_ent = spec_for(pair.ent);
    cfg.spec_dec = spec_for(pair.dec);
    cfg.single_path = pair.ent == pair.dec;
    cfg.name = pair.Label();
    cfg.out = base.out / cfg.name;
    cfg.Validate();
    out.push_back(std::move(cfg));
  }
  return out;
}

Manifest ParseManifest(const std::string& text, const fs::path& base_dir) {
  const pt::ptree tree = ReadIni(text);
  Manifest m;
  ParseCommon(tree, m.base, base_dir, nullptr);
  bool has_matrix = false;
  for (const auto& [name, child] : tree) {
    if (name == "matrix") {
      Section s(name, child);
      auto kinds = s.Get("kinds");
      if (!kinds) throw std::invalid_argument("manifest: [matrix] kinds is required");
      for (const auto& item : SplitList(*kinds)) m.kinds.push_back(ParseKind(item));
      s.RejectUnknown();
      has_matrix = true;
    } else if (name.rfind("kind:", 0) == 0) {
      const QuantizerKind kind = ParseKind(Trim(name.substr(5)));
      m.overrides[kind] = ParseQuantizer(Section(name, child), kind);
      if (m.overrides[kind].kind != kind) {
        throw std::invalid_argument("manifest: [" + name + "] names a different kind");
      }
    } else if (name != "experiment" && name != "train" && name.rfind("test:", 0) != 0) {
      throw std::invalid_argument("manifest: unknown section [" + name + "]");
    }
  }
  if (!has_matrix || m.kinds.empty()) {
    throw std::invalid_argument("manifest: [matrix] must list at least one kind");
  }
  // Surfaces duplicate kinds and bad settings before any training starts.
  m.Expand();
  return m;
}

Manifest LoadManifest(const fs::path& path) {
  return ParseManifest(ReadText(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Training

CounterRng InitStream(std::uint64_t seed) { return CounterRng::Derive({kInitTag, seed}); }

CounterRng CropStream(std::uint64_t seed, long iteration) {
  return CounterRng::Derive({kCropTag, seed, static_cast<std::uint64_t>(iteration)});
}

CounterRng NoiseStream(std::uint64_t config_hash, double lambda, std::uint64_t seed,
                       long iteration) {
  return CounterRng::Derive({config_hash, std::bit_cast<std::uint64_t>(lambda), seed,
                             static_cast<std::uint64_t>(iteration)});
}

TrainLog TrainCodec(CodecParams<float>& params, const ImageSet& train,
                    const ExperimentConfig& cfg, double lambda, std::uint64_t seed,
                    std::ostream* progress) {
  const QuantizerSpec ent = cfg.EffectiveEnt();
  const QuantizerSpec dec = cfg.EffectiveDec();
  const std::uint64_t hash = cfg.Hash();
  std::vector<Tensor<float>> parameters = params.Parameters();
  AdamState<float> adam;
  TrainLog log;
  log.total.reserve(static_cast<std::size_t>(cfg.iterations));
  const long report = std::max(1L, cfg.iterations / 10);
  for (long t = 0; t < cfg.iterations; ++t) {
    CounterRng crop = CropStream(seed, t);
    const Tensor<float> x = RandomCrop(train, cfg.batch, cfg.patch, crop);
    QuantContext ctx{t, QuantMode::kTrain, NoiseStream(hash, lambda, seed, t)};
    RDLossParts<float> parts = cfg.single_path
                                   ? ForwardTrainSingle(x, params, ent, ctx, lambda)
                                   : ForwardTrain(x, params, ent, dec, ctx, lambda);
    const double total = parts.total.item();
    if (!std::isfinite(total)) {
      throw NonFiniteLoss(t, "non-finite loss at iteration " + std::to_string(t));
    }
    log.total.push_back(total);
    log.rate.push_back(parts.rate.item());
    log.distortion.push_back(parts.distortion.item());
    parts.total.Backward();
    adam.learning_rate = cfg.LearningRateAt(t);
    AdamStep(std::span<Tensor<float>>(parameters), adam);
    if (progress && ((t + 1) % report == 0 || t + 1 == cfg.iterations)) {
      *progress << cfg.name << " lambda=" << ShortFmt(lambda) << " seed=" << seed << " iter "
                << (t + 1) << "/" << cfg.iterations << " loss " << total << "\n";
    }
  }
  return log;
}

std::vector<double> BlockMeans(std::span<const double> values, std::size_t window) {
  if (window == 0) throw std::invalid_argument("block_means: window must be > 0");
  std::vector<double> out;
  for (std::size_t start = 0; start + window <= values.size(); start += window) {
    out.push_back(std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(start),
                                  values.begin() + static_cast<std::ptrdiff_t>(start + window),
                                  0.0) /
                  static_cast<double>(window));
  }
  return out;
}

bool SmoothedLossDecreased(std::span<const double> values, std::size_t window) {
  const auto means = BlockMeans(values, window);
  return means.size() >= 2 && means.back() < means.front();
}

EvalPoint EvaluateCodec(const CodecParams<float>& params, const ImageSet& images) {
  if (images.images.empty()) throw std::invalid_argument("evaluate: empty image set");
  const std::vector<CdfTable> tables = BuildCdfTables(params.prior);
  std::vector<Bitstream> streams;
  std::vector<ImageDims> dims;
  std::vector<double> estimated;
  double psnr = 0, mse = 0;
  for (const Image& image : images.images) {
    const Tensor<float> x = ImageToTensor(image);
    const EvalOutput e = ForwardEval(x, params);
    const Image decoded = TensorToImage(e.reconstruction);
    psnr += Psnr(image, decoded);
    mse += Mse255(image, decoded);
    streams.push_back(EncodeSymbols(LatentsToSymbols(e.latents), tables,
                                    static_cast<std::uint32_t>(image.height),
                                    static_cast<std::uint32_t>(image.width)));
    dims.push_back({image.height, image.width});
    estimated.push_back(e.estimated_bits);
  }
  const BppReport bpp = AggregateBpp(streams, dims, estimated);
  EvalPoint p;
  p.bpp_estimated = bpp.estimated;
  p.bpp_payload = bpp.payload;
  p.bpp_total = bpp.actual;
  p.psnr = psnr / static_cast<double>(images.images.size());
  p.mse = mse / static_cast<double>(images.images.size());
  return p;
}

// ---------------------------------------------------------------------------
// Runner

std::string CurveLabel(const std::string& config, const std::string& dataset,
                       std::uint64_t seed) {
  return config + "/" + dataset + "/" + std::to_string(seed);
}

LabeledCurve ParseCurveLabel(const RDCurve& curve) {
  const auto a = curve.label.find('/');
  const auto b = curve.label.rfind('/');
  if (a == std::string::npos || a == b) {
    throw std::invalid_argument("curve label '" + curve.label + "' is not config/dataset/seed");
  }
  LabeledCurve out;
  out.config = curve.label.substr(0, a);
  out.dataset = curve.label.substr(a + 1, b - a - 1);
  out.seed = ParseNumber<std::uint64_t>(curve.label.substr(b + 1), "curve seed");
  out.curve = curve;
  return out;
}

bool ExperimentResult::all_ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
}

bool WriteIfChanged(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) {
    const auto bytes = ReadFileBytes(path);
    if (bytes.size() == content.size() && std::equal(bytes.begin(), bytes.end(), content.begin())) {
      return false;
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  WriteFileBytes(path, std::vector<std::uint8_t>(content.begin(), content.end()));
  return true;
}

namespace {

constexpr char kResultHeader[] = "dataset,bpp_estimated,bpp_payload,bpp_total,psnr,mse";

std::string FormatResult(const std::map<std::string, EvalPoint>& points,
                         const std::vector<DatasetSpec>& order) {
  std::ostringstream os;
  os << kResultHeader << "\n" << std::setprecision(17);
  for (const auto& d : order) {
    const EvalPoint& p = points.at(d.name);
    os << d.name << ',' << p.bpp_estimated << ',' << p.bpp_payload << ',' << p.bpp_total << ','
       << p.psnr << ',' << p.mse << '\n';
  }
  return os.str();
}

std::map<std::string, EvalPoint> ParseResult(const std::string& text, const fs::path& path) {
  std::istringstream in(text);
  std::string line;
  std::map<std::string, EvalPoint> out;
  if (!std::getline(in, line) || line != kResultHeader) {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, a, b, c, d, e;
    if (!std::getline(ls, name, ',') || !std::getline(ls, a, ',') || !std::getline(ls, b, ',') ||
        !std::getline(ls, c, ',') || !std::getline(ls, d, ',') || !std::getline(ls, e)) {
      throw std::runtime_error(path.string() + ": malformed row");
    }
    out[name] = EvalPoint{ParseNumber<double>(a, "bpp"), ParseNumber<double>(b, "bpp"),
                          ParseNumber<double>(c, "bpp"), ParseNumber<double>(d, "psnr"),
                          ParseNumber<double>(e, "mse")};
  }
  return out;
}

std::string FormatLoss(const TrainLog& log) {
  std::ostringstream os;
  os << "iteration,total,rate,distortion\n" << std::setprecision(9);
  for (std::size_t i = 0; i < log.total.size(); ++i) {
    os << i << ',' << log.total[i] << ',' << log.rate[i] << ',' << log.distortion[i] << '\n';
  }
  return os.str();
}

fs::path CellDir(const ExperimentConfig& cfg, double lambda, std::uint64_t seed) {
  return cfg.out / ("seed" + std::to_string(seed)) / ("lambda" + ShortFmt(lambda));
}

CellResult RunCell(const ExperimentConfig& cfg, double lambda, std::uint64_t seed,
                   const ImageSet& train, const std::vector<ImageSet>& tests, bool resume,
                   std::ostream* progress) {
  CellResult cell;
  cell.lambda = lambda;
  cell.seed = seed;
  const fs::path dir = CellDir(cfg, lambda, seed);
  const fs::path result_path = dir / "result.csv";
  const fs::path failed_path = dir / "failed.txt";
  if (resume && fs::exists(result_path)) {
    cell.points = ParseResult(ReadText(result_path), result_path);
    bool complete = true;
    for (const auto& t : cfg.test) complete = complete && cell.points.count(t.name);
    if (complete) {
      cell.ok = true;
      cell.resumed = true;
      return cell;
    }
    cell.points.clear();
  }
  if (resume && fs::exists(failed_path)) {
    cell.resumed = true;
    cell.error = Trim(ReadText(failed_path));
    return cell;
  }
  fs::create_directories(dir);
  fs::remove(result_path);
  fs::remove(failed_path);
  try {
    CounterRng init = InitStream(seed);
    CodecParams<float> params = CodecParams<float>::Init(init, cfg.latent_channels);
    const TrainLog log = TrainCodec(params, train, cfg, lambda, seed, progress);
    SaveCheckpoint(dir / "checkpoint.qlt", CodecToNamed(params));
    WriteIfChanged(dir / "loss.csv", FormatLoss(log));
    for (std::size_t i = 0; i < tests.size(); ++i) {
      cell.points[cfg.test[i].name] = EvaluateCodec(params, tests[i]);
    }
    WriteIfChanged(result_path, FormatResult(cell.points, cfg.test));
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.points.clear();
    cell.error = e.what();
    WriteIfChanged(failed_path, cell.error + "\n");
  }
  return cell;
}

}  // namespace

ExperimentResult RunExperiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.Validate();
  const ImageSet train = cfg.train.Load();
  std::vector<ImageSet> tests;
  for (const auto& t : cfg.test) tests.push_back(t.Load());
  fs::create_directories(cfg.out);
  WriteIfChanged(cfg.out / "config.ini", FormatConfig(cfg));

  struct Job {
    double lambda;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto seed : cfg.seeds) {
    for (double lambda : cfg.lambdas) jobs.push_back({lambda, seed});
  }

  ExperimentResult result;
  result.label = cfg.name;
  result.cells.resize(jobs.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      std::ostringstream progress;
      result.cells[i] = RunCell(cfg, jobs[i].lambda, jobs[i].seed, train, tests, options.resume,
                                options.log ? &progress : nullptr);
      if (options.log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        const CellResult& c = result.cells[i];
        *options.log << progress.str() << cfg.name << " lambda=" << ShortFmt(c.lambda)
                     << " seed=" << c.seed << ": "
                     << (c.ok ? (c.resumed ? "ok (resumed)" : "ok") : "FAILED: " + c.error)
                     << "\n";
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.parallel, 1, jobs.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<RDCurve> csv;
  for (auto seed : cfg.seeds) {
    for (const auto& t : cfg.test) {
      LabeledCurve lc;
      lc.config = cfg.name;
      lc.dataset = t.name;
      lc.seed = seed;
      lc.curve.label = CurveLabel(cfg.name, t.name, seed);
      for (const auto& c : result.cells) {
        if (c.seed == seed && c.ok) {
          const EvalPoint& p = c.points.at(t.name);
          lc.curve.points.push_back({p.bpp_estimated, p.psnr});
        }
      }
      csv.push_back(lc.curve);
      result.curves.push_back(std::move(lc));
    }
  }
  WriteIfChanged(cfg.out / "curves.csv", CurvesToCsv(csv));
  return result;
}

// ---------------------------------------------------------------------------
// Tables

std::pair<std::optional<std::size_t>, std::optional<std::size_t>> ResultTable::Ranking(
    std::size_t col) const {
  std::vector<std::pair<double, std::size_t>> values;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = col < datasets.size() ? rows[r].bd.at(col) : rows[r].average;
    if (v) values.emplace_back(*v, r);
  }
  std::stable_sort(values.begin(), values.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::pair<std::optional<std::size_t>, std::optional<std::size_t>> out;
  if (!values.empty()) out.first = values[0].second;
  if (values.size() > 1) out.second = values[1].second;
  return out;
}

const ResultRow* ResultTable::Find(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return &r;
  }
  return nullptr;
}

std::string ResultTable::ToCsv() const {
  std::ostringstream os;
  os << "config";
  for (const auto& d : datasets) os << ',' << d;
  os << ",average,flag\n" << std::fixed << std::setprecision(4);
  const auto [best, second] = Ranking(datasets.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << rows[r].label;
    auto put = [&](const std::optional<double>& v) {
      os << ',';
      if (v) {
        os << *v;
      } else {
        os << "n/a";
      }
    };
    for (const auto& v : rows[r].bd) put(v);
    put(rows[r].average);
    os << ',' << (best == r ? "best" : second == r ? "second" : "") << '\n';
  }
  return os.str();
}

ResultTable ResultTable::FromCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("table csv: empty");
  std::vector<std::string> header;
  {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) header.push_back(Trim(cell));
  }
  if (header.size() < 4 || header.front() != "config" || header[header.size() - 2] != "average" ||
      header.back() != "flag") {
    throw std::runtime_error("table csv: header must be config,<datasets>,average,flag");
  }
  ResultTable table;
  table.datasets.assign(header.begin() + 1, header.end() - 2);
  auto value = [](const std::string& s) -> std::optional<double> {
    if (s == "n/a") return std::nullopt;
    return ParseNumber<double>(s, "table value");
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(Trim(line.substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != header.size()) {
      throw std::runtime_error("table csv: row '" + cells.front() + "' has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(header.size()));
    }
    ResultRow row;
    row.label = cells.front();
    for (std::size_t i = 1; i + 2 < cells.size(); ++i) row.bd.push_back(value(cells[i]));
    row.average = value(cells[cells.size() - 2]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string ResultTable::Render() const {
  std::vector<std::string> columns = datasets;
  columns.push_back("average");
  std::size_t label_width = std::string("config").size();
  for (const auto& r : rows) label_width = std::max(label_width, r.label.size());
  std::vector<std::size_t> widths;
  for (const auto& c : columns) widths.push_back(std::max<std::size_t>(c.size(), 9));
  std::vector<std::pair<std::optional<std::size_t>, std::optional<std::size_t>>> ranks;
  for (std::size_t c = 0; c < columns.size(); ++c) ranks.push_back(Ranking(c));

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_width)) << "config";
  for (std::size_t c = 0; c < columns.size(); ++c) {
    os << "  " << std::right << std::setw(static_cast<int>(widths[c])) << columns[c];
  }
  os << "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(label_width)) << rows[r].label;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& v = c < datasets.size() ? rows[r].bd[c] : rows[r].average;
      std::string cell = "n/a";
      if (v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", *v);
        cell = buf;
      }
      cell += ranks[c].first == r ? "*" : ranks[c].second == r ? "+" : " ";
      os << "  " << std::right << std::setw(static_cast<int>(widths[c])) << cell;
    }
    os << "\n";
  }
  os << "(* best, + second best; BD rate in percent against " << anchor << ")\n";
  return os.str();
}

ResultTable EmitTable(std::span<const LabeledCurve> curves, const std::string& anchor) {
  ResultTable table;
  table.anchor = anchor;
  std::vector<std::string> configs;
  std::map<std::tuple<std::string, std::string, std::uint64_t>, const RDCurve*> index;
  for (const auto& c : curves) {
    if (std::find(configs.begin(), configs.end(), c.config) == configs.end()) {
      configs.push_back(c.config);
    }
    if (std::find(table.datasets.begin(), table.datasets.end(), c.dataset) ==
        table.datasets.end()) {
      table.datasets.push_back(c.dataset);
    }
    if (!index.emplace(std::make_tuple(c.config, c.dataset, c.seed), &c.curve).second) {
      throw std::invalid_argument("emit_table: duplicate curve " +
                                  CurveLabel(c.config, c.dataset, c.seed));
    }
  }
  if (std::find(configs.begin(), configs.end(), anchor) == configs.end()) {
    throw std::invalid_argument("emit_table: anchor curve '" + anchor + "' is missing");
  }
  for (const auto& config : configs) {
    ResultRow row;
    row.label = config;
    bool all = true;
    double sum = 0;
    for (const auto& dataset : table.datasets) {
      double acc = 0;
      std::size_t paired = 0;
      bool failed = false;
      for (const auto& [key, anchor_curve] : index) {
        if (std::get<0>(key) != anchor || std::get<1>(key) != dataset) continue;
        auto it = index.find(std::make_tuple(config, dataset, std::get<2>(key)));
        if (it == index.end()) continue;
        ++paired;
        try {
          acc += BdRate(*anchor_curve, *it->second);
        } catch (const std::exception&) {
          failed = true;
        }
      }
      std::optional<double> bd;
      if (paired > 0 && !failed) bd = acc / static_cast<double>(paired);
      row.bd.push_back(bd);
      if (bd) {
        sum += *bd;
      } else {
        all = false;
      }
    }
    if (all && !table.datasets.empty()) {
      row.average = sum / static_cast<double>(table.datasets.size());
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ResultTable AverageTables(std::span<const ResultTable> tables) {
  if (tables.empty()) throw std::invalid_argument("average_tables: no tables");
  ResultTable out;
  out.anchor = tables.front().anchor;
  for (const auto& t : tables) {
    if (t.anchor != out.anchor) {
      throw std::invalid_argument("average_tables: tables use different anchors");
    }
  }
  for (const auto& d : tables.front().datasets) {
    bool shared = std::all_of(tables.begin(), tables.end(), [&](const ResultTable& t) {
      return std::find(t.datasets.begin(), t.datasets.end(), d) != t.datasets.end();
    });
    if (shared) out.datasets.push_back(d);
  }
  for (const auto& first_row : tables.front().rows) {
    std::vector<const ResultRow*> matches;
    std::vector<const ResultTable*> owners;
    for (const auto& t : tables) {
      if (const ResultRow* r = t.Find(first_row.label)) {
        matches.push_back(r);
        owners.push_back(&t);
      }
    }
    if (matches.size() != tables.size()) continue;
    ResultRow row;
    row.label = first_row.label;
    bool all = true;
    double sum = 0;
    for (const auto& d : out.datasets) {
      double acc = 0;
      bool present = true;
      for (std::size_t i = 0; i < matches.size(); ++i) {
        const auto& ds = owners[i]->datasets;
        const auto col = static_cast<std::size_t>(std::find(ds.begin(), ds.end(), d) - ds.begin());
        const auto& v = matches[i]->bd.at(col);
        if (!v) {
          present = false;
          break;
        }
        acc += *v;
      }
      std::optional<double> bd;
      if (present) bd = acc / static_cast<double>(matches.size());
      row.bd.push_back(bd);
      if (bd) {
        sum += *bd;
      } else {
        all = false;
      }
    }
    if (all && !out.datasets.empty()) row.average = sum / static_cast<double>(out.datasets.size());
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace qlab
