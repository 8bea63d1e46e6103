// src/trainer.cc

// Copyright 2026  The fasda-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fasda/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fasda/ops.h"

namespace fasda {

namespace {

std::size_t ParseCount(const std::string &key, const std::string &v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    x = std::stoull(v, &pos);
  } catch (const std::exception &) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
  return static_cast<std::size_t>(x);
}

double ParseReal(const std::string &key, const std::string &v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception &) {
    pos = std::string::npos;
  }
  if (pos != v.size() || !std::isfinite(x))
    throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
  return x;
}

bool ParseBool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

std::string RealString(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

struct ConfigField {
  const char *key;
  std::function<std::string(const TrainConfig &)> get;
  std::function<void(TrainConfig &, const std::string &)> set;
};

#define FASDA_COUNT_FIELD(name, member)                                               \
  ConfigField {                                                                       \
    name, [](const TrainConfig &c) { return std::to_string(c.member); },              \
        [](TrainConfig &c, const std::string &v) { c.member = ParseCount(name, v); } \
  }
#define FASDA_REAL_FIELD(name, member)                                               \
  ConfigField {                                                                      \
    name, [](const TrainConfig &c) { return RealString(c.member); },                 \
        [](TrainConfig &c, const std::string &v) { c.member = ParseReal(name, v); } \
  }

const std::vector<ConfigField> &Fields() {
  static const std::vector<ConfigField> fields = {
      FASDA_COUNT_FIELD("adversarial_rounds", adversarial_rounds),
      {"alphabet", [](const TrainConfig &c) { return c.alphabet; },
       [](TrainConfig &c, const std::string &v) { c.alphabet = v; }},
      FASDA_COUNT_FIELD("attention_dim", decoder.attention_dim),
      FASDA_COUNT_FIELD("batch_size", batch_size),
      FASDA_COUNT_FIELD("column_stride", encoder.column_stride),
      FASDA_COUNT_FIELD("conv1_channels", encoder.conv1_channels),
      FASDA_COUNT_FIELD("conv2_channels", encoder.conv2_channels),
      FASDA_COUNT_FIELD("d_steps_per_round", d_steps_per_round),
      FASDA_COUNT_FIELD("embed_dim", decoder.embed_dim),
      FASDA_COUNT_FIELD("eta", eta),
      {"feature", [](const TrainConfig &c) { return std::string(FeatureVariantName(c.feature)); },
       [](TrainConfig &c, const std::string &v) { c.feature = ParseFeatureVariant(v); }},
      FASDA_COUNT_FIELD("feature_dim", encoder.feature_dim),
      FASDA_COUNT_FIELD("finetune_steps", finetune_steps),
      FASDA_COUNT_FIELD("g_steps_per_round", g_steps_per_round),
      FASDA_REAL_FIELD("gamma", gamma),
      FASDA_COUNT_FIELD("glyph_width", geometry.glyph_width),
      FASDA_COUNT_FIELD("height", geometry.height),
      FASDA_COUNT_FIELD("hidden", decoder.hidden),
      {"ia_enabled", [](const TrainConfig &c) { return std::string(c.ia_enabled ? "true" : "false"); },
       [](TrainConfig &c, const std::string &v) { c.ia_enabled = ParseBool("ia_enabled", v); }},
      FASDA_REAL_FIELD("lambda", lambda),
      FASDA_REAL_FIELD("lr_adam", lr_adam),
      FASDA_COUNT_FIELD("max_len", geometry.max_len),
      FASDA_COUNT_FIELD("mcd_hidden1", mcd.hidden1),
      FASDA_COUNT_FIELD("mcd_hidden2", mcd.hidden2),
      FASDA_COUNT_FIELD("mcd_pretrain_steps", mcd_pretrain_steps),
      FASDA_COUNT_FIELD("pairs_per_group", pairs_per_group),
      FASDA_REAL_FIELD("pretrain_lr", pretrain_lr),
      {"pretrain_optimizer", [](const TrainConfig &c) { return std::string(OptimizerName(c.pretrain_optimizer)); },
       [](TrainConfig &c, const std::string &v) { c.pretrain_optimizer = ParseOptimizer(v); }},
      FASDA_COUNT_FIELD("pretrain_steps", pretrain_steps),
      {"recurrent", [](const TrainConfig &c) { return std::string(c.encoder.recurrent ? "true" : "false"); },
       [](TrainConfig &c, const std::string &v) { c.encoder.recurrent = ParseBool("recurrent", v); }},
      {"seed", [](const TrainConfig &c) { return std::to_string(c.seed); },
       [](TrainConfig &c, const std::string &v) { c.seed = ParseCount("seed", v); }},
      FASDA_COUNT_FIELD("source_target_ratio", source_target_ratio),
  };
  return fields;
}

#undef FASDA_COUNT_FIELD
#undef FASDA_REAL_FIELD

std::string Trim(const std::string &s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::Validate() const {
  auto fail = [](const std::string &key, const std::string &why) {
    throw std::invalid_argument("config: " + key + " " + why);
  };
  if (!(gamma >= 0)) fail("gamma", "must be >= 0");
  if (!(lambda >= 0 && lambda <= 1)) fail("lambda", "must lie in [0, 1]");
  if (eta < 1) fail("eta", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (pairs_per_group < 1) fail("pairs_per_group", "must be >= 1");
  if (source_target_ratio < 1) fail("source_target_ratio", "must be >= 1");
  if (d_steps_per_round < 1) fail("d_steps_per_round", "must be >= 1");
  if (g_steps_per_round < 1) fail("g_steps_per_round", "must be >= 1");
  if (!(lr_adam > 0)) fail("lr_adam", "must be > 0");
  if (!(pretrain_lr > 0)) fail("pretrain_lr", "must be > 0");
  if (alphabet.empty()) fail("alphabet", "must be non-empty");
  if (geometry.height < 4 || geometry.glyph_width < 1 || geometry.max_len < 1)
    fail("geometry", "must have height >= 4, glyph_width >= 1, max_len >= 1");
  if (encoder.column_stride < 1 || encoder.feature_dim < 1 || encoder.conv1_channels < 1 ||
      encoder.conv2_channels < 1)
    fail("encoder", "sizes must be positive");
  if (decoder.hidden < 1 || decoder.attention_dim < 1 || decoder.embed_dim < 1)
    fail("decoder", "sizes must be positive");
  if (mcd.hidden1 < 1 || mcd.hidden2 < 1) fail("mcd", "hidden sizes must be positive");
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const ConfigField &f : Fields()) keys.emplace_back(f.key);
  return keys;
}

std::string SerializeConfig(const TrainConfig &config) {
  std::string out;
  for (const ConfigField &f : Fields()) out += std::string(f.key) + "=" + f.get(config) + "\n";
  return out;
}

void SetConfigValue(TrainConfig &config, const std::string &key, const std::string &value) {
  for (const ConfigField &f : Fields())
    if (key == f.key) {
      f.set(config, value);
      return;
    }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig ParseConfig(const std::string &text, TrainConfig base) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = Trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    try {
      SetConfigValue(base, Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument &e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

BatchComposition MixedBatch(std::size_t batch_size, std::size_t ratio) {
  if (batch_size < 2) throw std::invalid_argument("mixed batch: batch_size must be >= 2");
  std::size_t target = std::max<std::size_t>(1, batch_size / (ratio + 1));
  return {batch_size - target, target};
}

std::vector<std::size_t> DrawIndices(std::size_t n, std::size_t count, Rng &rng) {
  if (n == 0) throw std::invalid_argument("draw indices: empty dataset");
  std::vector<std::size_t> out;
  out.reserve(count);
  std::vector<std::size_t> perm(n);
  while (out.size() < count) {
    std::size_t take = std::min(n, count - out.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < take; ++i) std::swap(perm[i], perm[i + rng.Below(n - i)]);
    out.insert(out.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return out;
}

FinetuneMode ParseFinetuneMode(const std::string &name) {
  if (name == "t" || name == "T") return FinetuneMode::kTargetOnly;
  if (name == "s+t" || name == "S+T" || name == "st") return FinetuneMode::kSourceAndTarget;
  throw std::invalid_argument("unknown finetune mode '" + name + "' (expected t or s+t)");
}

// ---------------------------------------------------------------------------
// Model

Model Model::Create(const TrainConfig &config, Rng &rng) {
  Model m;
  m.alphabet = Alphabet(config.alphabet);
  m.encoder = Encoder(config.encoder, config.geometry, rng);
  m.decoder = AttentionDecoder(config.decoder, config.encoder.feature_dim,
                               m.alphabet.num_classes(), rng);
  return m;
}

ParamSet Model::GeneratorParams() const {
  ParamSet out;
  out.Merge("encoder", encoder.params());
  out.Merge("decoder", decoder.params());
  return out;
}

ParamSet Model::AllParams() const {
  ParamSet out = GeneratorParams();
  if (mcd) out.Merge("mcd", mcd->params());
  return out;
}

std::size_t Model::PairDim(FeatureVariant variant) const {
  return variant == FeatureVariant::kContext ? encoder.config().feature_dim
                                             : decoder.config().hidden;
}

DecodeTrace Model::Forward(const std::vector<const Sample *> &batch, const IAConfig &ia) const {
  std::vector<const Image *> images;
  std::vector<std::vector<std::size_t>> labels;
  images.reserve(batch.size());
  labels.reserve(batch.size());
  for (const Sample *s : batch) {
    images.push_back(&s->image);
    labels.push_back(s->label);
  }
  Tensor seq = encoder.Encode(std::span<const Image *const>(images));
  return decoder.TeacherForced(seq, labels, ia);
}

std::vector<std::vector<std::size_t>> Model::Predict(const std::vector<const Sample *> &samples,
                                                     const IAConfig &ia, std::size_t max_steps,
                                                     std::size_t chunk) const {
  NoGradGuard no_grad;
  std::vector<std::vector<std::size_t>> out;
  out.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    std::size_t end = std::min(samples.size(), begin + chunk);
    std::vector<const Image *> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(&samples[i]->image);
    Tensor seq = encoder.Encode(std::span<const Image *const>(images));
    auto preds = decoder.Greedy(seq, ia, max_steps).Predictions();
    for (auto &p : preds) out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

OptimizerConfig AdamConfig(const TrainConfig &c) {
  OptimizerConfig o;
  o.kind = OptimizerKind::kAdam;
  o.lr = c.lr_adam;
  return o;
}

OptimizerConfig PretrainConfig(const TrainConfig &c) {
  OptimizerConfig o;
  o.kind = c.pretrain_optimizer;
  o.lr = c.pretrain_lr;
  return o;
}

}  // namespace

Trainer::Trainer(TrainConfig config)
    : config_(std::move(config)),
      pretrain_opt_(PretrainConfig(config_)),
      generator_opt_(AdamConfig(config_)),
      mcd_opt_(AdamConfig(config_)),
      batch_rng_(MixSeed(config_.seed, 1)),
      aux_rng_(MixSeed(config_.seed, 2)) {
  config_.Validate();
  Rng init(MixSeed(config_.seed, 0));
  model_ = Model::Create(config_, init);
}

void Trainer::Reconfigure(const TrainConfig &config) {
  config.Validate();
  auto arch = [](const TrainConfig &c) {
    std::ostringstream os;
    os << c.alphabet << '|' << c.geometry.height << '|' << c.geometry.glyph_width << '|'
       << c.geometry.max_len << '|' << c.encoder.conv1_channels << '|' << c.encoder.conv2_channels
       << '|' << c.encoder.feature_dim << '|' << c.encoder.column_stride << '|'
       << c.encoder.recurrent << '|' << c.decoder.hidden << '|' << c.decoder.attention_dim << '|'
       << c.decoder.embed_dim;
    return os.str();
  };
  if (arch(config) != arch(config_))
    throw std::invalid_argument("reconfigure: network architecture settings cannot change");
  bool mcd_shape_changed = config.mcd.hidden1 != config_.mcd.hidden1 ||
                           config.mcd.hidden2 != config_.mcd.hidden2;
  config_ = config;
  if (pretrain_opt_.steps() == 0) pretrain_opt_ = Optimizer(PretrainConfig(config_));
  if (generator_opt_.steps() == 0) generator_opt_ = Optimizer(AdamConfig(config_));
  if (mcd_shape_changed && model_.mcd) {
    model_.mcd.reset();
    mcd_opt_ = Optimizer(AdamConfig(config_));
  } else if (mcd_opt_.steps() == 0) {
    mcd_opt_ = Optimizer(AdamConfig(config_));
  }
}

void Trainer::EnsureMcd() {
  std::size_t dim = model_.PairDim(config_.feature);
  if (model_.mcd && model_.mcd->pair_dim() == dim) return;
  Rng init(MixSeed(config_.seed, 3 + static_cast<std::uint64_t>(config_.feature)));
  model_.mcd = Discriminator(config_.mcd, dim, init);
  mcd_opt_ = Optimizer(AdamConfig(config_));
}

void Trainer::CheckGeometry(const Dataset &ds) const {
  if (ds.samples.empty()) throw DataError("dataset '" + ds.domain + "' is empty");
  for (const Sample &s : ds.samples) {
    if (s.image.height != config_.geometry.height || s.image.width != config_.geometry.width())
      throw DataError("dataset '" + ds.domain + "': image " + s.id + " is " +
                      std::to_string(s.image.height) + "x" + std::to_string(s.image.width) +
                      ", model expects " + std::to_string(config_.geometry.height) + "x" +
                      std::to_string(config_.geometry.width()));
    for (std::size_t c : s.label)
      if (c >= model_.alphabet.size())
        throw DataError("dataset '" + ds.domain + "': sample " + s.id +
                        " has a label outside the model alphabet");
  }
}

void Trainer::Log(const std::string &phase, const std::string &loss, double value) {
  metrics_.push_back({step_, phase, loss, value});
}

Trainer::Batch Trainer::DrawSingle(const Dataset &ds, std::size_t count, Rng &rng) const {
  Batch b;
  b.ids = DrawIndices(ds.samples.size(), count, rng);
  for (std::size_t i : b.ids) b.samples.push_back(&ds.samples[i]);
  b.n_source = count;
  return b;
}

Trainer::Batch Trainer::DrawMixed(const Dataset &source, const Dataset &target, Rng &rng) const {
  BatchComposition comp = MixedBatch(config_.batch_size, config_.source_target_ratio);
  Batch b;
  b.ids = DrawIndices(source.samples.size(), comp.source, rng);
  std::vector<std::size_t> t = DrawIndices(target.samples.size(), comp.target, rng);
  for (std::size_t i : b.ids) b.samples.push_back(&source.samples[i]);
  for (std::size_t i : t) b.samples.push_back(&target.samples[i]);
  b.ids.insert(b.ids.end(), t.begin(), t.end());
  b.n_source = comp.source;
  b.n_target = comp.target;
  return b;
}

PairGroups Trainer::BuildPairs(const DecodeTrace &trace, std::size_t n_source,
                               std::size_t n_target, const std::vector<std::size_t> &source_ids,
                               const std::vector<std::size_t> &target_ids) const {
  if (n_target == 0) throw std::invalid_argument("build pairs: no target samples in batch");
  if (n_source + n_target != trace.batch)
    throw std::invalid_argument("build pairs: batch split does not match the trace");
  std::vector<std::vector<CharFeature>> target_feats(n_target);
  for (std::size_t j = 0; j < n_target; ++j)
    target_feats[j] = ExtractCharFeatures(trace, n_source + j, config_.feature, Domain::kTarget,
                                          target_ids.at(j));
  PairGroups all;
  // One source image is paired with one target image per sampling call.
  for (std::size_t i = 0; i < n_source; ++i) {
    auto src = ExtractCharFeatures(trace, i, config_.feature, Domain::kSource, source_ids.at(i));
    all.Append(SamplePairs(src, target_feats[i % n_target]));
  }
  return all;
}

void Trainer::PretrainAttention(const Dataset &source, std::size_t steps) {
  CheckGeometry(source);
  ParamSet gen = model_.GeneratorParams();
  for (std::size_t s = 0; s < steps; ++s) {
    Batch b = DrawSingle(source, std::min(config_.batch_size, source.samples.size()), batch_rng_);
    Tensor loss = AttentionLoss(model_.Forward(b.samples, config_.ia()));
    Backward(loss);
    pretrain_opt_.Step(gen);
    ++step_;
    Log("pretrain", "att", loss.item());
  }
}

double Trainer::McdStep(const Dataset &source, const Dataset &target, const char *phase) {
  EnsureMcd();
  Batch b = DrawMixed(source, target, aux_rng_);
  ParamSet gen = model_.GeneratorParams();
  ParamSet &mcd = model_.mcd->params();
  FreezeCheck check{"mcd", gen.Hash(), 0, mcd.Hash(), 0};
  PairGroups groups;
  {
    NoGradGuard no_grad;
    DecodeTrace trace = model_.Forward(b.samples, config_.ia());
    std::vector<std::size_t> sids(b.ids.begin(), b.ids.begin() + b.n_source);
    std::vector<std::size_t> tids(b.ids.begin() + b.n_source, b.ids.end());
    groups = SubsampleBalanced(BuildPairs(trace, b.n_source, b.n_target, sids, tids),
                               config_.pairs_per_group, aux_rng_);
  }
  Tensor loss = DiscriminatorLoss(groups, *model_.mcd);
  Backward(loss);
  mcd_opt_.Step(mcd);
  ++step_;
  check.generator_after = gen.Hash();
  check.mcd_after = mcd.Hash();
  freeze_checks_.push_back(check);
  if (!check.Holds())
    throw std::logic_error("freeze violated: generator parameters changed during a discriminator step");
  Log(phase, "d", loss.item());
  return loss.item();
}

void Trainer::PretrainMcd(const Dataset &source, const Dataset &target, std::size_t steps) {
  if (target.samples.empty()) throw std::invalid_argument("pretrain mcd: target set is empty");
  CheckGeometry(source);
  CheckGeometry(target);
  EnsureMcd();
  for (std::size_t s = 0; s < steps; ++s) McdStep(source, target, "mcd_pretrain");
}

void Trainer::AdversarialRound(const Dataset &source, const Dataset &target) {
  if (target.samples.empty()) throw std::invalid_argument("adversarial round: target set is empty");
  EnsureMcd();
  for (std::size_t d = 0; d < config_.d_steps_per_round; ++d) McdStep(source, target, "adapt_d");

  ParamSet gen = model_.GeneratorParams();
  ParamSet &mcd = model_.mcd->params();
  for (std::size_t g = 0; g < config_.g_steps_per_round; ++g) {
    FreezeCheck check{"generator", gen.Hash(), 0, mcd.Hash(), 0};
    Batch b = DrawMixed(source, target, batch_rng_);
    DecodeTrace trace = model_.Forward(b.samples, config_.ia());
    Tensor att = AttentionLoss(trace);
    std::vector<std::size_t> sids(b.ids.begin(), b.ids.begin() + b.n_source);
    std::vector<std::size_t> tids(b.ids.begin() + b.n_source, b.ids.end());
    PairGroups groups = SubsampleBalanced(BuildPairs(trace, b.n_source, b.n_target, sids, tids),
                                          config_.pairs_per_group, aux_rng_);
    Tensor total = att;
    double confusion = std::numeric_limits<double>::quiet_NaN();
    if (!groups[1].empty() || !groups[3].empty()) {
      if (config_.gamma > 0) {
        Tensor lg = GeneratorConfusionLoss(groups[1], groups[3], *model_.mcd);
        confusion = lg.item();
        total = Add(att, Scale(lg, config_.gamma));
      } else {
        NoGradGuard no_grad;
        confusion = GeneratorConfusionLoss(groups[1], groups[3], *model_.mcd).item();
      }
    }
    Backward(total);
    generator_opt_.Step(gen);
    mcd.ZeroGrad();
    ++step_;
    check.generator_after = gen.Hash();
    check.mcd_after = mcd.Hash();
    freeze_checks_.push_back(check);
    if (!check.Holds())
      throw std::logic_error("freeze violated: discriminator parameters changed during a generator step");
    Log("adapt_g", "att", att.item());
    if (!std::isnan(confusion)) Log("adapt_g", "confusion", confusion);
    Log("adapt_g", "total", total.item());
  }
}

void Trainer::Adapt(const Dataset &source, const Dataset &target) {
  PretrainMcd(source, target, config_.mcd_pretrain_steps);
  for (std::size_t r = 0; r < config_.adversarial_rounds; ++r) AdversarialRound(source, target);
}

void Trainer::Finetune(const Dataset &source, const Dataset &target, FinetuneMode mode,
                       std::size_t steps) {
  if (target.samples.empty()) throw std::invalid_argument("finetune: target set is empty");
  CheckGeometry(target);
  if (mode == FinetuneMode::kSourceAndTarget) CheckGeometry(source);
  const char *phase = mode == FinetuneMode::kTargetOnly ? "finetune_t" : "finetune_st";
  ParamSet gen = model_.GeneratorParams();
  for (std::size_t s = 0; s < steps; ++s) {
    Batch b = mode == FinetuneMode::kTargetOnly
                  ? DrawSingle(target, std::min(config_.batch_size, target.samples.size()), batch_rng_)
                  : DrawMixed(source, target, batch_rng_);
    Tensor loss = AttentionLoss(model_.Forward(b.samples, config_.ia()));
    Backward(loss);
    generator_opt_.Step(gen);
    ++step_;
    Log(phase, "att", loss.item());
  }
}

void Trainer::WriteMetrics(const std::filesystem::path &path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write metrics to " + path.string());
  os << "step\tphase\tloss_name\tvalue\n" << std::setprecision(17);
  for (const MetricRow &r : metrics_)
    os << r.step << '\t' << r.phase << '\t' << r.loss << '\t' << r.value << '\n';
  if (!os) throw std::runtime_error("error writing metrics to " + path.string());
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

class Writer {
 public:
  void U8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void U16(std::uint16_t v) { Le(v, 2); }
  void U32(std::uint32_t v) { Le(v, 4); }
  void F64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    Le(bits, 8);
  }
  void Raw(const std::string &s) { bytes_ += s; }
  const std::string &bytes() const { return bytes_; }

 private:
  void Le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string bytes_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint8_t U8() { return static_cast<std::uint8_t>(Le(1)); }
  std::uint16_t U16() { return static_cast<std::uint16_t>(Le(2)); }
  std::uint32_t U32() { return static_cast<std::uint32_t>(Le(4)); }
  double F64() {
    std::uint64_t bits = Le(8);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string Raw(std::size_t n) {
    Need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void Fail(const std::string &what, std::size_t offset) const {
    throw CheckpointError("checkpoint " + path_ + ": " + what + " at offset " +
                          std::to_string(offset));
  }

 private:
  void Need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      Fail("truncated file (need " + std::to_string(n) + " more bytes, have " +
               std::to_string(bytes_.size() - pos_) + ")",
           pos_);
  }
  std::uint64_t Le(int n) {
    Need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

Tensor TextTensor(const std::string &s) {
  std::vector<double> v(s.begin(), s.end());
  for (double &x : v) x = static_cast<double>(static_cast<unsigned char>(x));
  if (v.empty()) v.push_back(0.0);  // dims must be positive; a lone NUL marks the empty string
  const std::size_t n = v.size();
  return Tensor::FromData({n}, std::move(v));
}

std::string TensorText(const Tensor &t) {
  std::string s;
  for (double x : t.data()) {
    if (x == 0.0) break;
    s.push_back(static_cast<char>(static_cast<unsigned char>(x)));
  }
  return s;
}

}  // namespace

void WriteCheckpointFile(const std::filesystem::path &path,
                         const std::vector<NamedTensorBlock> &blocks) {
  Writer w;
  w.Raw("FASD");
  w.U32(kCheckpointVersion);
  for (const NamedTensorBlock &block : blocks) {
    w.U32(static_cast<std::uint32_t>(block.entries.size()));
    for (const auto &[name, t] : block.entries) {
      if (name.size() > 0xffff) throw CheckpointError("checkpoint: tensor name too long");
      w.U16(static_cast<std::uint16_t>(name.size()));
      w.Raw(name);
      w.U8(static_cast<std::uint8_t>(t.rank()));
      for (std::size_t d : t.shape()) w.U32(static_cast<std::uint32_t>(d));
      for (double x : t.data()) w.F64(x);
    }
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    os.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!os) throw CheckpointError("checkpoint: error writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("checkpoint: cannot rename " + tmp.string() + ": " + ec.message());
}

std::vector<NamedTensorBlock> ReadCheckpointFile(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint " + path.string() + ": cannot open");
  std::ostringstream buf;
  buf << is.rdbuf();
  Reader r(buf.str(), path.string());
  if (buf.str().size() < 4 || r.Raw(4) != "FASD") r.Fail("bad magic, expected \"FASD\"", 0);
  std::uint32_t version = r.U32();
  if (version != kCheckpointVersion)
    r.Fail("unsupported checkpoint version " + std::to_string(version) + " (this build reads " +
               std::to_string(kCheckpointVersion) + ")",
           4);
  std::vector<NamedTensorBlock> blocks;
  while (!r.done()) {
    NamedTensorBlock block;
    std::uint32_t count = r.U32();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::size_t at = r.pos();
      std::string name = r.Raw(r.U16());
      std::uint8_t rank = r.U8();
      if (rank == 0) r.Fail("tensor '" + name + "' has rank 0", at);
      Shape shape;
      for (std::uint8_t k = 0; k < rank; ++k) {
        std::uint32_t d = r.U32();
        if (d == 0) r.Fail("tensor '" + name + "' has a zero dimension", at);
        shape.push_back(d);
      }
      std::vector<double> data(ShapeSize(shape));
      for (double &x : data) x = r.F64();
      block.entries.emplace_back(name, Tensor::FromData(shape, std::move(data)));
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

struct CheckpointIO {
  static void Save(const Trainer &t, const std::filesystem::path &path) {
    NamedTensorBlock params, slots, state;
    for (const auto &[name, tensor] : t.model_.AllParams()) params.entries.emplace_back(name, tensor);
    auto add_slots = [&](const std::string &prefix, const Optimizer &opt) {
      for (const auto &[name, tensor] : opt.ExportState())
        slots.entries.emplace_back(prefix + "/" + name, tensor);
    };
    add_slots("pretrain", t.pretrain_opt_);
    add_slots("generator", t.generator_opt_);
    add_slots("mcd", t.mcd_opt_);
    state.entries.emplace_back("config", TextTensor(SerializeConfig(t.config_)));
    state.entries.emplace_back("rng/aux", TextTensor(t.aux_rng_.SaveState()));
    state.entries.emplace_back("rng/batch", TextTensor(t.batch_rng_.SaveState()));
    state.entries.emplace_back("step", Tensor::Scalar(static_cast<double>(t.step_)));
    WriteCheckpointFile(path, {params, slots, state});
  }

  static Trainer Load(const std::filesystem::path &path) {
    auto blocks = ReadCheckpointFile(path);
    if (blocks.size() != 3)
      throw CheckpointError("checkpoint " + path.string() + ": expected 3 blocks, found " +
                            std::to_string(blocks.size()));
    std::map<std::string, Tensor> params(blocks[0].entries.begin(), blocks[0].entries.end());
    std::map<std::string, Tensor> state(blocks[2].entries.begin(), blocks[2].entries.end());
    auto need = [&](const std::string &key) -> const Tensor & {
      auto it = state.find(key);
      if (it == state.end())
        throw CheckpointError("checkpoint " + path.string() + ": missing state entry '" + key + "'");
      return it->second;
    };
    TrainConfig config;
    try {
      config = ParseConfig(TensorText(need("config")));
    } catch (const std::invalid_argument &e) {
      throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
    }
    Trainer t(config);
    auto mcd_w = params.find("mcd/l1/w");
    if (mcd_w != params.end()) {
      Rng unused(0);
      t.model_.mcd = Discriminator(config.mcd, mcd_w->second.dim(0) / 2, unused);
    }
    ParamSet mine = t.model_.AllParams();
    if (mine.size() != params.size())
      throw CheckpointError("checkpoint " + path.string() + ": holds " +
                            std::to_string(params.size()) + " parameters, model has " +
                            std::to_string(mine.size()));
    for (auto &[name, tensor] : mine) {
      auto it = params.find(name);
      if (it == params.end())
        throw CheckpointError("checkpoint " + path.string() + ": missing parameter '" + name + "'");
      if (it->second.shape() != tensor.shape())
        throw CheckpointError("checkpoint " + path.string() + ": parameter '" + name + "' is " +
                              ShapeString(it->second.shape()) + ", model expects " +
                              ShapeString(tensor.shape()));
      std::copy(it->second.data().begin(), it->second.data().end(), tensor.mutable_data().begin());
    }
    ParamSet pre, gen, mcd;
    for (const auto &[name, tensor] : blocks[1].entries) {
      auto slash = name.find('/');
      std::string head = name.substr(0, slash), rest = name.substr(slash + 1);
      ParamSet *dst = head == "pretrain" ? &pre : head == "generator" ? &gen : head == "mcd" ? &mcd : nullptr;
      if (!dst || slash == std::string::npos)
        throw CheckpointError("checkpoint " + path.string() + ": unknown optimizer slot '" + name + "'");
      dst->Add(rest, tensor);
    }
    try {
      t.pretrain_opt_.ImportState(pre);
      t.generator_opt_.ImportState(gen);
      t.mcd_opt_.ImportState(mcd);
      t.aux_rng_.LoadState(TensorText(need("rng/aux")));
      t.batch_rng_.LoadState(TensorText(need("rng/batch")));
    } catch (const std::invalid_argument &e) {
      throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
    }
    t.step_ = static_cast<std::uint64_t>(need("step").item());
    return t;
  }
};

void Trainer::Save(const std::filesystem::path &path) const { CheckpointIO::Save(*this, path); }

Trainer Trainer::Load(const std::filesystem::path &path) { return CheckpointIO::Load(path); }

}  // namespace fasda
