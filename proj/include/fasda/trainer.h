// include/fasda/trainer.h

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

// Training schedule:
//   1. pretrain the recognizer (encoder + attention decoder) on source data;
//   2. pretrain the pair discriminator with the recognizer frozen;
//   3. alternate discriminator steps (recognizer frozen) and generator
//      steps on  gamma * confusion + attention loss  (discriminator frozen).
// Finetuning baselines reuse the generator optimizer and batch layout.

#ifndef FASDA_TRAINER_H_
#define FASDA_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fasda/adversarial.h"
#include "fasda/data.h"
#include "fasda/model.h"
#include "fasda/optim.h"
#include "fasda/util.h"

namespace fasda {

struct TrainConfig {
  Geometry geometry;
  std::string alphabet = "0123456789";
  EncoderConfig encoder;
  DecoderConfig decoder;
  McdConfig mcd;

  double gamma = 0.00005;
  double lambda = 0.75;
  std::size_t eta = 1;
  bool ia_enabled = true;
  FeatureVariant feature = FeatureVariant::kContextual;

  std::size_t batch_size = 64;
  OptimizerKind pretrain_optimizer = OptimizerKind::kAdadelta;
  double pretrain_lr = 1.0;
  double lr_adam = 0.001;

  std::size_t pretrain_steps = 3000;
  std::size_t mcd_pretrain_steps = 200;
  std::size_t adversarial_rounds = 2000;
  std::size_t d_steps_per_round = 1;
  std::size_t g_steps_per_round = 1;
  std::size_t finetune_steps = 2000;
  std::size_t pairs_per_group = 64;
  std::size_t source_target_ratio = 20;
  std::uint64_t seed = 1;

  IAConfig ia() const { return {ia_enabled, lambda, eta}; }
  std::size_t max_decode_steps() const { return geometry.max_len + 1; }
  /// Throws std::invalid_argument naming the offending key.
  void Validate() const;
};

/// Flat key=value text, one entry per line, keys sorted.
std::string SerializeConfig(const TrainConfig &config);
/// Unknown keys and malformed values throw std::invalid_argument.
void SetConfigValue(TrainConfig &config, const std::string &key, const std::string &value);
TrainConfig ParseConfig(const std::string &text, TrainConfig base = {});
std::vector<std::string> ConfigKeys();

/// Source/target split of a mixed batch: n_target = max(1, batch/(ratio+1)).
struct BatchComposition {
  std::size_t source = 0;
  std::size_t target = 0;
};
BatchComposition MixedBatch(std::size_t batch_size, std::size_t ratio);

/// `count` distinct indices from [0, n) (a fresh permutation prefix);
/// when count > n whole permutations are concatenated.
std::vector<std::size_t> DrawIndices(std::size_t n, std::size_t count, Rng &rng);

/// The recognizer plus the pair discriminator.
struct Model {
  Alphabet alphabet;
  Encoder encoder;
  AttentionDecoder decoder;
  std::optional<Discriminator> mcd;

  static Model Create(const TrainConfig &config, Rng &rng);
  /// Handles to "encoder/..." and "decoder/..." parameters.
  ParamSet GeneratorParams() const;
  ParamSet AllParams() const;  // plus "mcd/..."
  std::size_t PairDim(FeatureVariant variant) const;

  /// Teacher-forced decode of a batch of samples.
  DecodeTrace Forward(const std::vector<const Sample *> &batch, const IAConfig &ia) const;
  /// Greedy predictions in chunks of `chunk` samples, without recording.
  std::vector<std::vector<std::size_t>> Predict(const std::vector<const Sample *> &samples,
                                                const IAConfig &ia, std::size_t max_steps,
                                                std::size_t chunk = 64) const;
};

struct MetricRow {
  std::uint64_t step;
  std::string phase;
  std::string loss;
  double value;
};

/// Parameter hashes taken around one optimizer step.
struct FreezeCheck {
  std::string phase;  // "mcd" or "generator"
  std::uint64_t generator_before, generator_after;
  std::uint64_t mcd_before, mcd_after;
  bool Holds() const {
    return phase == "mcd" ? generator_before == generator_after : mcd_before == mcd_after;
  }
};

enum class FinetuneMode { kTargetOnly, kSourceAndTarget };
FinetuneMode ParseFinetuneMode(const std::string &name);

class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  static Trainer Load(const std::filesystem::path &path);
  /// Atomic: writes to a temporary file and renames it.
  void Save(const std::filesystem::path &path) const;

  void PretrainAttention(const Dataset &source, std::size_t steps);
  void PretrainMcd(const Dataset &source, const Dataset &target, std::size_t steps);
  void AdversarialRound(const Dataset &source, const Dataset &target);
  /// PretrainMcd followed by config.adversarial_rounds rounds.
  void Adapt(const Dataset &source, const Dataset &target);
  void Finetune(const Dataset &source, const Dataset &target, FinetuneMode mode, std::size_t steps);

  /// Re-targets the adaptation settings (IA, feature variant, gamma, ...)
  /// while keeping the network, optimizer and RNG state.
  void Reconfigure(const TrainConfig &config);

  /// Teacher-forced source/target pair groups for one mixed batch.
  PairGroups BuildPairs(const DecodeTrace &trace, std::size_t n_source, std::size_t n_target,
                        const std::vector<std::size_t> &source_ids,
                        const std::vector<std::size_t> &target_ids) const;

  const TrainConfig &config() const { return config_; }
  Model &model() { return model_; }
  const Model &model() const { return model_; }
  const std::vector<MetricRow> &metrics() const { return metrics_; }
  const std::vector<FreezeCheck> &freeze_checks() const { return freeze_checks_; }
  void ClearFreezeChecks() { freeze_checks_.clear(); }
  std::uint64_t step() const { return step_; }

  void WriteMetrics(const std::filesystem::path &path) const;

 private:
  struct Batch {
    std::vector<const Sample *> samples;
    std::vector<std::size_t> ids;
    std::size_t n_source = 0;
    std::size_t n_target = 0;
  };
  Batch DrawMixed(const Dataset &source, const Dataset &target, Rng &rng) const;
  Batch DrawSingle(const Dataset &ds, std::size_t count, Rng &rng) const;
  double McdStep(const Dataset &source, const Dataset &target, const char *phase);
  void Log(const std::string &phase, const std::string &loss, double value);
  void EnsureMcd();
  void CheckGeometry(const Dataset &ds) const;

  TrainConfig config_;
  Model model_;
  Optimizer pretrain_opt_;
  Optimizer generator_opt_;
  Optimizer mcd_opt_;
  Rng batch_rng_;  // generator-side batches
  Rng aux_rng_;    // discriminator batches and pair subsampling
  std::uint64_t step_ = 0;
  std::vector<MetricRow> metrics_;
  std::vector<FreezeCheck> freeze_checks_;

  friend struct CheckpointIO;
};

// Checkpoint format: "FASD", u32 version, then three blocks (parameters,
// optimizer slots, state) each as u32 count followed by entries
//   u16 name length, name bytes, u8 rank, u32 dims..., f64 LE payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensorBlock {
  std::vector<std::pair<std::string, Tensor>> entries;
};
void WriteCheckpointFile(const std::filesystem::path &path,
                         const std::vector<NamedTensorBlock> &blocks);
std::vector<NamedTensorBlock> ReadCheckpointFile(const std::filesystem::path &path);

}  // namespace fasda

#endif  // FASDA_TRAINER_H_
