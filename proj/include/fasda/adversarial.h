// include/fasda/adversarial.h

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

// Character-pair sampling and the four-way pair discriminator.
//
// Pairs of decoded character features fall into four groups:
//   G1  source/source, same label      G2  source/target, same label
//   G3  source/source, other label     G4  source/target, other label
// The discriminator learns to tell the groups apart; the generator is
// trained so that G2 looks like G1 and G4 looks like G3.

#ifndef FASDA_ADVERSARIAL_H_
#define FASDA_ADVERSARIAL_H_

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fasda/model.h"
#include "fasda/tensor.h"

namespace fasda {

enum class Domain { kSource, kTarget };
enum class FeatureVariant { kContext, kContextual };  // CR, CR+

const char *FeatureVariantName(FeatureVariant v);
FeatureVariant ParseFeatureVariant(const std::string &name);

struct CharFeature {
  Tensor vector;  // [dim]
  std::size_t label = 0;
  Domain domain = Domain::kSource;
  std::size_t sample_id = 0;
  std::size_t step = 0;
};

using FeaturePair = std::pair<CharFeature, CharFeature>;

inline constexpr std::size_t kNumGroups = 4;

/// groups[0..3] hold G1..G4.
struct PairGroups {
  std::array<std::vector<FeaturePair>, kNumGroups> groups;

  std::size_t total() const;
  std::vector<FeaturePair> &operator[](std::size_t g) { return groups[g]; }
  const std::vector<FeaturePair> &operator[](std::size_t g) const { return groups[g]; }
  void Append(const PairGroups &other);
};

/// One feature per labelled position of sample `batch_index` in a
/// teacher-forced trace (the EOS step is skipped).
std::vector<CharFeature> ExtractCharFeatures(const DecodeTrace &trace, std::size_t batch_index,
                                             FeatureVariant variant, Domain domain,
                                             std::size_t sample_id);

/// All of CR^s x CR^t routed to G2/G4 and all of CR^s x CR^s (self pairs
/// and both orders included) routed to G1/G3.
PairGroups SamplePairs(const std::vector<CharFeature> &source,
                       const std::vector<CharFeature> &target);

/// Uniform selection without replacement of at most `per_group` pairs per
/// group.  Selected pairs keep their original relative order.
PairGroups SubsampleBalanced(const PairGroups &groups, std::size_t per_group, Rng &rng);

// ---------------------------------------------------------------------------

struct McdConfig {
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 128;
};

/// Three fully connected layers (tanh, tanh, linear) over the concatenated
/// pair, followed by a 4-way softmax.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const McdConfig &config, std::size_t pair_dim, Rng &rng);

  /// Log-probabilities [P, 4] for stacked pair inputs [P, 2*pair_dim].
  /// With `frozen`, the parameters enter the graph as constants.
  Tensor LogProbs(const Tensor &pairs, bool frozen = false) const;
  /// Probabilities for a single pair.
  std::vector<double> Forward(const Tensor &a, const Tensor &b) const;

  std::size_t pair_dim() const { return pair_dim_; }
  const McdConfig &config() const { return config_; }
  ParamSet &params() { return params_; }
  const ParamSet &params() const { return params_; }

 private:
  McdConfig config_;
  std::size_t pair_dim_ = 0;
  ParamSet params_;
};

/// [P, 2*dim] input built from the pairs.  `detach` copies the values so no
/// gradient reaches the features.
Tensor StackPairs(const std::vector<const FeaturePair *> &pairs, std::size_t dim, bool detach);

/// Mean over all pairs of -log D(pair)[group]; features are detached.
Tensor DiscriminatorLoss(const PairGroups &groups, const Discriminator &mcd);

/// Mean over G2 and G4 pairs of -log D(pair)[G1] (for G2) and
/// -log D(pair)[G3] (for G4); discriminator parameters are constants.
Tensor GeneratorConfusionLoss(const std::vector<FeaturePair> &g2,
                              const std::vector<FeaturePair> &g4, const Discriminator &mcd);

/// Fraction of pairs whose argmax group is their true group.
double GroupAccuracy(const PairGroups &groups, const Discriminator &mcd);

}  // namespace fasda

#endif  // FASDA_ADVERSARIAL_H_
