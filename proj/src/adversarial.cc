// src/adversarial.cc

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

#include "fasda/adversarial.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "fasda/ops.h"

namespace fasda {

const char *FeatureVariantName(FeatureVariant v) {
  return v == FeatureVariant::kContext ? "cr" : "cr+";
}

FeatureVariant ParseFeatureVariant(const std::string &name) {
  if (name == "cr" || name == "CR") return FeatureVariant::kContext;
  if (name == "cr+" || name == "CR+" || name == "cr_plus") return FeatureVariant::kContextual;
  throw std::invalid_argument("unknown feature variant '" + name + "' (expected cr or cr+)");
}

std::size_t PairGroups::total() const {
  std::size_t n = 0;
  for (const auto &g : groups) n += g.size();
  return n;
}

void PairGroups::Append(const PairGroups &other) {
  for (std::size_t g = 0; g < kNumGroups; ++g)
    groups[g].insert(groups[g].end(), other.groups[g].begin(), other.groups[g].end());
}

std::vector<CharFeature> ExtractCharFeatures(const DecodeTrace &trace, std::size_t batch_index,
                                             FeatureVariant variant, Domain domain,
                                             std::size_t sample_id) {
  if (!trace.teacher_forced)
    throw std::invalid_argument("extract features: greedy trace has no ground-truth labels");
  if (batch_index >= trace.batch) throw std::out_of_range("extract features: batch index out of range");
  const auto &labels = trace.labels[batch_index];
  std::vector<CharFeature> out;
  out.reserve(labels.size());
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const Tensor &src =
        variant == FeatureVariant::kContext ? trace.steps[t].cr : trace.steps[t].cr_plus;
    out.push_back({Select(src, batch_index), labels[t], domain, sample_id, t});
  }
  return out;
}

PairGroups SamplePairs(const std::vector<CharFeature> &source,
                       const std::vector<CharFeature> &target) {
  if (source.empty() || target.empty())
    throw std::invalid_argument("sample pairs: source and target feature sets must be non-empty");
  for (const CharFeature &f : source)
    if (f.domain != Domain::kSource)
      throw std::invalid_argument("sample pairs: target feature found in the source set");
  for (const CharFeature &f : target)
    if (f.domain != Domain::kTarget)
      throw std::invalid_argument("sample pairs: source feature found in the target set");
  PairGroups out;
  for (const CharFeature &s : source)
    for (const CharFeature &t : target) out[s.label == t.label ? 1 : 3].emplace_back(s, t);
  for (const CharFeature &a : source)
    for (const CharFeature &b : source) out[a.label == b.label ? 0 : 2].emplace_back(a, b);
  return out;
}

PairGroups SubsampleBalanced(const PairGroups &groups, std::size_t per_group, Rng &rng) {
  if (per_group < 1) throw std::invalid_argument("subsample: per_group must be >= 1");
  PairGroups out;
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    const auto &src = groups[g];
    if (src.size() <= per_group) {
      out[g] = src;
      continue;
    }
    std::vector<std::size_t> idx(src.size());
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first per_group slots are a uniform draw.
    for (std::size_t i = 0; i < per_group; ++i) std::swap(idx[i], idx[i + rng.Below(idx.size() - i)]);
    idx.resize(per_group);
    std::sort(idx.begin(), idx.end());
    out[g].reserve(per_group);
    for (std::size_t i : idx) out[g].push_back(src[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const McdConfig &config, std::size_t pair_dim, Rng &rng)
    : config_(config), pair_dim_(pair_dim) {
  params_.Add("l1/w", InitMatrix(2 * pair_dim, config.hidden1, rng));
  params_.Add("l1/b", InitBias(config.hidden1));
  params_.Add("l2/w", InitMatrix(config.hidden1, config.hidden2, rng));
  params_.Add("l2/b", InitBias(config.hidden2));
  params_.Add("l3/w", InitMatrix(config.hidden2, kNumGroups, rng));
  params_.Add("l3/b", InitBias(kNumGroups));
}

Tensor Discriminator::LogProbs(const Tensor &pairs, bool frozen) const {
  if (pairs.rank() != 2 || pairs.dim(1) != 2 * pair_dim_)
    throw ShapeError("mcd: input must be [P," + std::to_string(2 * pair_dim_) + "], got " +
                     ShapeString(pairs.shape()));
  auto p = [&](const char *name) {
    const Tensor &t = params_.at(name);
    return frozen ? t.Detach() : t;
  };
  Tensor h1 = Tanh(Add(MatMul(pairs, p("l1/w")), p("l1/b")));
  Tensor h2 = Tanh(Add(MatMul(h1, p("l2/w")), p("l2/b")));
  return LogSoftmax(Add(MatMul(h2, p("l3/w")), p("l3/b")));
}

std::vector<double> Discriminator::Forward(const Tensor &a, const Tensor &b) const {
  if (a.numel() != pair_dim_ || b.numel() != pair_dim_)
    throw ShapeError("mcd: pair vectors must have " + std::to_string(pair_dim_) + " entries, got " +
                     std::to_string(a.numel()) + " and " + std::to_string(b.numel()));
  Tensor input = Concat({Reshape(a, {1, pair_dim_}), Reshape(b, {1, pair_dim_})});
  Tensor probs = Exp(LogProbs(input));
  return probs.values();
}

Tensor StackPairs(const std::vector<const FeaturePair *> &pairs, std::size_t dim, bool detach) {
  if (pairs.empty()) throw ShapeError("stack pairs: no pairs");
  for (const FeaturePair *p : pairs)
    if (p->first.vector.numel() != dim || p->second.vector.numel() != dim)
      throw ShapeError("stack pairs: feature dimension mismatch, expected " + std::to_string(dim));
  if (detach) {
    std::vector<double> data;
    data.reserve(pairs.size() * 2 * dim);
    for (const FeaturePair *p : pairs) {
      data.insert(data.end(), p->first.vector.values().begin(), p->first.vector.values().end());
      data.insert(data.end(), p->second.vector.values().begin(), p->second.vector.values().end());
    }
    return Tensor::FromData({pairs.size(), 2 * dim}, std::move(data));
  }
  std::vector<Tensor> first, second;
  first.reserve(pairs.size());
  second.reserve(pairs.size());
  for (const FeaturePair *p : pairs) {
    first.push_back(p->first.vector);
    second.push_back(p->second.vector);
  }
  return Concat({Stack(first), Stack(second)});
}

Tensor DiscriminatorLoss(const PairGroups &groups, const Discriminator &mcd) {
  std::vector<const FeaturePair *> pairs;
  std::vector<std::size_t> targets;
  for (std::size_t g = 0; g < kNumGroups; ++g)
    for (const FeaturePair &p : groups[g]) {
      pairs.push_back(&p);
      targets.push_back(g);
    }
  if (pairs.empty()) throw std::invalid_argument("discriminator loss: all groups are empty");
  Tensor logp = mcd.LogProbs(StackPairs(pairs, mcd.pair_dim(), /*detach=*/true));
  return Scale(Sum(PickColumns(logp, targets)), -1.0 / static_cast<double>(pairs.size()));
}

Tensor GeneratorConfusionLoss(const std::vector<FeaturePair> &g2,
                              const std::vector<FeaturePair> &g4, const Discriminator &mcd) {
  std::vector<const FeaturePair *> pairs;
  std::vector<std::size_t> targets;
  for (const FeaturePair &p : g2) {
    pairs.push_back(&p);
    targets.push_back(0);
  }
  for (const FeaturePair &p : g4) {
    pairs.push_back(&p);
    targets.push_back(2);
  }
  if (pairs.empty()) throw std::invalid_argument("generator loss: G2 and G4 are both empty");
  Tensor logp = mcd.LogProbs(StackPairs(pairs, mcd.pair_dim(), /*detach=*/false), /*frozen=*/true);
  return Scale(Sum(PickColumns(logp, targets)), -1.0 / static_cast<double>(pairs.size()));
}

double GroupAccuracy(const PairGroups &groups, const Discriminator &mcd) {
  NoGradGuard no_grad;
  std::vector<const FeaturePair *> pairs;
  std::vector<std::size_t> targets;
  for (std::size_t g = 0; g < kNumGroups; ++g)
    for (const FeaturePair &p : groups[g]) {
      pairs.push_back(&p);
      targets.push_back(g);
    }
  if (pairs.empty()) throw std::invalid_argument("group accuracy: no pairs");
  Tensor logp = mcd.LogProbs(StackPairs(pairs, mcd.pair_dim(), true));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto row = logp.data().subspan(i * kNumGroups, kNumGroups);
    std::size_t best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == targets[i];
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

}  // namespace fasda
