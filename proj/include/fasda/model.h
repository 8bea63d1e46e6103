// include/fasda/model.h

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

// Recognition network: a small convolutional/recurrent encoder that turns a
// glyph strip into a feature sequence, and an attention decoder that emits
// one character per step until end-of-sequence.

#ifndef FASDA_MODEL_H_
#define FASDA_MODEL_H_

#include <cstddef>
#include <span>
#include <vector>

#include "fasda/data.h"
#include "fasda/tensor.h"
#include "fasda/util.h"

namespace fasda {

/// Uniform(-r, r) with r = 1/sqrt(fan_in); fan_in is the leading dimension.
Tensor InitMatrix(std::size_t rows, std::size_t cols, Rng &rng);
Tensor InitBias(std::size_t n);

// ---------------------------------------------------------------------------
// Encoder

struct EncoderConfig {
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t feature_dim = 32;
  std::size_t column_stride = 4;
  bool recurrent = true;
};

/// Two 3x3 stencils with vertical stride 2 (tanh), per-position flatten of
/// `column_stride` columns, a linear projection to feature_dim (tanh) and an
/// optional LSTM over positions.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig &config, const Geometry &geometry, Rng &rng);

  /// Returns the feature sequence [M, B, feature_dim].
  Tensor Encode(std::span<const Image *const> images) const;
  Tensor Encode(const Image &image) const;

  std::size_t SequenceLength() const;
  const EncoderConfig &config() const { return config_; }
  const Geometry &geometry() const { return geometry_; }
  ParamSet &params() { return params_; }
  const ParamSet &params() const { return params_; }

 private:
  EncoderConfig config_;
  Geometry geometry_;
  ParamSet params_;
};

// ---------------------------------------------------------------------------
// LSTM cell shared by the encoder and decoder.  Gate order i, f, g, o.

struct LstmState {
  Tensor h;  // [B, hidden]
  Tensor c;  // [B, hidden]
};

LstmState LstmStep(const Tensor &input, const LstmState &prev, const Tensor &weight,
                   const Tensor &bias);

// ---------------------------------------------------------------------------
// Inclusive attending

struct IAConfig {
  bool enabled = false;
  double lambda = 0.75;
  std::size_t eta = 1;
};

/// Widens an attention distribution with a triangular kernel of radius eta:
///   a'_j = lambda a_j + c sum_{i=1..eta} (eta+1-i) (A(j-i) + A(j+i)),
///   c = (1-lambda) / (eta (eta+1)),
/// where A(k) = a_k inside [0, M) and a_j itself outside.  Total mass is
/// preserved.  Requires 1 <= eta < M.
std::vector<double> InclusiveReweight(std::span<const double> alpha, const IAConfig &config);

/// The same map as a matrix R with alpha' = alpha R (row-vector form).
Tensor InclusiveMatrix(std::size_t length, const IAConfig &config);

// ---------------------------------------------------------------------------
// Attention decoder

struct DecoderConfig {
  std::size_t hidden = 64;
  std::size_t attention_dim = 64;
  std::size_t embed_dim = 16;
};

struct DecodeStep {
  Tensor alpha;        // [B, M] softmax of the energies
  Tensor alpha_prime;  // [B, M] weights actually used (== alpha without IA)
  Tensor cr;           // [B, feature_dim] context vector
  Tensor cr_plus;      // [B, hidden] recurrent state s_t
  Tensor log_probs;    // [B, classes]
  std::vector<std::size_t> emitted;  // argmax class per sample
};

struct DecodeTrace {
  bool teacher_forced = false;
  std::size_t batch = 0;
  std::vector<DecodeStep> steps;
  /// Ground truth without EOS (teacher forcing only).
  std::vector<std::vector<std::size_t>> labels;
  /// Number of meaningful steps per sample: label length + 1 when teacher
  /// forced; up to and including the first EOS (or max_steps) when greedy.
  std::vector<std::size_t> valid_steps;

  /// Greedy predictions per sample with the EOS removed.
  std::vector<std::vector<std::size_t>> Predictions() const;
};

class AttentionDecoder {
 public:
  AttentionDecoder() = default;
  AttentionDecoder(const DecoderConfig &config, std::size_t feature_dim, std::size_t num_classes,
                   Rng &rng);

  /// V x_j for all positions: [M, B, attention_dim].  Shared by all steps.
  Tensor ProjectSequence(const Tensor &seq) const;
  /// Softmax over positions of w^T tanh(W s + V x_j + b): [B, M].
  Tensor AttentionWeights(const Tensor &projected, const Tensor &prev_state) const;
  /// sum_j alpha_j x_j: [B, feature_dim].
  static Tensor Context(const Tensor &seq, const Tensor &alpha);
  /// One recurrent update fed with the previous symbol and the context.
  LstmState RecurrentStep(const std::vector<std::size_t> &prev_symbols, const Tensor &context,
                          const LstmState &prev) const;
  Tensor Logits(const Tensor &state) const;

  DecodeTrace TeacherForced(const Tensor &seq, const std::vector<std::vector<std::size_t>> &labels,
                            const IAConfig &ia) const;
  DecodeTrace Greedy(const Tensor &seq, const IAConfig &ia, std::size_t max_steps) const;

  std::size_t start_token() const { return num_classes_; }
  std::size_t eos() const { return num_classes_ - 1; }
  std::size_t num_classes() const { return num_classes_; }
  const DecoderConfig &config() const { return config_; }
  ParamSet &params() { return params_; }
  const ParamSet &params() const { return params_; }

 private:
  DecodeStep Step(const Tensor &seq, const Tensor &projected, const Tensor &ia_matrix,
                  const std::vector<std::size_t> &prev_symbols, LstmState &state) const;

  DecoderConfig config_;
  std::size_t feature_dim_ = 0;
  std::size_t num_classes_ = 0;
  ParamSet params_;
};

/// Sum over steps of -log P(ground truth), EOS included as the final
/// target, averaged over the batch.
Tensor AttentionLoss(const DecodeTrace &trace);

/// Per-step heatmaps (one PGM row of width M per step, value
/// floor(alpha' * 255 + 0.5)) and alpha.tsv with columns
/// step, position, alpha, alpha_prime for sample `index` of the trace.
void DumpAttention(const DecodeTrace &trace, std::size_t index,
                   const std::filesystem::path &dir);

struct AttentionTable {
  std::vector<std::vector<double>> alpha;
  std::vector<std::vector<double>> alpha_prime;
};
AttentionTable ReadAttentionTsv(const std::filesystem::path &path);

}  // namespace fasda

#endif  // FASDA_MODEL_H_
