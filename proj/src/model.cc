// src/model.cc

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

#include "fasda/model.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fasda/ops.h"

namespace fasda {

namespace fs = std::filesystem;

Tensor InitMatrix(std::size_t rows, std::size_t cols, Rng &rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> data(rows * cols);
  for (double &v : data) v = rng.Uniform(-r, r);
  return Tensor::FromData({rows, cols}, std::move(data), true);
}

Tensor InitBias(std::size_t n) { return Tensor::Zeros({n}, true); }

// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig &config, const Geometry &geometry, Rng &rng)
    : config_(config), geometry_(geometry) {
  if (config.conv1_channels == 0 || config.conv2_channels == 0 || config.feature_dim == 0 ||
      config.column_stride == 0)
    throw std::invalid_argument("encoder: all sizes must be positive");
  const std::size_t rows_out = (((geometry.height + 1) / 2) + 1) / 2;
  const std::size_t flat = rows_out * config.column_stride * config.conv2_channels;
  const std::size_t f = config.feature_dim;
  params_.Add("conv1/w", InitMatrix(9, config.conv1_channels, rng));
  params_.Add("conv1/b", InitBias(config.conv1_channels));
  params_.Add("conv2/w", InitMatrix(9 * config.conv1_channels, config.conv2_channels, rng));
  params_.Add("conv2/b", InitBias(config.conv2_channels));
  params_.Add("proj/w", InitMatrix(flat, f, rng));
  params_.Add("proj/b", InitBias(f));
  if (config.recurrent) {
    params_.Add("lstm/w", InitMatrix(2 * f, 4 * f, rng));
    params_.Add("lstm/b", InitBias(4 * f));
  }
}

std::size_t Encoder::SequenceLength() const {
  return (geometry_.width() + config_.column_stride - 1) / config_.column_stride;
}

Tensor Encoder::Encode(const Image &image) const {
  const Image *ptr = &image;
  return Encode(std::span<const Image *const>(&ptr, 1));
}

Tensor Encoder::Encode(std::span<const Image *const> images) const {
  if (images.empty()) throw ShapeError("encode: empty batch");
  const std::size_t batch = images.size(), h = geometry_.height, w = geometry_.width();
  std::vector<double> pixels;
  pixels.reserve(batch * h * w);
  for (const Image *img : images) {
    if (img->height != h)
      throw ShapeError("encode: image height " + std::to_string(img->height) + ", expected " +
                       std::to_string(h));
    if (img->width != w)
      throw ShapeError("encode: image width " + std::to_string(img->width) + ", expected " +
                       std::to_string(w));
    for (std::uint8_t p : img->pixels) pixels.push_back(p / 255.0);
  }
  Tensor x = Tensor::FromData({batch, h, w, 1}, std::move(pixels));

  auto conv = [&](const Tensor &in, const char *name, std::size_t out_channels) {
    Tensor cols = Im2Col3x3(in, 2);
    const std::size_t ho = (in.dim(1) + 1) / 2;
    Tensor y = Add(MatMul(cols, params_.at(std::string(name) + "/w")),
                   params_.at(std::string(name) + "/b"));
    return Reshape(Tanh(y), {batch, ho, w, out_channels});
  };
  Tensor h1 = conv(x, "conv1", config_.conv1_channels);
  Tensor h2 = conv(h1, "conv2", config_.conv2_channels);
  Tensor seq = ColumnsToSequence(h2, config_.column_stride);  // [M, B, D]
  const std::size_t m = seq.dim(0), d = seq.dim(2), f = config_.feature_dim;
  Tensor proj = Tanh(Add(MatMul(Reshape(seq, {m * batch, d}), params_.at("proj/w")),
                         params_.at("proj/b")));
  Tensor feats = Reshape(proj, {m, batch, f});
  if (!config_.recurrent) return feats;

  LstmState state{Tensor::Zeros({batch, f}), Tensor::Zeros({batch, f})};
  std::vector<Tensor> outputs;
  outputs.reserve(m);
  for (std::size_t t = 0; t < m; ++t) {
    state = LstmStep(Select(feats, t), state, params_.at("lstm/w"), params_.at("lstm/b"));
    outputs.push_back(state.h);
  }
  return Stack(outputs);
}

// ---------------------------------------------------------------------------

LstmState LstmStep(const Tensor &input, const LstmState &prev, const Tensor &weight,
                   const Tensor &bias) {
  const std::size_t hidden = prev.h.dim(1);
  Tensor gates = Add(MatMul(Concat({input, prev.h}), weight), bias);
  Tensor i = Sigmoid(SliceLast(gates, 0, hidden));
  Tensor f = Sigmoid(SliceLast(gates, hidden, 2 * hidden));
  Tensor g = Tanh(SliceLast(gates, 2 * hidden, 3 * hidden));
  Tensor o = Sigmoid(SliceLast(gates, 3 * hidden, 4 * hidden));
  Tensor c = Add(Mul(f, prev.c), Mul(i, g));
  return {Mul(o, Tanh(c)), c};
}

// ---------------------------------------------------------------------------

std::vector<double> InclusiveReweight(std::span<const double> alpha, const IAConfig &config) {
  const std::size_t m = alpha.size();
  if (config.eta < 1) throw std::invalid_argument("inclusive reweight: eta must be >= 1");
  if (config.eta >= m)
    throw std::invalid_argument("inclusive reweight: eta " + std::to_string(config.eta) +
                                " must be smaller than sequence length " + std::to_string(m));
  if (config.lambda < 0.0 || config.lambda > 1.0)
    throw std::invalid_argument("inclusive reweight: lambda must lie in [0,1]");
  const long len = static_cast<long>(m);
  const long eta = static_cast<long>(config.eta);
  const double c = (1.0 - config.lambda) / static_cast<double>(eta * (eta + 1));
  std::vector<double> out(m);
  for (long j = 0; j < len; ++j) {
    auto neighbour = [&](long k) { return (k >= 0 && k < len) ? alpha[k] : alpha[j]; };
    double spread = 0.0;
    for (long i = 1; i <= eta; ++i)
      spread += static_cast<double>(eta + 1 - i) * (neighbour(j - i) + neighbour(j + i));
    out[j] = config.lambda * alpha[j] + c * spread;
  }
  return out;
}

Tensor InclusiveMatrix(std::size_t length, const IAConfig &config) {
  std::vector<double> r(length * length);
  std::vector<double> unit(length, 0.0);
  for (std::size_t k = 0; k < length; ++k) {
    unit[k] = 1.0;
    std::vector<double> row = InclusiveReweight(unit, config);
    std::copy(row.begin(), row.end(), r.begin() + static_cast<std::ptrdiff_t>(k * length));
    unit[k] = 0.0;
  }
  return Tensor::FromData({length, length}, std::move(r));
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> DecodeTrace::Predictions() const {
  std::vector<std::vector<std::size_t>> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < valid_steps[b]; ++t) {
      std::size_t sym = steps[t].emitted[b];
      if (sym + 1 == steps[t].log_probs.dim(1)) break;  // EOS
      out[b].push_back(sym);
    }
  }
  return out;
}

AttentionDecoder::AttentionDecoder(const DecoderConfig &config, std::size_t feature_dim,
                                   std::size_t num_classes, Rng &rng)
    : config_(config), feature_dim_(feature_dim), num_classes_(num_classes) {
  const std::size_t h = config.hidden, a = config.attention_dim, e = config.embed_dim;
  params_.Add("att/W", InitMatrix(h, a, rng));
  params_.Add("att/V", InitMatrix(feature_dim, a, rng));
  params_.Add("att/b", InitBias(a));
  params_.Add("att/w", InitMatrix(a, 1, rng));
  params_.Add("embed", InitMatrix(num_classes + 1, e, rng));
  params_.Add("cell/w", InitMatrix(e + feature_dim + h, 4 * h, rng));
  params_.Add("cell/b", InitBias(4 * h));
  params_.Add("out/U", InitMatrix(h, num_classes, rng));
  params_.Add("out/b", InitBias(num_classes));
}

Tensor AttentionDecoder::ProjectSequence(const Tensor &seq) const {
  if (seq.rank() != 3 || seq.dim(2) != feature_dim_)
    throw ShapeError("decoder: feature sequence must be [M,B," + std::to_string(feature_dim_) +
                     "], got " + ShapeString(seq.shape()));
  const std::size_t m = seq.dim(0), batch = seq.dim(1);
  return Reshape(MatMul(Reshape(seq, {m * batch, feature_dim_}), params_.at("att/V")),
                 {m, batch, config_.attention_dim});
}

Tensor AttentionDecoder::AttentionWeights(const Tensor &projected, const Tensor &prev_state) const {
  const std::size_t m = projected.dim(0), batch = projected.dim(1), a = projected.dim(2);
  Tensor ws = MatMul(prev_state, params_.at("att/W"));             // [B, A]
  Tensor act = Tanh(Add(Add(projected, ws), params_.at("att/b")));  // [M, B, A]
  Tensor energy = MatMul(Reshape(act, {m * batch, a}), params_.at("att/w"));
  return Softmax(Transpose(Reshape(energy, {m, batch})));
}

Tensor AttentionDecoder::Context(const Tensor &seq, const Tensor &alpha) {
  return WeightedPositions(alpha, seq);
}

LstmState AttentionDecoder::RecurrentStep(const std::vector<std::size_t> &prev_symbols,
                                          const Tensor &context, const LstmState &prev) const {
  Tensor embedded = GatherRows(params_.at("embed"), prev_symbols);
  return LstmStep(Concat({embedded, context}), prev, params_.at("cell/w"), params_.at("cell/b"));
}

Tensor AttentionDecoder::Logits(const Tensor &state) const {
  return Add(MatMul(state, params_.at("out/U")), params_.at("out/b"));
}

DecodeStep AttentionDecoder::Step(const Tensor &seq, const Tensor &projected,
                                  const Tensor &ia_matrix,
                                  const std::vector<std::size_t> &prev_symbols,
                                  LstmState &state) const {
  DecodeStep step;
  step.alpha = AttentionWeights(projected, state.h);
  step.alpha_prime = ia_matrix.defined() ? MatMul(step.alpha, ia_matrix) : step.alpha;
  step.cr = Context(seq, step.alpha_prime);
  state = RecurrentStep(prev_symbols, step.cr, state);
  step.cr_plus = state.h;
  step.log_probs = LogSoftmax(Logits(state.h));
  const std::size_t batch = prev_symbols.size(), c = num_classes_;
  step.emitted.resize(batch);
  const auto &lp = step.log_probs.values();
  for (std::size_t b = 0; b < batch; ++b)
    step.emitted[b] = static_cast<std::size_t>(
        std::max_element(lp.begin() + static_cast<std::ptrdiff_t>(b * c),
                         lp.begin() + static_cast<std::ptrdiff_t>((b + 1) * c)) -
        (lp.begin() + static_cast<std::ptrdiff_t>(b * c)));
  return step;
}

namespace {

Tensor MaybeInclusiveMatrix(std::size_t m, const IAConfig &ia) {
  if (!ia.enabled) return Tensor();
  if (ia.eta >= m)
    throw std::invalid_argument("decoder: inclusive attending needs eta < M (eta=" +
                                std::to_string(ia.eta) + ", M=" + std::to_string(m) + ")");
  return InclusiveMatrix(m, ia);
}

}  // namespace

DecodeTrace AttentionDecoder::TeacherForced(const Tensor &seq,
                                            const std::vector<std::vector<std::size_t>> &labels,
                                            const IAConfig &ia) const {
  const std::size_t batch = seq.dim(1);
  if (labels.size() != batch)
    throw ShapeError("decoder: " + std::to_string(labels.size()) + " label sequences for batch of " +
                     std::to_string(batch));
  DecodeTrace trace;
  trace.teacher_forced = true;
  trace.batch = batch;
  trace.labels = labels;
  std::size_t steps = 0;
  for (const auto &l : labels) {
    if (l.empty()) throw std::invalid_argument("decoder: empty label sequence");
    for (std::size_t s : l)
      if (s >= eos()) throw std::invalid_argument("decoder: label index " + std::to_string(s) + " is not a symbol");
    trace.valid_steps.push_back(l.size() + 1);
    steps = std::max(steps, l.size() + 1);
  }
  Tensor projected = ProjectSequence(seq);
  Tensor ia_matrix = MaybeInclusiveMatrix(seq.dim(0), ia);
  LstmState state{Tensor::Zeros({batch, config_.hidden}), Tensor::Zeros({batch, config_.hidden})};
  std::vector<std::size_t> prev(batch, start_token());
  for (std::size_t t = 0; t < steps; ++t) {
    trace.steps.push_back(Step(seq, projected, ia_matrix, prev, state));
    for (std::size_t b = 0; b < batch; ++b) prev[b] = t < labels[b].size() ? labels[b][t] : eos();
  }
  return trace;
}

DecodeTrace AttentionDecoder::Greedy(const Tensor &seq, const IAConfig &ia,
                                     std::size_t max_steps) const {
  if (max_steps < 1) throw std::invalid_argument("decoder: max_steps must be >= 1");
  const std::size_t batch = seq.dim(1);
  DecodeTrace trace;
  trace.batch = batch;
  trace.valid_steps.assign(batch, max_steps);
  Tensor projected = ProjectSequence(seq);
  Tensor ia_matrix = MaybeInclusiveMatrix(seq.dim(0), ia);
  LstmState state{Tensor::Zeros({batch, config_.hidden}), Tensor::Zeros({batch, config_.hidden})};
  std::vector<std::size_t> prev(batch, start_token());
  std::vector<bool> done(batch, false);
  std::size_t remaining = batch;
  for (std::size_t t = 0; t < max_steps && remaining > 0; ++t) {
    trace.steps.push_back(Step(seq, projected, ia_matrix, prev, state));
    const auto &emitted = trace.steps.back().emitted;
    for (std::size_t b = 0; b < batch; ++b) {
      prev[b] = emitted[b];
      if (!done[b] && emitted[b] == eos()) {
        done[b] = true;
        trace.valid_steps[b] = t + 1;
        --remaining;
      }
    }
  }
  return trace;
}

Tensor AttentionLoss(const DecodeTrace &trace) {
  if (!trace.teacher_forced)
    throw std::invalid_argument("attention loss: trace was not decoded with teacher forcing");
  const std::size_t batch = trace.batch;
  const std::size_t classes = trace.steps.front().log_probs.dim(1);
  Tensor total;
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    std::vector<std::size_t> targets(batch);
    std::vector<double> mask(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto &l = trace.labels[b];
      targets[b] = t < l.size() ? l[t] : classes - 1;
      mask[b] = t <= l.size() ? 1.0 : 0.0;
    }
    Tensor picked = Mul(PickColumns(trace.steps[t].log_probs, targets),
                        Tensor::FromData({batch}, std::move(mask)));
    Tensor step_sum = Sum(picked);
    total = total.defined() ? Add(total, step_sum) : step_sum;
  }
  return Scale(total, -1.0 / static_cast<double>(batch));
}

void DumpAttention(const DecodeTrace &trace, std::size_t index, const fs::path &dir) {
  if (index >= trace.batch) throw std::out_of_range("dump attention: sample index out of range");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream tsv(dir / "alpha.tsv");
  if (!tsv) throw DataError("cannot write " + (dir / "alpha.tsv").string());
  tsv << "step\tposition\talpha\talpha_prime\n";
  tsv.precision(17);
  for (std::size_t t = 0; t < trace.valid_steps[index]; ++t) {
    const DecodeStep &step = trace.steps[t];
    const std::size_t m = step.alpha.dim(1);
    Image row{1, m, std::vector<std::uint8_t>(m)};
    for (std::size_t j = 0; j < m; ++j) {
      const double a = step.alpha.values()[index * m + j];
      const double ap = step.alpha_prime.values()[index * m + j];
      row.pixels[j] = static_cast<std::uint8_t>(std::clamp(std::floor(ap * 255.0 + 0.5), 0.0, 255.0));
      tsv << t << '\t' << j << '\t' << a << '\t' << ap << '\n';
    }
    char name[32];
    std::snprintf(name, sizeof name, "step_%03zu.pgm", t);
    WritePgm(dir / name, row);
  }
}

AttentionTable ReadAttentionTsv(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing " + path.string());
  AttentionTable table;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t t, j;
    double a, ap;
    if (!(ss >> t >> j >> a >> ap)) throw DataError(path.string() + ": malformed row '" + line + "'");
    if (table.alpha.size() <= t) {
      table.alpha.resize(t + 1);
      table.alpha_prime.resize(t + 1);
    }
    table.alpha[t].push_back(a);
    table.alpha_prime[t].push_back(ap);
  }
  return table;
}

}  // namespace fasda
