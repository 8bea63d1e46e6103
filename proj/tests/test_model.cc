// tests/test_model.cc

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


#include <cmath>

#include "doctest.h"
#include "fasda/model.h"
#include "fasda/ops.h"
#include "fasda/optim.h"
#include "test_util.h"

using namespace fasda;
using fasda::testing::RandomTensor;
using fasda::testing::TempDir;

namespace {

Image RandomImage(const Geometry &g, Rng &rng) {
  Image img{g.height, g.width(), std::vector<std::uint8_t>(g.height * g.width())};
  for (auto &p : img.pixels) p = static_cast<std::uint8_t>(rng.Below(256));
  return img;
}

EncoderConfig TinyEncoder() {
  EncoderConfig c;
  c.conv1_channels = 2;
  c.conv2_channels = 2;
  c.feature_dim = 3;
  c.column_stride = 4;
  return c;
}

DecoderConfig TinyDecoder() {
  DecoderConfig c;
  c.hidden = 3;
  c.attention_dim = 3;
  c.embed_dim = 2;
  return c;
}

void ZeroAll(ParamSet &p) {
  for (auto &[name, t] : p)
    for (double &v : t.mutable_data()) v = 0;
}

}  // namespace

TEST_CASE("encoder sequence length is ceil(W / stride)") {
  Rng rng(1);
  for (std::size_t stride : {1, 3, 4, 5}) {
    EncoderConfig c = TinyEncoder();
    c.column_stride = stride;
    Geometry g{8, 5, 3};
    Encoder enc(c, g, rng);
    CHECK(enc.SequenceLength() == (g.width() + stride - 1) / stride);
    Tensor out = enc.Encode(RandomImage(g, rng));
    CHECK(out.shape() == Shape{enc.SequenceLength(), 1, 3});
  }
}

TEST_CASE("encoder with zero parameters maps a blank image to zeros") {
  Rng rng(2);
  Geometry g{8, 4, 2};
  Encoder enc(TinyEncoder(), g, rng);
  ZeroAll(enc.params());
  Image blank{g.height, g.width(), std::vector<std::uint8_t>(g.height * g.width(), 0)};
  Tensor out = enc.Encode(blank);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("encoder rejects mismatched images") {
  Rng rng(3);
  Encoder enc(TinyEncoder(), Geometry{8, 4, 2}, rng);
  CHECK_THROWS_AS(enc.Encode(RandomImage(Geometry{8, 4, 3}, rng)), ShapeError);
  CHECK_THROWS_AS(enc.Encode(RandomImage(Geometry{10, 4, 2}, rng)), ShapeError);
}

TEST_CASE("encoder gradients match finite differences") {
  Rng rng(4);
  Geometry g{8, 4, 2};
  for (bool recurrent : {false, true}) {
    EncoderConfig c = TinyEncoder();
    c.recurrent = recurrent;
    Encoder enc(c, g, rng);
    Image a = RandomImage(g, rng), b = RandomImage(g, rng);
    std::vector<const Image *> batch{&a, &b};
    Tensor weights = RandomTensor({enc.SequenceLength(), 2, 3}, rng, false);
    auto f = [&](const ParamSet &) { return Sum(Mul(enc.Encode(batch), weights)); };
    CHECK(GradCheck(f, enc.params(), 1e-3) < 1e-6);
  }
}

TEST_CASE("lstm step hand values") {
  Tensor w = Tensor::Zeros({2, 4});
  Tensor b = Tensor::Zeros({4});
  LstmState zero{Tensor::Zeros({1, 1}), Tensor::Zeros({1, 1})};
  LstmState s = LstmStep(Tensor::Full({1, 1}, 3.0), zero, w, b);
  CHECK(s.h.item() == 0.0);
  CHECK(s.c.item() == 0.0);
  // Gates are all 0.5 and the candidate is 0, so c halves.
  LstmState prev{Tensor::Zeros({1, 1}), Tensor::Full({1, 1}, 1.0)};
  s = LstmStep(Tensor::Full({1, 1}, 3.0), prev, w, b);
  CHECK(s.c.item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.h.item() == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-15));
}

TEST_CASE("lstm step gradients") {
  Rng rng(5);
  ParamSet p;
  p.Add("x", RandomTensor({2, 3}, rng));
  p.Add("h", RandomTensor({2, 2}, rng));
  p.Add("c", RandomTensor({2, 2}, rng));
  p.Add("w", RandomTensor({5, 8}, rng));
  p.Add("b", RandomTensor({8}, rng));
  Tensor r = RandomTensor({2, 2}, rng, false);
  auto f = [&](const ParamSet &q) {
    LstmState s = LstmStep(q.at("x"), {q.at("h"), q.at("c")}, q.at("w"), q.at("b"));
    return Add(Sum(Mul(s.h, r)), Sum(s.c));
  };
  CHECK(GradCheck(f, p, 1e-3) < 1e-6);
}

TEST_CASE("inclusive reweight hand values") {
  IAConfig ia{true, 0.75, 1};
  auto a = InclusiveReweight(std::vector<double>{1, 0, 0}, ia);
  CHECK(a[0] == doctest::Approx(0.875));
  CHECK(a[1] == doctest::Approx(0.125));
  CHECK(a[2] == doctest::Approx(0.0));
  a = InclusiveReweight(std::vector<double>{0.5, 0, 0.5}, ia);
  CHECK(a[0] == doctest::Approx(0.4375));
  CHECK(a[1] == doctest::Approx(0.125));
  CHECK(a[2] == doctest::Approx(0.4375));
  // eta = 2, lambda = 0.5: c = 0.5 / 6, interior point spreads 2c, c to its neighbours.
  a = InclusiveReweight(std::vector<double>{0, 0, 1, 0, 0}, IAConfig{true, 0.5, 2});
  CHECK(a[0] == doctest::Approx(0.5 / 6));
  CHECK(a[1] == doctest::Approx(1.0 / 6));
  CHECK(a[2] == doctest::Approx(0.5));
  CHECK(a[3] == doctest::Approx(1.0 / 6));
  CHECK(a[4] == doctest::Approx(0.5 / 6));
}

TEST_CASE("inclusive reweight properties") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + rng.Below(10);
    IAConfig ia{true, rng.Uniform(0, 1), 1 + rng.Below(m - 1)};
    std::vector<double> x(m), y(m);
    double sx = 0;
    for (std::size_t j = 0; j < m; ++j) {
      x[j] = rng.Uniform(0, 1);
      y[j] = rng.Uniform(0, 1);
      sx += x[j];
    }
    auto rx = InclusiveReweight(x, ia), ry = InclusiveReweight(y, ia);
    double s = 0;
    for (double v : rx) s += v;
    CHECK(s == doctest::Approx(sx).epsilon(1e-12));
    std::vector<double> combo(m);
    for (std::size_t j = 0; j < m; ++j) combo[j] = 2 * x[j] - 0.5 * y[j];
    auto rc = InclusiveReweight(combo, ia);
    for (std::size_t j = 0; j < m; ++j) {
      CHECK(rc[j] == doctest::Approx(2 * rx[j] - 0.5 * ry[j]).epsilon(1e-12));
      CHECK(rx[j] >= 0);
    }
    std::vector<double> uniform(m, 1.0 / m);
    for (double v : InclusiveReweight(uniform, ia)) CHECK(v == doctest::Approx(1.0 / m));
    auto same = InclusiveReweight(x, IAConfig{true, 1.0, ia.eta});
    for (std::size_t j = 0; j < m; ++j) CHECK(same[j] == doctest::Approx(x[j]).epsilon(1e-15));
    Tensor r = InclusiveMatrix(m, ia);
    for (std::size_t j = 0; j < m; ++j) {
      double v = 0;
      for (std::size_t i = 0; i < m; ++i) v += x[i] * r[i * m + j];
      CHECK(v == doctest::Approx(rx[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("inclusive reweight rejects bad settings") {
  std::vector<double> a{0.5, 0.5};
  CHECK_THROWS_AS(InclusiveReweight(a, IAConfig{true, 0.75, 2}), std::invalid_argument);
  CHECK_THROWS_AS(InclusiveReweight(a, IAConfig{true, 0.75, 0}), std::invalid_argument);
  CHECK_THROWS_AS(InclusiveReweight(a, IAConfig{true, 1.5, 1}), std::invalid_argument);
}

TEST_CASE("attention weights hand cases") {
  Rng rng(7);
  DecoderConfig c = TinyDecoder();
  c.attention_dim = 1;
  AttentionDecoder dec(c, 3, 5, rng);
  ZeroAll(dec.params());
  Tensor state = RandomTensor({1, 3}, rng, false);

  Tensor w = dec.AttentionWeights(RandomTensor({4, 1, 1}, rng, false), state);
  for (double v : w.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(dec.AttentionWeights(RandomTensor({1, 1, 1}, rng, false), state).item() == 1.0);

  dec.params().at("att/w").mutable_data()[0] = 1.0;
  Tensor projected = Tensor::FromData({2, 1, 1}, {std::atanh(std::log(2.0)), 0.0});
  w = dec.AttentionWeights(projected, state);
  CHECK(w[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("attention weights form a distribution") {
  Rng rng(8);
  AttentionDecoder dec(TinyDecoder(), 3, 5, rng);
  Tensor seq = RandomTensor({6, 4, 3}, rng, false, -3, 3);
  Tensor w = dec.AttentionWeights(dec.ProjectSequence(seq), RandomTensor({4, 3}, rng, false));
  CHECK(w.shape() == Shape{4, 6});
  for (std::size_t b = 0; b < 4; ++b) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(w[b * 6 + j] > 0);
      s += w[b * 6 + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("context is the weighted sum of features") {
  Tensor seq = Tensor::FromData({3, 1, 2}, {1, 2, 3, 4, 5, 6});
  Tensor one_hot = Tensor::FromData({1, 3}, {0, 1, 0});
  Tensor ctx = AttentionDecoder::Context(seq, one_hot);
  CHECK(ctx[0] == 3);
  CHECK(ctx[1] == 4);
  ctx = AttentionDecoder::Context(seq, Tensor::FromData({1, 3}, {0.5, 0, 0.5}));
  CHECK(ctx[0] == 3);
  CHECK(ctx[1] == 4);
}

TEST_CASE("teacher forcing runs one step per character plus end of sequence") {
  Rng rng(9);
  AttentionDecoder dec(TinyDecoder(), 3, 5, rng);
  Tensor seq = RandomTensor({4, 2, 3}, rng, false);
  DecodeTrace t = dec.TeacherForced(seq, {{0, 1, 2}, {3}}, IAConfig{});
  CHECK(t.steps.size() == 4);
  CHECK(t.valid_steps == std::vector<std::size_t>{4, 2});
  CHECK(t.teacher_forced);
  for (const DecodeStep &s : t.steps) {
    CHECK(s.alpha.shape() == Shape{2, 4});
    CHECK(s.cr.shape() == Shape{2, 3});
    CHECK(s.cr_plus.shape() == Shape{2, 3});
    CHECK(s.log_probs.shape() == Shape{2, 5});
    for (std::size_t i = 0; i < s.alpha.numel(); ++i) CHECK(s.alpha[i] == s.alpha_prime[i]);
  }
  CHECK_THROWS(dec.TeacherForced(seq, {{0}}, IAConfig{}));
  CHECK_THROWS_AS(dec.TeacherForced(seq, {{0}, {1}}, IAConfig{true, 0.75, 4}),
                  std::invalid_argument);
}

TEST_CASE("inclusive attending changes the weights used") {
  Rng rng(10);
  AttentionDecoder dec(TinyDecoder(), 3, 5, rng);
  Tensor seq = RandomTensor({5, 1, 3}, rng, false, -3, 3);
  IAConfig ia{true, 0.75, 1};
  DecodeTrace t = dec.TeacherForced(seq, {{1, 2}}, ia);
  for (const DecodeStep &s : t.steps) {
    auto expect = InclusiveReweight(s.alpha.data(), ia);
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(s.alpha_prime[j] == doctest::Approx(expect[j]).epsilon(1e-12));
  }
}

TEST_CASE("greedy decoding terminates") {
  Rng rng(11);
  AttentionDecoder dec(TinyDecoder(), 3, 5, rng);
  Tensor seq = RandomTensor({4, 3, 3}, rng, false);
  DecodeTrace t = dec.Greedy(seq, IAConfig{}, 6);
  CHECK(t.steps.size() <= 6);
  auto preds = t.Predictions();
  REQUIRE(preds.size() == 3);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(t.valid_steps[b] <= 6);
    CHECK(preds[b].size() <= t.valid_steps[b]);
    for (std::size_t c : preds[b]) CHECK(c != dec.eos());
  }
  CHECK_THROWS_AS(dec.Greedy(seq, IAConfig{}, 0), std::invalid_argument);
  // A decoder that always prefers end of sequence stops after one step.
  ZeroAll(dec.params());
  dec.params().at("out/b").mutable_data()[dec.eos()] = 5.0;
  t = dec.Greedy(seq, IAConfig{}, 6);
  CHECK(t.steps.size() == 1);
  CHECK(t.Predictions()[0].empty());
}

TEST_CASE("loss of uniform outputs is (L+1) ln C") {
  Rng rng(12);
  AttentionDecoder dec(TinyDecoder(), 3, 5, rng);
  for (double &v : dec.params().at("out/U").mutable_data()) v = 0;
  for (double &v : dec.params().at("out/b").mutable_data()) v = 0;
  Tensor seq = RandomTensor({4, 2, 3}, rng, false);
  Tensor loss = AttentionLoss(dec.TeacherForced(seq, {{0, 1, 2}, {3}}, IAConfig{}));
  // Mean over the batch of (3+1) ln 5 and (1+1) ln 5.
  CHECK(loss.item() == doctest::Approx(3.0 * std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("decoder loss gradients match finite differences") {
  Rng rng(14);
  AttentionDecoder dec(TinyDecoder(), 3, 5, rng);
  for (bool ia_on : {false, true}) {
    ParamSet p = dec.params();
    p.Add("seq", RandomTensor({4, 2, 3}, rng));
    IAConfig ia{ia_on, 0.75, 1};
    auto f = [&](const ParamSet &q) {
      return AttentionLoss(dec.TeacherForced(q.at("seq"), {{0, 1, 2}, {3}}, ia));
    };
    CHECK(GradCheck(f, p, 1e-3) < 1e-6);
  }
}

TEST_CASE("a single sample can be overfit") {
  Rng rng(15);
  Geometry g{16, 8, 2};
  Alphabet alphabet = Alphabet::Digits();
  EncoderConfig ec;
  ec.recurrent = false;
  Encoder enc(ec, g, rng);
  AttentionDecoder dec(DecoderConfig{}, ec.feature_dim, alphabet.num_classes(), rng);
  Sample s = RenderSample({4, 7}, DomainSpec{}, 0, g, alphabet);
  ParamSet p;
  p.Merge("encoder/", enc.params());
  p.Merge("decoder/", dec.params());
  OptimizerConfig oc;
  oc.kind = OptimizerKind::kAdam;
  oc.lr = 0.003;
  Optimizer opt(oc);
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    Tensor loss = AttentionLoss(dec.TeacherForced(enc.Encode(s.image), {s.label}, IAConfig{}));
    losses.push_back(loss.item());
    p.ZeroGrad();
    Backward(loss);
    opt.Step(p);
  }
  std::size_t down = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) down += losses[i] <= losses[i - 1];
  CHECK(down >= 0.9 * (losses.size() - 1));
  CHECK(losses.back() < 0.1 * losses.front());
  auto pred = dec.Greedy(enc.Encode(s.image), IAConfig{}, 3).Predictions();
  CHECK(pred[0] == s.label);
}

TEST_CASE("decoding is deterministic") {
  Rng a(16), b(16);
  AttentionDecoder d1(TinyDecoder(), 3, 5, a), d2(TinyDecoder(), 3, 5, b);
  Rng r(17);
  Tensor seq = RandomTensor({4, 2, 3}, r, false);
  auto l1 = AttentionLoss(d1.TeacherForced(seq, {{0, 1}, {2}}, IAConfig{})).item();
  auto l2 = AttentionLoss(d2.TeacherForced(seq, {{0, 1}, {2}}, IAConfig{})).item();
  CHECK(l1 == l2);
  CHECK(d1.params().Hash() == d2.params().Hash());
}

TEST_CASE("attention dump writes heatmaps and a readable table") {
  TempDir dir("dump");
  DecodeTrace t;
  t.batch = 1;
  t.valid_steps = {2};
  DecodeStep one_hot, uniform;
  one_hot.alpha = one_hot.alpha_prime = Tensor::FromData({1, 4}, {0, 1, 0, 0});
  uniform.alpha = Tensor::FromData({1, 4}, {0.1, 0.2, 0.3, 0.4});
  uniform.alpha_prime = Tensor::FromData({1, 4}, {0.25, 0.25, 0.25, 0.25});
  t.steps = {one_hot, uniform, uniform};
  DumpAttention(t, 0, dir.path());
  CHECK(ReadPgm(dir / "step_000.pgm").pixels == std::vector<std::uint8_t>{0, 255, 0, 0});
  CHECK(ReadPgm(dir / "step_001.pgm").pixels == std::vector<std::uint8_t>{64, 64, 64, 64});
  CHECK_FALSE(std::filesystem::exists(dir / "step_002.pgm"));
  AttentionTable table = ReadAttentionTsv(dir / "alpha.tsv");
  REQUIRE(table.alpha.size() == 2);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::abs(table.alpha[1][j] - uniform.alpha[j]) < 1e-9);
    CHECK(std::abs(table.alpha_prime[0][j] - one_hot.alpha_prime[j]) < 1e-9);
  }
  CHECK_THROWS_AS(DumpAttention(t, 1, dir.path()), std::out_of_range);
}
