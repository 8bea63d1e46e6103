// tests/test_optim.cc

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
#include "fasda/ops.h"
#include "fasda/optim.h"
#include "test_util.h"

using namespace fasda;
using fasda::testing::RandomTensor;

namespace {

ParamSet OneParam(double value, double grad) {
  ParamSet p;
  Tensor t = Tensor::FromData({1}, {value}, true);
  t.mutable_grad()[0] = grad;
  p.Add("w", t);
  return p;
}

OptimizerConfig Config(OptimizerKind kind, double lr) {
  OptimizerConfig c;
  c.kind = kind;
  c.lr = lr;
  return c;
}

}  // namespace

TEST_CASE("sgd step") {
  ParamSet p = OneParam(1.0, 1.0);
  Optimizer opt(Config(OptimizerKind::kSgd, 0.1));
  opt.Step(p);
  CHECK(p.at("w")[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK_FALSE(p.at("w").has_grad());
  CHECK(opt.steps() == 1);
}

TEST_CASE("adam first step matches the bias-corrected update") {
  ParamSet p = OneParam(1.0, 2.0);
  Optimizer opt(Config(OptimizerKind::kAdam, 0.1));
  opt.Step(p);
  // m = 0.1*2, v = 0.001*4; corrected m = 2, v = 4.
  const double expected = 1.0 - 0.1 * 2.0 / (std::sqrt(4.0) + 1e-8);
  CHECK(p.at("w")[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("adam second step") {
  ParamSet p = OneParam(1.0, 2.0);
  Optimizer opt(Config(OptimizerKind::kAdam, 0.1));
  opt.Step(p);
  const double after_one = p.at("w")[0];
  p.at("w").mutable_grad()[0] = -1.0;
  opt.Step(p);
  const double m = 0.9 * 0.2 + 0.1 * -1.0, v = 0.999 * 0.004 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(p.at("w")[0] == doctest::Approx(after_one - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adadelta first step") {
  ParamSet p = OneParam(0.5, 1.0);
  Optimizer opt(Config(OptimizerKind::kAdadelta, 1.0));
  opt.Step(p);
  const double eg = 0.05;
  const double dx = -std::sqrt(1e-6) / std::sqrt(eg + 1e-6);
  CHECK(p.at("w")[0] == doctest::Approx(0.5 + dx).epsilon(1e-14));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  for (OptimizerKind kind : {OptimizerKind::kSgd, OptimizerKind::kAdam, OptimizerKind::kAdadelta}) {
    ParamSet p = OneParam(0.25, 0.0);
    Optimizer opt(Config(kind, 0.5));
    opt.Step(p);
    CHECK(p.at("w")[0] == 0.25);
  }
}

TEST_CASE("missing gradients are rejected") {
  ParamSet p;
  p.Add("w", Tensor::Zeros({2}, true));
  Optimizer opt;
  CHECK_THROWS_AS(opt.Step(p), std::logic_error);
}

TEST_CASE("optimizer state round trip continues identically") {
  Rng rng(4);
  ParamSet a;
  a.Add("w", RandomTensor({3, 2}, rng));
  Optimizer oa(Config(OptimizerKind::kAdam, 0.01));
  auto loss = [](const ParamSet &p) { return Sum(Mul(Tanh(p.at("w")), p.at("w"))); };
  for (int i = 0; i < 3; ++i) {
    Backward(loss(a));
    oa.Step(a);
  }
  // Continue a copy from the exported state.
  ParamSet b = a.Clone();
  Optimizer ob(Config(OptimizerKind::kAdam, 0.01));
  ob.ImportState(oa.ExportState());
  CHECK(ob.steps() == 3);
  Backward(loss(a));
  oa.Step(a);
  Backward(loss(b));
  ob.Step(b);
  CHECK(a.Hash() == b.Hash());
}

TEST_CASE("optimizer names parse") {
  CHECK(ParseOptimizer("adam") == OptimizerKind::kAdam);
  CHECK(ParseOptimizer("adadelta") == OptimizerKind::kAdadelta);
  CHECK(ParseOptimizer("sgd") == OptimizerKind::kSgd);
  CHECK_THROWS_AS(ParseOptimizer("rmsprop"), std::invalid_argument);
}

TEST_CASE("grad check on a single summed parameter") {
  Rng rng(2);
  ParamSet p;
  p.Add("x", RandomTensor({5}, rng));
  CHECK(GradCheck([](const ParamSet &q) { return Sum(q.at("x")); }, p, 1e-3) < 1e-10);
  CHECK_THROWS_AS(GradCheck([](const ParamSet &q) { return Sum(q.at("x")); }, p, 0.0),
                  std::invalid_argument);
}

TEST_CASE("grad check on a small composite function") {
  Rng rng(8);
  ParamSet p;
  p.Add("a", RandomTensor({3, 4}, rng));
  p.Add("b", RandomTensor({4, 2}, rng));
  auto f = [](const ParamSet &q) {
    return Sum(LogSoftmax(Tanh(MatMul(q.at("a"), q.at("b")))));
  };
  CHECK(GradCheck(f, p, 1e-5) < 1e-6);
}
