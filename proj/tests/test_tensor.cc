// tests/test_tensor.cc

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
#include "fasda/tensor.h"
#include "test_util.h"

using namespace fasda;
using fasda::testing::RandomTensor;

TEST_CASE("tensor construction keeps shape and data consistent") {
  Tensor t = Tensor::FromData({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK(t[4] == 5);
  CHECK_FALSE(t.requires_grad());
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS_AS(Tensor::FromData({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::Zeros({2, 0}), ShapeError);
  CHECK(Tensor::Full({3}, 2.5).values() == std::vector<double>{2.5, 2.5, 2.5});
  CHECK(Tensor::Scalar(4).item() == 4);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("backward of sum gives ones") {
  Tensor x = Tensor::FromData({4}, {1, -2, 3, 0.5}, true);
  Backward(Sum(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("backward of sum of squares gives 2x") {
  Tensor x = Tensor::FromData({2}, {1, 2}, true);
  Backward(Sum(Mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2));
  CHECK(x.grad()[1] == doctest::Approx(4));
}

TEST_CASE("gradients accumulate across calls until zeroed") {
  Tensor x = Tensor::FromData({2}, {1, 2}, true);
  Backward(Sum(x));
  Backward(Sum(Scale(x, 3)));
  CHECK(x.grad()[0] == 4);
  x.ZeroGrad();
  CHECK_FALSE(x.has_grad());
  Backward(Sum(x));
  CHECK(x.grad()[1] == 1);
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor x = Tensor::FromData({2}, {1, 2}, true);
  CHECK_THROWS_AS(Backward(Scale(x, 2)), ShapeError);
}

TEST_CASE("no-grad guard stops recording") {
  Tensor x = Tensor::FromData({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    CHECK_FALSE(GradEnabled());
    y = Sum(Mul(x, x));
  }
  CHECK(GradEnabled());
  CHECK_FALSE(y.requires_grad());
  Backward(y);
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("detach and clone cut the graph") {
  Tensor x = Tensor::FromData({2}, {1, 2}, true);
  Tensor d = Mul(x, x).Detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.values() == std::vector<double>{1, 4});
  Tensor c = x.Clone();
  c.mutable_data()[0] = 9;
  CHECK(x[0] == 1);
  CHECK(c.requires_grad());
}

TEST_CASE("deep chains backpropagate without recursion limits") {
  Tensor x = Tensor::FromData({1}, {0.5}, true);
  Tensor y = x;
  for (int i = 0; i < 20000; ++i) y = Add(y, Scale(x, 1e-4));
  Backward(Sum(y));
  CHECK(x.grad()[0] == doctest::Approx(1 + 20000 * 1e-4));
}

TEST_CASE("shared subexpressions receive summed gradients") {
  Tensor x = Tensor::FromData({1}, {3}, true);
  Tensor y = Mul(x, x);
  Backward(Sum(Add(y, y)));  // 2 x^2
  CHECK(x.grad()[0] == doctest::Approx(12));
}

TEST_CASE("param set order, uniqueness, merge and hash") {
  Rng rng(1);
  ParamSet p;
  p.Add("zeta", RandomTensor({2}, rng));
  p.Add("alpha", RandomTensor({3}, rng));
  p.Add("mid", RandomTensor({1}, rng));
  CHECK_THROWS_AS(p.Add("mid", RandomTensor({1}, rng)), std::invalid_argument);
  std::vector<std::string> names;
  for (const auto &[n, t] : p) names.push_back(n);
  CHECK(names == std::vector<std::string>{"alpha", "mid", "zeta"});
  CHECK(p.NumScalars() == 6);

  ParamSet merged;
  merged.Merge("enc", p);
  CHECK(merged.Contains("enc/alpha"));
  merged.at("enc/alpha").mutable_data()[0] = 42;  // shares storage
  CHECK(p.at("alpha")[0] == 42);

  const std::uint64_t h = p.Hash();
  ParamSet copy = p.Clone();
  CHECK(copy.Hash() == h);
  copy.at("zeta").mutable_data()[1] += 1e-12;
  CHECK(copy.Hash() != h);
  CHECK(p.Hash() == h);
  CHECK_THROWS_AS(p.at("missing"), std::out_of_range);
}
