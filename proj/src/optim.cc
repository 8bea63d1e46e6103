// src/optim.cc

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

#include "fasda/optim.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fasda {

const char *OptimizerName(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kAdadelta: return "adadelta";
  }
  return "?";
}

OptimizerKind ParseOptimizer(const std::string &name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "adadelta") return OptimizerKind::kAdadelta;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {}

void Optimizer::Step(ParamSet &params) {
  for (const auto &[name, t] : params)
    if (!t.has_grad()) throw std::logic_error("optimizer: parameter '" + name + "' has no gradient");
  ++steps_;
  const double t = static_cast<double>(steps_);
  for (auto &[name, param] : params) {
    auto value = param.mutable_data();
    auto grad = param.grad();
    const std::size_t n = value.size();
    switch (config_.kind) {
      case OptimizerKind::kSgd:
        for (std::size_t i = 0; i < n; ++i) value[i] -= config_.lr * grad[i];
        break;
      case OptimizerKind::kAdam: {
        auto &m = slot_a_[name];
        auto &v = slot_b_[name];
        m.resize(n, 0.0);
        v.resize(n, 0.0);
        const double c1 = 1.0 - std::pow(config_.beta1, t);
        const double c2 = 1.0 - std::pow(config_.beta2, t);
        for (std::size_t i = 0; i < n; ++i) {
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
          value[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
        }
        break;
      }
      case OptimizerKind::kAdadelta: {
        auto &eg = slot_a_[name];
        auto &edx = slot_b_[name];
        eg.resize(n, 0.0);
        edx.resize(n, 0.0);
        const double rho = config_.rho, e = config_.adadelta_eps;
        for (std::size_t i = 0; i < n; ++i) {
          eg[i] = rho * eg[i] + (1.0 - rho) * grad[i] * grad[i];
          double dx = -std::sqrt(edx[i] + e) / std::sqrt(eg[i] + e) * grad[i];
          edx[i] = rho * edx[i] + (1.0 - rho) * dx * dx;
          value[i] += config_.lr * dx;
        }
        break;
      }
    }
  }
  params.ZeroGrad();
}

ParamSet Optimizer::ExportState() const {
  ParamSet out;
  for (const auto &[name, v] : slot_a_) out.Add("a/" + name, Tensor::FromData({v.size()}, v));
  for (const auto &[name, v] : slot_b_) out.Add("b/" + name, Tensor::FromData({v.size()}, v));
  out.Add("steps", Tensor::Scalar(static_cast<double>(steps_)));
  return out;
}

void Optimizer::ImportState(const ParamSet &state) {
  slot_a_.clear();
  slot_b_.clear();
  steps_ = 0;
  for (const auto &[name, t] : state) {
    if (name == "steps") {
      steps_ = static_cast<std::uint64_t>(t.item());
    } else if (name.rfind("a/", 0) == 0) {
      slot_a_[name.substr(2)] = t.values();
    } else if (name.rfind("b/", 0) == 0) {
      slot_b_[name.substr(2)] = t.values();
    } else {
      throw std::invalid_argument("optimizer state: unexpected entry '" + name + "'");
    }
  }
}

double GradCheck(const std::function<Tensor(const ParamSet &)> &f, ParamSet &params,
                 double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  params.ZeroGrad();
  Backward(f(params));
  std::map<std::string, std::vector<double>> analytic;
  for (const auto &[name, t] : params)
    analytic[name] = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                  : std::vector<double>(t.numel(), 0.0);
  params.ZeroGrad();

  NoGradGuard no_grad;
  double worst = 0.0;
  for (auto &[name, t] : params) {
    auto value = t.mutable_data();
    const std::vector<double> &a = analytic[name];
    double err = 0.0, scale = 1e-12;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      auto at = [&](double offset) {
        value[i] = saved + offset;
        return f(params).item();
      };
      const double d1 = at(eps) - at(-eps);
      const double d2 = at(2 * eps) - at(-2 * eps);
      value[i] = saved;
      const double numeric = (8 * d1 - d2) / (12 * eps);
      err = std::max(err, std::abs(a[i] - numeric));
      scale = std::max({scale, std::abs(a[i]), std::abs(numeric)});
    }
    worst = std::max(worst, err / scale);
  }
  return worst;
}

}  // namespace fasda
