// include/fasda/optim.h

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

#ifndef FASDA_OPTIM_H_
#define FASDA_OPTIM_H_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fasda/tensor.h"

namespace fasda {

enum class OptimizerKind { kSgd, kAdam, kAdadelta };

const char *OptimizerName(OptimizerKind kind);
OptimizerKind ParseOptimizer(const std::string &name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 0.001;
  double beta1 = 0.9;    // adam
  double beta2 = 0.999;  // adam
  double eps = 1e-8;     // adam; adadelta uses adadelta_eps
  double rho = 0.95;     // adadelta
  double adadelta_eps = 1e-6;
};

/// First-order optimizer with per-parameter slot state.  Step() consumes
/// the gradients of every parameter in the set and zeroes them.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});

  void Step(ParamSet &params);

  const OptimizerConfig &config() const { return config_; }
  std::uint64_t steps() const { return steps_; }

  /// Slot state as tensors named "<slot>/<param>" plus "steps".
  ParamSet ExportState() const;
  void ImportState(const ParamSet &state);

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, std::vector<double>> slot_a_;  // adam m / adadelta E[g^2]
  std::map<std::string, std::vector<double>> slot_b_;  // adam v / adadelta E[dx^2]
};

/// Max over parameter tensors of
///   max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|, 1e-12)
/// where numeric is the five-point central difference with step `eps`.
/// Leaves the parameter values as they were and their gradients zeroed.
double GradCheck(const std::function<Tensor(const ParamSet &)> &f, ParamSet &params,
                 double eps);

}  // namespace fasda

#endif  // FASDA_OPTIM_H_
