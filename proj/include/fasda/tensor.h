// include/fasda/tensor.h

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

#ifndef FASDA_TENSOR_H_
#define FASDA_TENSOR_H_

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fasda {

using Shape = std::vector<std::size_t>;

std::size_t ShapeSize(const Shape &shape);
std::string ShapeString(const Shape &shape);

/// Raised for any violated operand contract (shapes, indices, empty inputs).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node &)> backward;

  std::vector<double> &EnsureGrad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient.
///
/// A Tensor is a cheap handle: copies share the same storage.  Use Clone()
/// for an independent copy and Detach() for a copy that is cut out of the
/// recorded graph.  The graph is built on the fly by the operations in
/// ops.h and released when the last handle to the result goes away.
class Tensor {
 public:
  Tensor() = default;

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Full(Shape shape, double value, bool requires_grad = false);
  static Tensor FromData(Shape shape, std::vector<double> data,
                         bool requires_grad = false);
  static Tensor Scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double> &values() const { return node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->EnsureGrad(); }
  void ZeroGrad() { node_->grad.clear(); }

  Tensor Detach() const;
  Tensor Clone() const;

  detail::Node *node() const { return node_.get(); }
  const std::shared_ptr<detail::Node> &shared_node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Whether operations currently record backward closures on this thread.
bool GradEnabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

 private:
  bool previous_;
};

/// Backpropagates from a scalar loss.  Leaf gradients accumulate across
/// calls until zeroed; interior gradients are recomputed every call.
void Backward(const Tensor &loss);

/// Named parameters, iterated in lexicographic name order.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void Add(const std::string &name, Tensor t);
  bool Contains(const std::string &name) const { return entries_.count(name) != 0; }
  Tensor &at(const std::string &name);
  const Tensor &at(const std::string &name) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  void ZeroGrad();
  std::size_t NumScalars() const;
  /// Deep copy; the copies are new leaves with the same requires_grad flags.
  ParamSet Clone() const;
  /// Merges another set under a name prefix ("prefix/name").
  void Merge(const std::string &prefix, const ParamSet &other);
  /// FNV-1a over names, shapes and the raw bytes of every value.
  std::uint64_t Hash() const;

 private:
  Map entries_;
};

}  // namespace fasda

#endif  // FASDA_TENSOR_H_
