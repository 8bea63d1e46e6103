// src/tensor.cc

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

#include "fasda/tensor.h"

#include <sstream>
#include <unordered_set>

#include "fasda/util.h"

namespace fasda {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t ShapeSize(const Shape &shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeString(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::Zeros(Shape shape, bool requires_grad) {
  return Full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::Full(Shape shape, double value, bool requires_grad) {
  std::size_t n = ShapeSize(shape);
  return FromData(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::FromData(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor: empty shape");
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + ShapeString(shape));
  if (ShapeSize(shape) != data.size())
    throw ShapeError("tensor: shape " + ShapeString(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::Scalar(double value) { return FromData({1}, {value}); }

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item: tensor of shape " + ShapeString(shape()) + " is not a scalar");
  return node_->data[0];
}

Tensor Tensor::Detach() const { return FromData(shape(), node_->data, false); }

Tensor Tensor::Clone() const {
  Tensor t = FromData(shape(), node_->data, node_->requires_grad);
  return t;
}

bool GradEnabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void Backward(const Tensor &loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? ShapeString(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; recurrent unrolling makes graphs deep.
  std::vector<detail::Node *> order;
  std::unordered_set<detail::Node *> visited;
  std::vector<std::pair<detail::Node *, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node *parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node *node : order)
    if (node->backward) node->grad.assign(node->data.size(), 0.0);
  loss.node()->EnsureGrad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node *node = *it;
    if (node->backward) node->backward(*node);
  }
}

void ParamSet::Add(const std::string &name, Tensor t) {
  if (!entries_.emplace(name, std::move(t)).second)
    throw std::invalid_argument("paramset: duplicate parameter '" + name + "'");
}

Tensor &ParamSet::at(const std::string &name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("paramset: no parameter '" + name + "'");
  return it->second;
}

const Tensor &ParamSet::at(const std::string &name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("paramset: no parameter '" + name + "'");
  return it->second;
}

void ParamSet::ZeroGrad() {
  for (auto &[name, t] : entries_) t.ZeroGrad();
}

std::size_t ParamSet::NumScalars() const {
  std::size_t n = 0;
  for (const auto &[name, t] : entries_) n += t.numel();
  return n;
}

ParamSet ParamSet::Clone() const {
  ParamSet out;
  for (const auto &[name, t] : entries_) out.Add(name, t.Clone());
  return out;
}

void ParamSet::Merge(const std::string &prefix, const ParamSet &other) {
  for (const auto &[name, t] : other) Add(prefix + "/" + name, t);
}

std::uint64_t ParamSet::Hash() const {
  Fnv1a h;
  for (const auto &[name, t] : entries_) {
    h.Update(name);
    for (std::size_t d : t.shape()) h.UpdateValue(d);
    h.Update(t.data().data(), t.numel() * sizeof(double));
  }
  return h.digest();
}

}  // namespace fasda
