// src/ops.cc

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

#include "fasda/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace fasda {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using BackwardFn = std::function<void(Node &)>;

Tensor Record(Shape shape, std::vector<double> data, const std::vector<Tensor> &inputs,
              BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool record = false;
  if (GradEnabled())
    for (const Tensor &t : inputs) record = record || t.requires_grad();
  if (record) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor &t : inputs) node->parents.push_back(t.shared_node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

[[noreturn]] void Mismatch(const char *op, const Tensor &a, const Tensor &b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + ShapeString(a.shape()) + " vs " +
                   ShapeString(b.shape()));
}

void Require(bool ok, const char *op, const std::string &what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

// True when b's shape equals a trailing run of a's shape.
bool IsSuffix(const Shape &a, const Shape &b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

std::size_t LastDim(const Tensor &t) { return t.shape().back(); }

template <typename Fwd, typename Deriv>
Tensor Unary(const Tensor &a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  const auto &x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return Record(a.shape(), std::move(out), {a}, [deriv](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * deriv(p.data[i], n.data[i]);
  });
}

}  // namespace

Tensor MatMul(const Tensor &a, const Tensor &b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) Mismatch("matmul", a, b);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m);
  MutMap(out.data(), n, m).noalias() =
      ConstMap(a.data().data(), n, k) * ConstMap(b.data().data(), k, m);
  return Record({n, m}, std::move(out), {a, b}, [n, k, m](Node &node) {
    Node &pa = *node.parents[0];
    Node &pb = *node.parents[1];
    ConstMap dout(node.grad.data(), n, m);
    if (pa.requires_grad)
      MutMap(pa.EnsureGrad().data(), n, k).noalias() +=
          dout * ConstMap(pb.data.data(), k, m).transpose();
    if (pb.requires_grad)
      MutMap(pb.EnsureGrad().data(), k, m).noalias() +=
          ConstMap(pa.data.data(), n, k).transpose() * dout;
  });
}

Tensor Add(const Tensor &a, const Tensor &b) {
  if (!IsSuffix(a.shape(), b.shape())) Mismatch("add", a, b);
  const std::size_t inner = b.numel();
  std::vector<double> out(a.values());
  const auto &bv = b.values();
  for (std::size_t o = 0; o < out.size(); o += inner)
    for (std::size_t i = 0; i < inner; ++i) out[o + i] += bv[i];
  return Record(a.shape(), std::move(out), {a, b}, [inner](Node &n) {
    Node &pa = *n.parents[0];
    Node &pb = *n.parents[1];
    if (pa.requires_grad) {
      auto &g = pa.EnsureGrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      auto &g = pb.EnsureGrad();
      for (std::size_t o = 0; o < n.grad.size(); o += inner)
        for (std::size_t i = 0; i < inner; ++i) g[i] += n.grad[o + i];
    }
  });
}

Tensor Sub(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape()) Mismatch("sub", a, b);
  std::vector<double> out(a.values());
  const auto &bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Record(a.shape(), std::move(out), {a, b}, [](Node &n) {
    Node &pa = *n.parents[0];
    Node &pb = *n.parents[1];
    if (pa.requires_grad) {
      auto &g = pa.EnsureGrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      auto &g = pb.EnsureGrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor Mul(const Tensor &a, const Tensor &b) {
  if (!IsSuffix(a.shape(), b.shape())) Mismatch("mul", a, b);
  const std::size_t inner = b.numel();
  std::vector<double> out(a.values());
  const auto &bv = b.values();
  for (std::size_t o = 0; o < out.size(); o += inner)
    for (std::size_t i = 0; i < inner; ++i) out[o + i] *= bv[i];
  return Record(a.shape(), std::move(out), {a, b}, [inner](Node &n) {
    Node &pa = *n.parents[0];
    Node &pb = *n.parents[1];
    if (pa.requires_grad) {
      auto &g = pa.EnsureGrad();
      for (std::size_t o = 0; o < g.size(); o += inner)
        for (std::size_t i = 0; i < inner; ++i) g[o + i] += n.grad[o + i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto &g = pb.EnsureGrad();
      for (std::size_t o = 0; o < n.grad.size(); o += inner)
        for (std::size_t i = 0; i < inner; ++i) g[i] += n.grad[o + i] * pa.data[o + i];
    }
  });
}

Tensor Scale(const Tensor &a, double factor) {
  return Unary(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor Tanh(const Tensor &a) {
  return Unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor Sigmoid(const Tensor &a) {
  return Unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Log(const Tensor &a) {
  return Unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor Exp(const Tensor &a) {
  return Unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor Softmax(const Tensor &a) {
  const std::size_t c = LastDim(a);
  const std::size_t rows = a.numel() / c;
  std::vector<double> out(a.numel());
  const auto &x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double *xr = x.data() + r * c;
    double *yr = out.data() + r * c;
    double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yr[j] /= z;
  }
  return Record(a.shape(), std::move(out), {a}, [rows, c](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double *y = n.data.data() + r * c;
      const double *dy = n.grad.data() + r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor LogSoftmax(const Tensor &a) {
  const std::size_t c = LastDim(a);
  const std::size_t rows = a.numel() / c;
  std::vector<double> out(a.numel());
  const auto &x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double *xr = x.data() + r * c;
    double *yr = out.data() + r * c;
    double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xr[j] - mx);
    double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] - lse;
  }
  return Record(a.shape(), std::move(out), {a}, [rows, c](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double *y = n.data.data() + r * c;
      const double *dy = n.grad.data() + r * c;
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += dy[j];
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += dy[j] - std::exp(y[j]) * total;
    }
  });
}

Tensor Concat(const std::vector<Tensor> &parts) {
  Require(!parts.empty(), "concat", "no operands");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor &t : parts) {
    Shape tl(t.shape().begin(), t.shape().end() - 1);
    if (tl != lead) Mismatch("concat", parts[0], t);
    widths.push_back(LastDim(t));
    total += LastDim(t);
  }
  const std::size_t rows = ShapeSize(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto &src = parts[p].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * widths[p], widths[p], out.data() + r * total + offset);
    offset += widths[p];
  }
  Shape shape = lead;
  shape.push_back(total);
  return Record(std::move(shape), std::move(out), parts, [rows, total, widths](Node &n) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      Node &parent = *n.parents[p];
      if (parent.requires_grad) {
        auto &g = parent.EnsureGrad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[p]; ++j)
            g[r * widths[p] + j] += n.grad[r * total + off + j];
      }
      off += widths[p];
    }
  });
}

Tensor SliceLast(const Tensor &a, std::size_t begin, std::size_t end) {
  const std::size_t c = LastDim(a);
  Require(begin < end && end <= c, "slice",
          "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
              ShapeString(a.shape()));
  const std::size_t rows = a.numel() / c, w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.values().data() + r * c + begin, w, out.data() + r * w);
  Shape shape = a.shape();
  shape.back() = w;
  return Record(std::move(shape), std::move(out), {a}, [rows, c, w, begin](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * c + begin + j] += n.grad[r * w + j];
  });
}

Tensor GatherRows(const Tensor &table, const std::vector<std::size_t> &indices) {
  Require(table.rank() == 2, "gather", "table must be 2-D, got " + ShapeString(table.shape()));
  Require(!indices.empty(), "gather", "no indices");
  const std::size_t rows = table.dim(0), e = table.dim(1);
  std::vector<double> out(indices.size() * e);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    Require(indices[i] < rows, "gather",
            "index " + std::to_string(indices[i]) + " out of range for " +
                ShapeString(table.shape()));
    std::copy_n(table.values().data() + indices[i] * e, e, out.data() + i * e);
  }
  return Record({indices.size(), e}, std::move(out), {table}, [indices, e](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < e; ++j) g[indices[i] * e + j] += n.grad[i * e + j];
  });
}

Tensor PickColumns(const Tensor &a, const std::vector<std::size_t> &indices) {
  Require(a.rank() == 2 && a.dim(0) == indices.size(), "pick",
          "need [" + std::to_string(indices.size()) + ",C], got " + ShapeString(a.shape()));
  const std::size_t c = a.dim(1);
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    Require(indices[i] < c, "pick", "column " + std::to_string(indices[i]) + " out of range");
    out[i] = a.values()[i * c + indices[i]];
  }
  return Record({indices.size()}, std::move(out), {a}, [indices, c](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (std::size_t i = 0; i < indices.size(); ++i) g[i * c + indices[i]] += n.grad[i];
  });
}

Tensor Sum(const Tensor &a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Record({1}, {s}, {a}, [](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (double &v : g) v += n.grad[0];
  });
}

Tensor Mean(const Tensor &a) { return Scale(Sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor Reshape(const Tensor &a, Shape shape) {
  if (ShapeSize(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + ShapeString(a.shape()) + " as " +
                     ShapeString(shape));
  return Record(std::move(shape), a.values(), {a}, [](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor Transpose(const Tensor &a) {
  Require(a.rank() == 2, "transpose", "expects 2-D, got " + ShapeString(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.numel());
  MutMap(out.data(), c, r) = ConstMap(a.data().data(), r, c).transpose();
  return Record({c, r}, std::move(out), {a}, [r, c](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    MutMap(p.EnsureGrad().data(), r, c) += ConstMap(n.grad.data(), c, r).transpose();
  });
}

Tensor Select(const Tensor &a, std::size_t index) {
  Require(a.rank() >= 2, "select", "needs rank >= 2, got " + ShapeString(a.shape()));
  Require(index < a.dim(0), "select",
          "index " + std::to_string(index) + " out of range for " + ShapeString(a.shape()));
  const std::size_t inner = a.numel() / a.dim(0);
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(index * inner),
                          a.values().begin() + static_cast<std::ptrdiff_t>((index + 1) * inner));
  Shape shape(a.shape().begin() + 1, a.shape().end());
  return Record(std::move(shape), std::move(out), {a}, [index, inner](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    for (std::size_t i = 0; i < inner; ++i) g[index * inner + i] += n.grad[i];
  });
}

Tensor Stack(const std::vector<Tensor> &parts) {
  Require(!parts.empty(), "stack", "no operands");
  for (const Tensor &t : parts)
    if (t.shape() != parts[0].shape()) Mismatch("stack", parts[0], t);
  const std::size_t inner = parts[0].numel();
  std::vector<double> out;
  out.reserve(inner * parts.size());
  for (const Tensor &t : parts) out.insert(out.end(), t.values().begin(), t.values().end());
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts[0].shape().begin(), parts[0].shape().end());
  return Record(std::move(shape), std::move(out), parts, [inner](Node &n) {
    for (std::size_t p = 0; p < n.parents.size(); ++p) {
      Node &parent = *n.parents[p];
      if (!parent.requires_grad) continue;
      auto &g = parent.EnsureGrad();
      for (std::size_t i = 0; i < inner; ++i) g[i] += n.grad[p * inner + i];
    }
  });
}

Tensor WeightedPositions(const Tensor &weights, const Tensor &seq) {
  if (weights.rank() != 2 || seq.rank() != 3 || weights.dim(0) != seq.dim(1) ||
      weights.dim(1) != seq.dim(0))
    Mismatch("weighted_positions", weights, seq);
  const std::size_t batch = weights.dim(0), len = weights.dim(1), f = seq.dim(2);
  std::vector<double> out(batch * f, 0.0);
  const auto &w = weights.values();
  const auto &x = seq.values();
  for (std::size_t m = 0; m < len; ++m)
    for (std::size_t b = 0; b < batch; ++b) {
      const double wt = w[b * len + m];
      const double *xr = x.data() + (m * batch + b) * f;
      double *o = out.data() + b * f;
      for (std::size_t j = 0; j < f; ++j) o[j] += wt * xr[j];
    }
  return Record({batch, f}, std::move(out), {weights, seq}, [batch, len, f](Node &n) {
    Node &pw = *n.parents[0];
    Node &px = *n.parents[1];
    for (std::size_t m = 0; m < len; ++m)
      for (std::size_t b = 0; b < batch; ++b) {
        const double *dy = n.grad.data() + b * f;
        if (pw.requires_grad) {
          const double *xr = px.data.data() + (m * batch + b) * f;
          double acc = 0.0;
          for (std::size_t j = 0; j < f; ++j) acc += dy[j] * xr[j];
          pw.EnsureGrad()[b * len + m] += acc;
        }
        if (px.requires_grad) {
          const double wt = pw.data[b * len + m];
          double *gx = px.EnsureGrad().data() + (m * batch + b) * f;
          for (std::size_t j = 0; j < f; ++j) gx[j] += wt * dy[j];
        }
      }
  });
}

Tensor Im2Col3x3(const Tensor &x, std::size_t row_stride) {
  Require(x.rank() == 4, "im2col", "expects [B,H,W,C], got " + ShapeString(x.shape()));
  Require(row_stride >= 1, "im2col", "row stride must be positive");
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t ho = (h + row_stride - 1) / row_stride;
  const std::size_t cols = 9 * c;
  // Source offset for every output cell, or npos for padding.
  const std::size_t rows_out = batch * ho * w;
  std::vector<std::size_t> src(rows_out * 9);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < w; ++ox) {
        std::size_t row = (b * ho + oy) * w + ox;
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            long iy = static_cast<long>(oy * row_stride + ky) - 1;
            long ix = static_cast<long>(ox + kx) - 1;
            bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) &&
                          ix < static_cast<long>(w);
            src[row * 9 + ky * 3 + kx] =
                inside ? ((b * h + static_cast<std::size_t>(iy)) * w +
                          static_cast<std::size_t>(ix)) * c
                       : static_cast<std::size_t>(-1);
          }
      }
  std::vector<double> out(rows_out * cols, 0.0);
  const auto &xv = x.values();
  for (std::size_t r = 0; r < rows_out; ++r)
    for (std::size_t k = 0; k < 9; ++k) {
      std::size_t s = src[r * 9 + k];
      if (s != static_cast<std::size_t>(-1)) std::copy_n(xv.data() + s, c, out.data() + r * cols + k * c);
    }
  return Record({rows_out, cols}, std::move(out), {x}, [src = std::move(src), c, cols](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    const std::size_t rows = src.size() / 9;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < 9; ++k) {
        std::size_t s = src[r * 9 + k];
        if (s == static_cast<std::size_t>(-1)) continue;
        const double *dy = n.grad.data() + r * cols + k * c;
        for (std::size_t j = 0; j < c; ++j) g[s + j] += dy[j];
      }
  });
}

Tensor ColumnsToSequence(const Tensor &x, std::size_t stride) {
  Require(x.rank() == 4, "columns", "expects [B,H,W,C], got " + ShapeString(x.shape()));
  Require(stride >= 1, "columns", "stride must be positive");
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t len = (w + stride - 1) / stride;
  const std::size_t feat = h * stride * c;
  std::vector<double> out(len * batch * feat, 0.0);
  const auto &xv = x.values();
  // out[m, b, (y, dx, ch)] = x[b, y, m*stride + dx, ch]
  auto visit = [=](auto &&fn) {
    for (std::size_t m = 0; m < len; ++m)
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t dx = 0; dx < stride; ++dx) {
            std::size_t col = m * stride + dx;
            if (col >= w) continue;
            std::size_t o = ((m * batch + b) * h + y) * stride * c + dx * c;
            std::size_t i = ((b * h + y) * w + col) * c;
            fn(o, i);
          }
  };
  visit([&](std::size_t o, std::size_t i) { std::copy_n(xv.data() + i, c, out.data() + o); });
  return Record({len, batch, feat}, std::move(out), {x}, [visit, c](Node &n) {
    Node &p = *n.parents[0];
    if (!p.requires_grad) return;
    auto &g = p.EnsureGrad();
    visit([&](std::size_t o, std::size_t i) {
      for (std::size_t j = 0; j < c; ++j) g[i + j] += n.grad[o + j];
    });
  });
}

}  // namespace fasda
