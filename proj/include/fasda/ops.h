// include/fasda/ops.h

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

// Differentiable operations.  Every function records a backward closure
// when gradients are enabled and at least one input requires a gradient.
// Broadcasting is limited to the leading axes: the second operand of Add
// and Mul may have a shape equal to a suffix of the first operand's shape.

#ifndef FASDA_OPS_H_
#define FASDA_OPS_H_

#include <cstddef>
#include <vector>

#include "fasda/tensor.h"

namespace fasda {

Tensor MatMul(const Tensor &a, const Tensor &b);  // [n,k] x [k,m]
Tensor Add(const Tensor &a, const Tensor &b);
Tensor Sub(const Tensor &a, const Tensor &b);     // equal shapes
Tensor Mul(const Tensor &a, const Tensor &b);
Tensor Scale(const Tensor &a, double factor);

Tensor Tanh(const Tensor &a);
Tensor Sigmoid(const Tensor &a);
Tensor Log(const Tensor &a);
Tensor Exp(const Tensor &a);

Tensor Softmax(const Tensor &a);     // over the last axis
Tensor LogSoftmax(const Tensor &a);  // over the last axis

Tensor Concat(const std::vector<Tensor> &parts);  // along the last axis
Tensor SliceLast(const Tensor &a, std::size_t begin, std::size_t end);

/// rows[i] = table[indices[i]] for a 2-D table.
Tensor GatherRows(const Tensor &table, const std::vector<std::size_t> &indices);
/// out[i] = a[i, indices[i]] for a 2-D tensor.
Tensor PickColumns(const Tensor &a, const std::vector<std::size_t> &indices);

Tensor Sum(const Tensor &a);
Tensor Mean(const Tensor &a);

Tensor Reshape(const Tensor &a, Shape shape);
Tensor Transpose(const Tensor &a);  // 2-D only
/// a[index] along the leading axis; the result drops that axis.
Tensor Select(const Tensor &a, std::size_t index);
/// Stacks equally-shaped tensors along a new leading axis.
Tensor Stack(const std::vector<Tensor> &parts);

/// out[b,:] = sum_m weights[b,m] * seq[m,b,:]; weights [B,M], seq [M,B,F].
Tensor WeightedPositions(const Tensor &weights, const Tensor &seq);

/// 3x3 patch extraction with zero padding 1, vertical stride `row_stride`
/// and horizontal stride 1.  Input [B,H,W,C]; output [B*Ho*W, 9*C] with
/// Ho = ceil(H / row_stride), columns ordered (ky, kx, c).
Tensor Im2Col3x3(const Tensor &x, std::size_t row_stride);

/// Groups `stride` adjacent columns of an image stack [B,H,W,C] into one
/// sequence position, producing [M,B,H*stride*C] with M = ceil(W/stride).
/// Columns past the right edge are zero.
Tensor ColumnsToSequence(const Tensor &x, std::size_t stride);

}  // namespace fasda

#endif  // FASDA_OPS_H_
