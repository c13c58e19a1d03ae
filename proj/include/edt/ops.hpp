/*
 * Copyright 2026 The edt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <vector>

#include "edt/autodiff.hpp"

namespace edt {

inline constexpr double kLayerNormEps = 1e-6;

Var matmul(const Var& a, const Var& b);     // a[m x k] b[k x n]
Var matmul_nt(const Var& a, const Var& b);  // a[m x k] b[n x k]^T
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var add_row(const Var& x, const Var& bias);  // bias broadcast over rows
Var scale(const Var& a, double s);

/// x * W + b with b broadcast over the rows of x.
Var linear(const Var& x, const Var& w, const Var& b);

Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = kLayerNormEps);
/// Exact erf-based GELU.
Var gelu(const Var& x);
/// Scales the whole tensor to unit L2 norm; throws DegenerateInputError on a zero tensor.
Var l2_normalize(const Var& x);

/// Scales every row to unit L2 norm; a zero row throws DegenerateInputError.
Var l2_normalize_rows(const Var& x);

/// Scaled dot-product attention over `heads` column groups, evaluated independently on each of
/// `segments` equal row blocks of q and of k/v (one block per batch element). Shapes:
/// q (S*m) x d, k and v (S*n) x d, result (S*m) x d. Per head: softmax(q k^T / sqrt(d/heads)) v.
Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::size_t segments = 1);

/// x repeated `times` times vertically.
Var repeat_rows(const Var& x, std::size_t times);
/// Splits x into `blocks` equal row blocks and transposes each: (B*m) x n -> (B*n) x m.
Var block_transpose(const Var& x, std::size_t blocks);

Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
/// Vertical concatenation; rank-1 parts count as one row.
Var concat_rows(const std::vector<Var>& parts);
Var reshape(const Var& x, Shape shape);
Var flatten(const Var& x);
/// Stacks equally sized tensors as the rows of a matrix.
Var stack_rows(const std::vector<Var>& rows);

Var sum(const Var& x);
Var sum_squares(const Var& x);
/// <x, w> for a constant weight tensor of the same size.
Var dot_const(const Var& x, const Tensor& w);

}  // namespace edt
