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

// Dense kernels behind the tensor ops.
//
// edt::kernels holds the OpenMP versions the library runs; edt::kernels::serial holds
// straight-line reference versions kept for tests and benchmarks. Every parallel kernel
// splits work over output rows only, so each output element is produced by exactly one
// thread and results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace edt::kernels {

// out[m x n] = a[m x k] * b[k x n]   (out += ... when accumulate)
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
// out[m x n] = a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
// out[m x n] = a[k x m]^T * b[k x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t m, std::size_t n);

// Multi-head scaled dot-product attention of m queries over n keys. q is m x d, k and v are
// n x d, head h owns columns [h * d / heads, (h + 1) * d / heads). probs (heads x m x n)
// receives the softmax weights and out (m x d) the attended values.
void attention_heads(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                     std::span<double> probs, std::span<double> out, std::size_t m, std::size_t n, std::size_t d,
                     std::size_t heads, double scale);

// Normalizes each row with population variance. xhat and rstd receive the normalized rows and
// 1/sqrt(var + eps) per row for the adjoint.
void layer_norm_rows(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta,
                     double eps, std::span<double> out, std::span<double> xhat, std::span<double> rstd,
                     std::size_t m, std::size_t n);

void gelu(std::span<const double> x, std::span<double> out);
// out += g * gelu'(x)
void gelu_backward(std::span<const double> x, std::span<const double> g, std::span<double> out);

// out[i] = <rows[i], query> for an n x dim row-major matrix.
void inner_products(std::span<const double> rows, std::span<const double> query, std::span<double> out,
                    std::size_t n, std::size_t dim);

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false);
void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t m, std::size_t n);
void attention_heads(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                     std::span<double> probs, std::span<double> out, std::size_t m, std::size_t n, std::size_t d,
                     std::size_t heads, double scale);
void layer_norm_rows(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta,
                     double eps, std::span<double> out, std::span<double> xhat, std::span<double> rstd,
                     std::size_t m, std::size_t n);
void gelu(std::span<const double> x, std::span<double> out);
void gelu_backward(std::span<const double> x, std::span<const double> g, std::span<double> out);
void inner_products(std::span<const double> rows, std::span<const double> query, std::span<double> out,
                    std::size_t n, std::size_t dim);

}  // namespace serial

/// Number of OpenMP threads the parallel kernels may use (1 without OpenMP).
int max_threads();

}  // namespace edt::kernels
