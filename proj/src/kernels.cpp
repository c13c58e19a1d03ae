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

#include "edt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#if defined(EDT_HAVE_MVEC) && defined(__AVX2__)
#include <immintrin.h>
#define EDT_VECTOR_EXP 1
extern "C" __m256d _ZGVdN4v_exp(__m256d);
#endif

namespace edt::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

using index_t = long long;

// Runs body(i) for every i in [0, n); fans out over threads only when the work is large enough
// and more than one thread is available, since entering a parallel region is not free.
template <class Body>
void for_each_row(index_t n, std::size_t work, Body&& body) {
#ifdef _OPENMP
  if (work > kParallelWork && omp_get_max_threads() > 1) {
#pragma omp parallel for schedule(static)
    for (index_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (index_t i = 0; i < n; ++i) body(i);
}

// Register tile: MR rows by NR columns of C stay in registers across the whole k loop.
// A is addressed as A[r * rs + p * ps] so one routine serves both a and a^T.
// 256-bit vectors; 512-bit tiles measured slower on these small shapes.
constexpr std::size_t kLanes = 4;
constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 16;

typedef double vec __attribute__((vector_size(kLanes * sizeof(double))));

inline vec load(const double* p) {
  vec v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store(double* p, vec v) { std::memcpy(p, &v, sizeof v); }

template <std::size_t MR, std::size_t NR>
inline void tile(const double* __restrict A, std::size_t rs, std::size_t ps, const double* __restrict B,
                 std::size_t ldb, double* __restrict C, std::size_t ldc, std::size_t k, bool accumulate) {
  constexpr std::size_t NV = NR / kLanes;
  vec acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = accumulate ? load(C + r * ldc + kLanes * v) : vec{};
  for (std::size_t p = 0; p < k; ++p) {
    const double* b = B + p * ldb;
    vec bv[NV];
    for (std::size_t v = 0; v < NV; ++v) bv[v] = load(b + kLanes * v);
    for (std::size_t r = 0; r < MR; ++r) {
      const double a = A[r * rs + p * ps];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += a * bv[v];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) store(C + r * ldc + kLanes * v, acc[r][v]);
}

template <std::size_t MR>
inline void tile_tail(const double* A, std::size_t rs, std::size_t ps, const double* B, std::size_t ldb, double* C,
                      std::size_t ldc, std::size_t k, std::size_t nr, bool accumulate) {
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t c = 0; c < nr; ++c) {
      double acc = accumulate ? C[r * ldc + c] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[r * rs + p * ps] * B[p * ldb + c];
      C[r * ldc + c] = acc;
    }
}

template <std::size_t MR>
inline void row_panel(const double* A, std::size_t rs, std::size_t ps, const double* B, double* C, std::size_t k,
                      std::size_t n, bool accumulate) {
  std::size_t j = 0;
  for (; j + kTileCols <= n; j += kTileCols) tile<MR, kTileCols>(A, rs, ps, B + j, n, C + j, n, k, accumulate);
  for (; j + kLanes <= n; j += kLanes) tile<MR, kLanes>(A, rs, ps, B + j, n, C + j, n, k, accumulate);
  if (j < n) tile_tail<MR>(A, rs, ps, B + j, n, C + j, n, k, n - j, accumulate);
}

// C[m x n] (+)= op(A) B where op(A)(i, p) = A[i * rs + p * ps].
void gemm_strided(const double* A, std::size_t rs, std::size_t ps, const double* B, double* C, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate) {
  const index_t panels = static_cast<index_t>(m / kTileRows);
  for_each_row(panels, m * k * n, [&](index_t t) {
    const std::size_t i = static_cast<std::size_t>(t) * kTileRows;
    row_panel<kTileRows>(A + i * rs, rs, ps, B, C + i * n, k, n, accumulate);
  });
  for (std::size_t i = static_cast<std::size_t>(panels) * kTileRows; i < m; ++i)
    row_panel<1>(A + i * rs, rs, ps, B, C + i * n, k, n, accumulate);
}

// o[j] = exp(x[j] - shift), four lanes at a time where the vector math library is available.
void exp_shifted(const double* x, double shift, double* o, std::size_t n) {
  std::size_t j = 0;
#ifdef EDT_VECTOR_EXP
  const __m256d s = _mm256_set1_pd(shift);
  for (; j + 4 <= n; j += 4) _mm256_storeu_pd(o + j, _ZGVdN4v_exp(_mm256_sub_pd(_mm256_loadu_pd(x + j), s)));
#endif
  for (; j < n; ++j) o[j] = std::exp(x[j] - shift);
}

inline double hsum(vec v) {
  double s = 0.0;
  for (std::size_t l = 0; l < kLanes; ++l) s += v[l];
  return s;
}

// out[t] = <a, b + t * stride> for t < 4: four independent chains instead of one.
inline void dot4(const double* a, const double* b, std::size_t stride, std::size_t n, double* out) {
  vec acc[4] = {};
  std::size_t c = 0;
  for (; c + kLanes <= n; c += kLanes) {
    const vec av = load(a + c);
    for (std::size_t t = 0; t < 4; ++t) acc[t] += av * load(b + t * stride + c);
  }
  for (std::size_t t = 0; t < 4; ++t) {
    out[t] = hsum(acc[t]);
    for (std::size_t r = c; r < n; ++r) out[t] += a[r] * b[t * stride + r];
  }
}

// Reductions keep kLanes partial results so they are not bound by one add chain.
inline double sum(const double* a, std::size_t n) {
  vec acc{};
  std::size_t c = 0;
  for (; c + kLanes <= n; c += kLanes) acc += load(a + c);
  double s = hsum(acc);
  for (; c < n; ++c) s += a[c];
  return s;
}

inline double centered_sum_squares(const double* a, double mean, std::size_t n) {
  vec acc{};
  const vec mv = vec{} + mean;
  std::size_t c = 0;
  for (; c + kLanes <= n; c += kLanes) {
    const vec dv = load(a + c) - mv;
    acc += dv * dv;
  }
  double s = hsum(acc);
  for (; c < n; ++c) s += (a[c] - mean) * (a[c] - mean);
  return s;
}

// o = softmax(x) for one row; o may alias x.
inline void softmax_row(const double* x, double* o, std::size_t n) {
  const double mx = *std::max_element(x, x + n);
  exp_shifted(x, mx, o, n);
  const double inv = 1.0 / sum(o, n);
  for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
}

inline double dot(const double* a, const double* b, std::size_t n) {
  vec acc{};
  std::size_t c = 0;
  for (; c + kLanes <= n; c += kLanes) acc += load(a + c) * load(b + c);
  double s = hsum(acc);
  for (; c < n; ++c) s += a[c] * b[c];
  return s;
}

// o[0, w) = sum_j p[j] * x[j * stride + (0, w)], accumulated in registers per column block.
inline void weighted_rows(const double* p, const double* x, std::size_t stride, std::size_t rows, std::size_t w,
                          double* o) {
  std::size_t c = 0;
  for (; c + 4 * kLanes <= w; c += 4 * kLanes) {
    vec acc[4] = {};
    for (std::size_t j = 0; j < rows; ++j) {
      const vec pj = vec{} + p[j];
      for (std::size_t t = 0; t < 4; ++t) acc[t] += pj * load(x + j * stride + c + t * kLanes);
    }
    for (std::size_t t = 0; t < 4; ++t) store(o + c + t * kLanes, acc[t]);
  }
  for (; c + kLanes <= w; c += kLanes) {
    vec acc{};
    for (std::size_t j = 0; j < rows; ++j) acc += (vec{} + p[j]) * load(x + j * stride + c);
    store(o + c, acc);
  }
  for (; c < w; ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < rows; ++j) acc += p[j] * x[j * stride + c];
    o[c] = acc;
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  gemm_strided(a.data(), k, 1, b.data(), out.data(), m, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  // Transposing b gives the tile loop contiguous rows of b.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt, out, m, k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  gemm_strided(a.data(), 1, m, b.data(), out.data(), m, k, n, accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t m, std::size_t n) {
  for_each_row(static_cast<index_t>(m), m * n, [&](index_t i) {
    softmax_row(x.data() + i * n, out.data() + i * n, n);
  });
}

void attention_heads(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                     std::span<double> probs, std::span<double> out, std::size_t m, std::size_t n, std::size_t d,
                     std::size_t heads, double scale) {
  const std::size_t dh = d / heads;
  for_each_row(static_cast<index_t>(m), m * n * d, [&](index_t i) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* qi = q.data() + i * d + h * dh;
      double* p = probs.data() + (h * m + i) * n;
      const double* kh = k.data() + h * dh;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) dot4(qi, kh + j * d, d, dh, p + j);
      for (; j < n; ++j) p[j] = dot(qi, kh + j * d, dh);
      for (j = 0; j < n; ++j) p[j] *= scale;
      softmax_row(p, p, n);
      weighted_rows(p, v.data() + h * dh, d, n, dh, out.data() + i * d + h * dh);
    }
  });
}

void layer_norm_rows(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta,
                     double eps, std::span<double> out, std::span<double> xhat, std::span<double> rstd,
                     std::size_t m, std::size_t n) {
  for_each_row(static_cast<index_t>(m), m * n, [&](index_t i) {
    const double* xr = x.data() + i * n;
    const double mean = sum(xr, n) / static_cast<double>(n);
    const double var = centered_sum_squares(xr, mean, n) / static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[i] = r;
    double* h = xhat.data() + i * n;
    double* o = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      h[j] = (xr[j] - mean) * r;
      o[j] = h[j] * gamma[j] + beta[j];
    }
  });
}

void gelu(std::span<const double> x, std::span<double> out) {
  const std::size_t n = x.size();
  for_each_row(static_cast<index_t>(n), n, [&](index_t i) {
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * (1.0 / std::numbers::sqrt2)));
  });
}

void gelu_backward(std::span<const double> x, std::span<const double> g, std::span<double> out) {
  const std::size_t n = x.size();
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for_each_row(static_cast<index_t>(n), n, [&](index_t i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] * (1.0 / std::numbers::sqrt2)));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
    out[i] += g[i] * (cdf + x[i] * pdf);
  });
}

void inner_products(std::span<const double> rows, std::span<const double> query, std::span<double> out,
                    std::size_t n, std::size_t dim) {
  for_each_row(static_cast<index_t>(n), n * dim, [&](index_t i) {
    const double* r = rows.data() + i * dim;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= dim; j += 4) {
      s0 += r[j] * query[j];
      s1 += r[j + 1] * query[j + 1];
      s2 += r[j + 2] * query[j + 2];
      s3 += r[j + 3] * query[j + 3];
    }
    for (; j < dim; ++j) s0 += r[j] * query[j];
    out[i] = (s0 + s1) + (s2 + s3);
  });
}

}  // namespace edt::kernels
