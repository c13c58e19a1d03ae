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

#include <cmath>
#include <numbers>

#include "edt/kernels.hpp"

namespace edt::kernels::serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out[i * n + j] = accumulate ? out[i * n + j] + s : s;
    }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      out[i * n + j] = accumulate ? out[i * n + j] + s : s;
    }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      out[i * n + j] = accumulate ? out[i * n + j] + s : s;
    }
}

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(x[i * n + j] - mx);
      sum += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
  }
}

void attention_heads(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                     std::span<double> probs, std::span<double> out, std::size_t m, std::size_t n, std::size_t d,
                     std::size_t heads, double scale) {
  const std::size_t dh = d / heads;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < m; ++i) {
      double* p = probs.data() + (h * m + i) * n;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        p[j] = scale * s;
      }
      softmax_rows(std::span<const double>(p, n), std::span<double>(p, n), 1, n);
      for (std::size_t c = 0; c < dh; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += p[j] * v[j * d + h * dh + c];
        out[i * d + h * dh + c] = s;
      }
    }
}

void layer_norm_rows(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta,
                     double eps, std::span<double> out, std::span<double> xhat, std::span<double> rstd,
                     std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[i * n + j] - mean) * (x[i * n + j] - mean);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mean) * rstd[i];
      out[i * n + j] = xhat[i * n + j] * gamma[j] + beta[j];
    }
  }
}

void gelu(std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] / std::numbers::sqrt2));
}

void gelu_backward(std::span<const double> x, std::span<const double> g, std::span<double> out) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] / std::numbers::sqrt2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
    out[i] += g[i] * (cdf + x[i] * pdf);
  }
}

void inner_products(std::span<const double> rows, std::span<const double> query, std::span<double> out,
                    std::size_t n, std::size_t dim) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += rows[i * dim + j] * query[j];
    out[i] = s;
  }
}

}  // namespace edt::kernels::serial
