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

#include "edt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "edt/kernels.hpp"

namespace edt {

namespace {

using Inputs = std::vector<const Tensor*>;

std::string shapes(const char* op, std::initializer_list<const Tensor*> ts) {
  std::string s = std::string(op) + ": incompatible shapes";
  for (const Tensor* t : ts) s += " " + to_string(t->shape());
  return s;
}

// Rank-1 tensors act as a single row.
bool is_matrix_like(const Tensor& t) { return t.rank() == 1 || t.rank() == 2; }

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void column_sums_into(const Tensor& g, Tensor& dst) {
  const std::size_t m = g.rows(), n = g.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j] += g[i * n + j];
}

// Copies columns [c0, c0 + w) of rows [r0, r0 + rows) out of a row-major matrix of width n.
void gather_block(const Tensor& src, std::size_t n, std::size_t r0, std::size_t rows, std::size_t c0, std::size_t w,
                  double* dst) {
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(src.ptr() + (r0 + i) * n + c0, w, dst + i * w);
}

void scatter_add_block(Tensor& dst, std::size_t n, std::size_t r0, std::size_t rows, std::size_t c0, std::size_t w,
                       const double* src) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* d = dst.ptr() + (r0 + i) * n + c0;
    for (std::size_t j = 0; j < w; ++j) d[j] += src[i * w + j];
  }
}

// Forward values. Each op computes its result through one of these both when it is recorded
// and when it is re-evaluated, so the two paths cannot drift apart.

Tensor matmul_value(const Tensor& A, const Tensor& B) {
  Tensor out({A.rows(), B.cols()});
  kernels::gemm_nn(A.data(), B.data(), out.data(), A.rows(), A.cols(), B.cols());
  return out;
}

Tensor matmul_nt_value(const Tensor& A, const Tensor& B) {
  Tensor out({A.rows(), B.rows()});
  kernels::gemm_nt(A.data(), B.data(), out.data(), A.rows(), A.cols(), B.rows());
  return out;
}

Tensor transpose_value(const Tensor& A) {
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return out;
}

Tensor add_value(const Tensor& A, const Tensor& B) {
  Tensor out = A;
  add_into(out, B);
  return out;
}

Tensor add_row_value(const Tensor& X, const Tensor& b) {
  Tensor out = X;
  const std::size_t m = X.rows(), n = X.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return out;
}

Tensor scale_value(const Tensor& A, double s) {
  Tensor out = A;
  for (auto& v : out.data()) v *= s;
  return out;
}

Tensor linear_value(const Tensor& X, const Tensor& W, const Tensor& B) {
  const std::size_t m = X.rows(), din = X.cols(), dout = W.cols();
  Tensor out({m, dout});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(B.ptr(), dout, out.ptr() + i * dout);
  kernels::gemm_nn(X.data(), W.data(), out.data(), m, din, dout, true);
  return out;
}

Tensor softmax_value(const Tensor& X) {
  Tensor out(X.shape());
  kernels::softmax_rows(X.data(), out.data(), X.rows(), X.cols());
  return out;
}

Tensor layer_norm_value(const Tensor& X, const Tensor& G, const Tensor& B, double eps, Tensor* xhat, Tensor* rstd) {
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out(X.shape());
  Tensor h(X.shape());
  Tensor r({m});
  kernels::layer_norm_rows(X.data(), G.data(), B.data(), eps, out.data(), h.data(), r.data(), m, n);
  if (xhat) *xhat = std::move(h);
  if (rstd) *rstd = std::move(r);
  return out;
}

Tensor gelu_value(const Tensor& X) {
  Tensor out(X.shape());
  kernels::gelu(X.data(), out.data());
  return out;
}

Tensor l2_normalize_value(const Tensor& X, double* norm_out) {
  double sq = 0.0;
  for (double v : X.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0)) throw DegenerateInputError("l2_normalize: zero vector of shape " + to_string(X.shape()));
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] / norm;
  if (norm_out) *norm_out = norm;
  return out;
}

Tensor l2_normalize_rows_value(const Tensor& X, Tensor* norms_out) {
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out(X.shape());
  Tensor norms({m});
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += X[i * n + j] * X[i * n + j];
    norms[i] = std::sqrt(sq);
    if (!(norms[i] > 0.0))
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(i) + " of " + to_string(X.shape()) +
                                 " is zero");
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] / norms[i];
  }
  if (norms_out) *norms_out = std::move(norms);
  return out;
}

struct AttentionDims {
  std::size_t segments, heads, m, n, d, dh;
  double scale;
};

Tensor attention_value(const Tensor& Q, const Tensor& K, const Tensor& V, const AttentionDims& a, Tensor* probs_out) {
  const auto [segments, heads, m, n, d, dh, sc] = a;
  Tensor out(Q.shape());
  const std::size_t block = heads * m * n;
  std::vector<double> probs(segments * block);
  for (std::size_t s = 0; s < segments; ++s)
    kernels::attention_heads(Q.data().subspan(s * m * d, m * d), K.data().subspan(s * n * d, n * d),
                             V.data().subspan(s * n * d, n * d), std::span(probs).subspan(s * block, block),
                             out.data().subspan(s * m * d, m * d), m, n, d, heads, sc);
  if (probs_out) *probs_out = Tensor({segments * heads, m, n}, std::move(probs));
  return out;
}

Tensor repeat_rows_value(const Tensor& X, std::size_t times) {
  const std::size_t len = X.size();
  Tensor out({X.rows() * times, X.cols()});
  for (std::size_t r = 0; r < times; ++r) std::copy_n(X.ptr(), len, out.ptr() + r * len);
  return out;
}

Tensor block_transpose_value(const Tensor& X, std::size_t blocks) {
  const std::size_t m = X.rows() / blocks, n = X.cols();
  Tensor out({blocks * n, m});
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = X[b * m * n + i * n + j];
  return out;
}

Tensor slice_cols_value(const Tensor& X, std::size_t begin, std::size_t end) {
  const std::size_t m = X.rows(), n = X.cols(), w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = X[i * n + begin + j];
  return out;
}

Tensor concat_cols_value(const Inputs& parts) {
  const std::size_t m = parts.front()->rows();
  std::size_t n = 0;
  for (const Tensor* p : parts) n += p->cols();
  Tensor out({m, n});
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    const std::size_t w = p->cols();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(p->ptr() + i * w, w, out.ptr() + i * n + off);
    off += w;
  }
  return out;
}

Tensor concat_rows_value(const Inputs& parts) {
  const std::size_t n = parts.front()->cols();
  std::size_t m = 0;
  for (const Tensor* p : parts) m += p->rows();
  Tensor out({m, n});
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    std::copy_n(p->ptr(), p->size(), out.ptr() + off);
    off += p->size();
  }
  return out;
}

Tensor stack_rows_value(const Inputs& rows) {
  const std::size_t d = rows.front()->size();
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(rows[i]->ptr(), d, out.ptr() + i * d);
  return out;
}

double sum_value(const Tensor& X) {
  double s = 0.0;
  for (double v : X.data()) s += v;
  return s;
}

double sum_squares_value(const Tensor& X) {
  double s = 0.0;
  for (double v : X.data()) s += v * v;
  return s;
}

double dot_value(const Tensor& X, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += X[i] * w[i];
  return s;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) throw DimensionError(shapes("matmul", {&A, &B}));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  return a.tape().record(
      matmul_value(A, B), {a, b}, {a, b}, 0,
      [a, b, m, k, n](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) kernels::gemm_nt(g.data(), b.value().data(), t.adjoint(a).data(), m, n, k, true);
        if (t.needs_grad(b)) kernels::gemm_tn(a.value().data(), g.data(), t.adjoint(b).data(), k, m, n, true);
      },
      [](const Inputs& in) { return matmul_value(*in[0], *in[1]); });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) throw DimensionError(shapes("matmul_nt", {&A, &B}));
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  return a.tape().record(
      matmul_nt_value(A, B), {a, b}, {a, b}, 0,
      [a, b, m, k, n](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) kernels::gemm_nn(g.data(), b.value().data(), t.adjoint(a).data(), m, n, k, true);
        if (t.needs_grad(b)) kernels::gemm_tn(g.data(), a.value().data(), t.adjoint(b).data(), n, m, k, true);
      },
      [](const Inputs& in) { return matmul_nt_value(*in[0], *in[1]); });
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw DimensionError(shapes("transpose", {&A}));
  const std::size_t m = A.rows(), n = A.cols();
  return a.tape().record(
      transpose_value(A), {a}, {}, 0,
      [a, m, n](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        Tensor& ga = t.adjoint(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
      },
      [](const Inputs& in) { return transpose_value(*in[0]); });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return a.tape().record(
      add_value(a.value(), b.value()), {a, b}, {}, 0,
      [a, b](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) add_into(t.adjoint(a), g);
        if (t.needs_grad(b)) add_into(t.adjoint(b), g);
      },
      [](const Inputs& in) { return add_value(*in[0], *in[1]); });
}

Var add_row(const Var& x, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  if (!is_matrix_like(X) || b.size() != X.cols()) throw DimensionError(shapes("add_row", {&X, &b}));
  return x.tape().record(
      add_row_value(X, b), {x, bias}, {}, 0,
      [x, bias](Tape& t, const Tensor& g) {
        if (t.needs_grad(x)) add_into(t.adjoint(x), g);
        if (t.needs_grad(bias)) column_sums_into(g, t.adjoint(bias));
      },
      [](const Inputs& in) { return add_row_value(*in[0], *in[1]); });
}

Var scale(const Var& a, double s) {
  return a.tape().record(
      scale_value(a.value(), s), {a}, {}, 0,
      [a, s](Tape& t, const Tensor& g) {
        if (!t.needs_grad(a)) return;
        auto ga = t.adjoint(a).data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
      },
      [s](const Inputs& in) { return scale_value(*in[0], s); });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  if (X.rank() != 2 || W.rank() != 2 || X.cols() != W.rows() || B.size() != W.cols())
    throw DimensionError(shapes("linear", {&X, &W, &B}));
  const std::size_t m = X.rows(), din = X.cols(), dout = W.cols();
  return x.tape().record(
      linear_value(X, W, B), {x, w, b}, {x, w}, 0,
      [x, w, b, m, din, dout](Tape& t, const Tensor& g) {
        if (t.needs_grad(x)) kernels::gemm_nt(g.data(), w.value().data(), t.adjoint(x).data(), m, dout, din, true);
        if (t.needs_grad(w)) kernels::gemm_tn(x.value().data(), g.data(), t.adjoint(w).data(), din, m, dout, true);
        if (t.needs_grad(b)) column_sums_into(g, t.adjoint(b));
      },
      [](const Inputs& in) { return linear_value(*in[0], *in[1], *in[2]); });
}

Var softmax_rows(const Var& x) {
  const Tensor& X = x.value();
  if (!is_matrix_like(X)) throw DimensionError(shapes("softmax_rows", {&X}));
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out = softmax_value(X);
  Tensor y = x.tape().recording() ? out : Tensor();
  const std::size_t extra = y.bytes();
  return x.tape().record(
      std::move(out), {x}, {}, extra,
      [x, y = std::move(y), m, n](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        Tensor& gx = t.adjoint(x);
        for (std::size_t i = 0; i < m; ++i) {
          double dotp = 0.0;
          for (std::size_t j = 0; j < n; ++j) dotp += g[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dotp);
        }
      },
      [](const Inputs& in) { return softmax_value(*in[0]); });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& X = x.value();
  const Tensor& G = gamma.value();
  const Tensor& Bt = beta.value();
  if (!is_matrix_like(X) || G.size() != X.cols() || Bt.size() != X.cols())
    throw DimensionError(shapes("layer_norm", {&X, &G, &Bt}));
  const std::size_t m = X.rows(), n = X.cols();
  if (n < 2) throw DimensionError("layer_norm: rows need at least 2 features, got " + to_string(X.shape()));
  const bool keep = x.tape().recording();
  Tensor xhat, rstd;
  Tensor out = layer_norm_value(X, G, Bt, eps, keep ? &xhat : nullptr, keep ? &rstd : nullptr);
  const std::size_t extra = xhat.bytes() + rstd.bytes();
  return x.tape().record(
      std::move(out), {x, gamma, beta}, {gamma}, extra,
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), m, n](Tape& t, const Tensor& g) {
        const Tensor& G = gamma.value();
        if (t.needs_grad(x)) {
          Tensor& gx = t.adjoint(x);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_gh = 0.0, mean_gh_xh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = g[i * n + j] * G[j];
              mean_gh += gh;
              mean_gh_xh += gh * xhat[i * n + j];
            }
            mean_gh *= inv_n;
            mean_gh_xh *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = g[i * n + j] * G[j];
              gx[i * n + j] += rstd[i] * (gh - mean_gh - xhat[i * n + j] * mean_gh_xh);
            }
          }
        }
        if (t.needs_grad(gamma)) {
          Tensor& gg = t.adjoint(gamma);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (t.needs_grad(beta)) column_sums_into(g, t.adjoint(beta));
      },
      [eps](const Inputs& in) { return layer_norm_value(*in[0], *in[1], *in[2], eps, nullptr, nullptr); });
}

Var gelu(const Var& x) {
  return x.tape().record(
      gelu_value(x.value()), {x}, {x}, 0,
      [x](Tape& t, const Tensor& g) {
        if (t.needs_grad(x)) kernels::gelu_backward(x.value().data(), g.data(), t.adjoint(x).data());
      },
      [](const Inputs& in) { return gelu_value(*in[0]); });
}

Var l2_normalize(const Var& x) {
  double norm = 0.0;
  Tensor out = l2_normalize_value(x.value(), &norm);
  Tensor y = x.tape().recording() ? out : Tensor();
  const std::size_t extra = y.bytes() + sizeof(double);
  return x.tape().record(
      std::move(out), {x}, {}, extra,
      [x, y = std::move(y), norm](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        double yg = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) yg += y[i] * g[i];
        Tensor& gx = t.adjoint(x);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += (g[i] - y[i] * yg) / norm;
      },
      [](const Inputs& in) { return l2_normalize_value(*in[0], nullptr); });
}

Var l2_normalize_rows(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw DimensionError(shapes("l2_normalize_rows", {&X}));
  const std::size_t m = X.rows(), n = X.cols();
  Tensor norms;
  Tensor out = l2_normalize_rows_value(X, &norms);
  Tensor y = x.tape().recording() ? out : Tensor();
  const std::size_t extra = y.bytes() + norms.bytes();
  return x.tape().record(
      std::move(out), {x}, {}, extra,
      [x, y = std::move(y), norms = std::move(norms), m, n](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        Tensor& gx = t.adjoint(x);
        for (std::size_t i = 0; i < m; ++i) {
          double yg = 0.0;
          for (std::size_t j = 0; j < n; ++j) yg += y[i * n + j] * g[i * n + j];
          for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += (g[i * n + j] - y[i * n + j] * yg) / norms[i];
        }
      },
      [](const Inputs& in) { return l2_normalize_rows_value(*in[0], nullptr); });
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::size_t segments) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2 || K.shape() != V.shape() || Q.cols() != K.cols())
    throw DimensionError(shapes("multi_head_attention", {&Q, &K, &V}));
  const std::size_t d = Q.cols();
  if (heads == 0 || d % heads != 0)
    throw DimensionError("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  if (segments == 0 || Q.rows() % segments != 0 || K.rows() % segments != 0)
    throw DimensionError("multi_head_attention: " + std::to_string(segments) + " segments do not divide " +
                         shapes("rows of", {&Q, &K}));
  const std::size_t dh = d / heads;
  const AttentionDims dims{segments, heads, Q.rows() / segments, K.rows() / segments, d, dh,
                           1.0 / std::sqrt(static_cast<double>(dh))};

  Tensor probs;
  Tensor out = attention_value(Q, K, V, dims, q.tape().recording() ? &probs : nullptr);
  const std::size_t extra = probs.bytes();
  return q.tape().record(
      std::move(out), {q, k, v}, {q, k, v}, extra,
      [q, k, v, probs = std::move(probs), dims](Tape& t, const Tensor& g) {
        const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
        if (!gq && !gk && !gv) return;
        const auto [segments, heads, m, n, d, dh, sc] = dims;
        const Tensor& Q = q.value();
        const Tensor& K = k.value();
        const Tensor& V = v.value();
        std::vector<double> qh(m * dh), kh(n * dh), vh(n * dh), go(m * dh), dp(m * n), dq(m * dh), dk(n * dh),
            dv(n * dh);
        for (std::size_t s = 0; s < segments; ++s)
          for (std::size_t h = 0; h < heads; ++h) {
            const std::span<const double> p(probs.ptr() + (s * heads + h) * m * n, m * n);
            gather_block(g, d, s * m, m, h * dh, dh, go.data());
            if (gv) {
              kernels::gemm_tn(p, go, dv, n, m, dh);
              scatter_add_block(t.adjoint(v), d, s * n, n, h * dh, dh, dv.data());
            }
            if (!gq && !gk) continue;
            gather_block(V, d, s * n, n, h * dh, dh, vh.data());
            kernels::gemm_nt(go, vh, dp, m, dh, n);
            for (std::size_t i = 0; i < m; ++i) {
              double dotp = 0.0;
              for (std::size_t j = 0; j < n; ++j) dotp += dp[i * n + j] * p[i * n + j];
              for (std::size_t j = 0; j < n; ++j) dp[i * n + j] = sc * p[i * n + j] * (dp[i * n + j] - dotp);
            }
            if (gq) {
              gather_block(K, d, s * n, n, h * dh, dh, kh.data());
              kernels::gemm_nn(dp, kh, dq, m, n, dh);
              scatter_add_block(t.adjoint(q), d, s * m, m, h * dh, dh, dq.data());
            }
            if (gk) {
              gather_block(Q, d, s * m, m, h * dh, dh, qh.data());
              kernels::gemm_tn(dp, qh, dk, n, m, dh);
              scatter_add_block(t.adjoint(k), d, s * n, n, h * dh, dh, dk.data());
            }
          }
      },
      [dims](const Inputs& in) { return attention_value(*in[0], *in[1], *in[2], dims, nullptr); });
}

Var repeat_rows(const Var& x, std::size_t times) {
  const Tensor& X = x.value();
  if (X.rank() != 2 || times == 0) throw DimensionError(shapes("repeat_rows", {&X}));
  const std::size_t len = X.size();
  return x.tape().record(
      repeat_rows_value(X, times), {x}, {}, 0,
      [x, times, len](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        Tensor& gx = t.adjoint(x);
        for (std::size_t r = 0; r < times; ++r)
          for (std::size_t i = 0; i < len; ++i) gx[i] += g[r * len + i];
      },
      [times](const Inputs& in) { return repeat_rows_value(*in[0], times); });
}

Var block_transpose(const Var& x, std::size_t blocks) {
  const Tensor& X = x.value();
  if (X.rank() != 2 || blocks == 0 || X.rows() % blocks != 0) throw DimensionError(shapes("block_transpose", {&X}));
  const std::size_t m = X.rows() / blocks, n = X.cols();
  return x.tape().record(
      block_transpose_value(X, blocks), {x}, {}, 0,
      [x, blocks, m, n](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        Tensor& gx = t.adjoint(x);
        for (std::size_t b = 0; b < blocks; ++b)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx[b * m * n + i * n + j] += g[b * m * n + j * m + i];
      },
      [blocks](const Inputs& in) { return block_transpose_value(*in[0], blocks); });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  if (X.rank() != 2 || begin >= end || end > X.cols())
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + to_string(X.shape()));
  const std::size_t m = X.rows(), n = X.cols(), w = end - begin;
  return x.tape().record(
      slice_cols_value(X, begin, end), {x}, {}, 0,
      [x, m, n, w, begin](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        Tensor& gx = t.adjoint(x);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
      },
      [begin, end](const Inputs& in) { return slice_cols_value(*in[0], begin, end); });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths;
  Inputs values;
  for (const auto& p : parts) {
    const Tensor& P = p.value();
    if (P.rank() != 2 || P.rows() != m) throw DimensionError(shapes("concat_cols", {&parts.front().value(), &P}));
    widths.push_back(P.cols());
    n += P.cols();
    values.push_back(&P);
  }
  return parts.front().tape().record(
      concat_cols_value(values), parts, {}, 0,
      [parts, widths, m, n](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (t.needs_grad(parts[k])) {
            Tensor& gp = t.adjoint(parts[k]);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += g[i * n + off + j];
          }
          off += widths[k];
        }
      },
      [](const Inputs& in) { return concat_cols_value(in); });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().value().cols();
  Inputs values;
  for (const auto& p : parts) {
    const Tensor& P = p.value();
    if (!is_matrix_like(P) || P.cols() != n) throw DimensionError(shapes("concat_rows", {&parts.front().value(), &P}));
    values.push_back(&P);
  }
  return parts.front().tape().record(
      concat_rows_value(values), parts, {}, 0,
      [parts](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (const auto& p : parts) {
          const std::size_t len = p.value().size();
          if (t.needs_grad(p)) {
            auto gp = t.adjoint(p).data();
            for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
          }
          off += len;
        }
      },
      [](const Inputs& in) { return concat_rows_value(in); });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(shape);
  return x.tape().record(
      std::move(out), {x}, {}, 0,
      [x](Tape& t, const Tensor& g) {
        if (t.needs_grad(x)) add_into(t.adjoint(x), g);
      },
      [shape](const Inputs& in) { return in[0]->reshaped(shape); });
}

Var flatten(const Var& x) { return reshape(x, {x.value().size()}); }

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no inputs");
  const std::size_t d = rows.front().value().size();
  Inputs values;
  for (const auto& r : rows) {
    if (r.value().size() != d) throw DimensionError(shapes("stack_rows", {&rows.front().value(), &r.value()}));
    values.push_back(&r.value());
  }
  return rows.front().tape().record(
      stack_rows_value(values), rows, {}, 0,
      [rows, d](Tape& t, const Tensor& g) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
          if (!t.needs_grad(rows[i])) continue;
          auto gr = t.adjoint(rows[i]).data();
          for (std::size_t j = 0; j < d; ++j) gr[j] += g[i * d + j];
        }
      },
      [](const Inputs& in) { return stack_rows_value(in); });
}

Var sum(const Var& x) {
  return x.tape().record(
      Tensor({1}, sum_value(x.value())), {x}, {}, 0,
      [x](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        for (auto& v : t.adjoint(x).data()) v += g[0];
      },
      [](const Inputs& in) { return Tensor({1}, sum_value(*in[0])); });
}

Var sum_squares(const Var& x) {
  return x.tape().record(
      Tensor({1}, sum_squares_value(x.value())), {x}, {x}, 0,
      [x](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        auto gx = t.adjoint(x).data();
        auto xv = x.value().data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * xv[i] * g[0];
      },
      [](const Inputs& in) { return Tensor({1}, sum_squares_value(*in[0])); });
}

Var dot_const(const Var& x, const Tensor& w) {
  if (x.value().size() != w.size()) throw DimensionError(shapes("dot_const", {&x.value(), &w}));
  return x.tape().record(
      Tensor({1}, dot_value(x.value(), w)), {x}, {}, w.bytes(),
      [x, w](Tape& t, const Tensor& g) {
        if (!t.needs_grad(x)) return;
        auto gx = t.adjoint(x).data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += w[i] * g[0];
      },
      [w](const Inputs& in) { return Tensor({1}, dot_value(*in[0], w)); });
}

}  // namespace edt
