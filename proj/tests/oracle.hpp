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

// Straight-line reference math on plain row-major matrices, written independently of the
// library ops so tests can compare the two.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "edt/tensor.hpp"

namespace edt::oracle {

struct Mat {
  std::size_t r = 0, c = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t rows, std::size_t cols) : r(rows), c(cols), v(rows * cols, 0.0) {}
  explicit Mat(const Tensor& t) : r(t.rank() == 1 ? 1 : t.rows()), c(t.rank() == 1 ? t.size() : t.cols()), v(t.data().begin(), t.data().end()) {}

  double& operator()(std::size_t i, std::size_t j) { return v[i * c + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

inline Mat mul(const Mat& a, const Mat& b) {
  Mat o(a.r, b.c);
  for (std::size_t i = 0; i < a.r; ++i)
    for (std::size_t j = 0; j < b.c; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.c; ++k) s += a(i, k) * b(k, j);
      o(i, j) = s;
    }
  return o;
}

inline Mat transpose(const Mat& a) {
  Mat o(a.c, a.r);
  for (std::size_t i = 0; i < a.r; ++i)
    for (std::size_t j = 0; j < a.c; ++j) o(j, i) = a(i, j);
  return o;
}

inline Mat plus(const Mat& a, const Mat& b) {
  Mat o = a;
  for (std::size_t i = 0; i < o.v.size(); ++i) o.v[i] += b.v[i];
  return o;
}

inline Mat add_bias(const Mat& a, const Tensor& b) {
  Mat o = a;
  for (std::size_t i = 0; i < o.r; ++i)
    for (std::size_t j = 0; j < o.c; ++j) o(i, j) += b[j];
  return o;
}

inline Mat softmax(const Mat& a) {
  Mat o(a.r, a.c);
  for (std::size_t i = 0; i < a.r; ++i) {
    double mx = a(i, 0);
    for (std::size_t j = 1; j < a.c; ++j) mx = std::max(mx, a(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < a.c; ++j) s += (o(i, j) = std::exp(a(i, j) - mx));
    for (std::size_t j = 0; j < a.c; ++j) o(i, j) /= s;
  }
  return o;
}

inline Mat layer_norm(const Mat& a, const Tensor& g, const Tensor& b, double eps) {
  Mat o(a.r, a.c);
  for (std::size_t i = 0; i < a.r; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < a.c; ++j) mean += a(i, j);
    mean /= static_cast<double>(a.c);
    for (std::size_t j = 0; j < a.c; ++j) var += (a(i, j) - mean) * (a(i, j) - mean);
    var /= static_cast<double>(a.c);
    for (std::size_t j = 0; j < a.c; ++j) o(i, j) = (a(i, j) - mean) / std::sqrt(var + eps) * g[j] + b[j];
  }
  return o;
}

inline Mat gelu(const Mat& a) {
  Mat o = a;
  for (double& x : o.v) x = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  return o;
}

inline Mat cols(const Mat& a, std::size_t begin, std::size_t end) {
  Mat o(a.r, end - begin);
  for (std::size_t i = 0; i < a.r; ++i)
    for (std::size_t j = begin; j < end; ++j) o(i, j - begin) = a(i, j);
  return o;
}

/// softmax(q k^T / sqrt(d_k)) v
inline Mat attention(const Mat& q, const Mat& k, const Mat& v) {
  Mat s = mul(q, transpose(k));
  for (double& x : s.v) x /= std::sqrt(static_cast<double>(q.c));
  return mul(softmax(s), v);
}

/// Multi-head attention with d x d projections and biases; heads are column blocks.
inline Mat mha(const Mat& qi, const Mat& ki, const Mat& vi, const Tensor& wq, const Tensor& bq, const Tensor& wk,
               const Tensor& bk, const Tensor& wv, const Tensor& bv, const Tensor& wo, const Tensor& bo,
               std::size_t heads) {
  const Mat q = add_bias(mul(qi, Mat(wq)), bq), k = add_bias(mul(ki, Mat(wk)), bk), v = add_bias(mul(vi, Mat(wv)), bv);
  const std::size_t d = q.c, dh = d / heads;
  Mat cat(q.r, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const Mat o = attention(cols(q, h * dh, (h + 1) * dh), cols(k, h * dh, (h + 1) * dh), cols(v, h * dh, (h + 1) * dh));
    for (std::size_t i = 0; i < o.r; ++i)
      for (std::size_t j = 0; j < dh; ++j) cat(i, h * dh + j) = o(i, j);
  }
  return add_bias(mul(cat, Mat(wo)), bo);
}

inline double max_diff(const Mat& a, const Tensor& t) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - t[i]));
  return m;
}

using PairSet = std::set<std::pair<std::size_t, std::size_t>>;

// Pair-by-pair reading of the mining rule: a positive is kept if it is less similar than some
// negative plus the margin, a negative if it is more similar than some positive minus the margin.
// Queries lacking either a positive or a negative contribute nothing.
inline std::pair<PairSet, PairSet> mine(const Tensor& s, const std::vector<std::uint32_t>& ids, double eps) {
  PairSet pos, neg;
  const std::size_t b = ids.size();
  for (std::size_t q = 0; q < b; ++q) {
    bool any_pos = false, any_neg = false;
    for (std::size_t j = 0; j < b; ++j)
      if (j != q) (ids[j] == ids[q] ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg) continue;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == q) continue;
      if (ids[j] == ids[q]) {
        bool keep = false;
        for (std::size_t n = 0; n < b; ++n)
          if (n != q && ids[n] != ids[q] && s.at(q, j) < s.at(q, n) + eps) keep = true;
        if (keep) pos.insert({q, j});
      } else {
        bool keep = false;
        for (std::size_t p = 0; p < b; ++p)
          if (p != q && ids[p] == ids[q] && s.at(q, j) > s.at(q, p) - eps) keep = true;
        if (keep) neg.insert({q, j});
      }
    }
  }
  return {pos, neg};
}

// Every database id ordered by descending inner product, then ascending id, via a full sort.
inline std::vector<std::uint32_t> rank_all(const Tensor& db, const std::vector<std::uint32_t>& ids,
                                           std::span<const double> q) {
  std::vector<std::pair<double, std::uint32_t>> scored;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += db.at(i, j) * q[j];
    scored.emplace_back(-s, ids[i]);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::uint32_t> out;
  for (const auto& [s, id] : scored) out.push_back(id);
  return out;
}

// Percentage of queries whose first n ranked ids contain a database id of the same place.
inline double recall(const std::vector<std::vector<std::uint32_t>>& ranked, const std::vector<std::uint32_t>& query_places,
                     const std::vector<std::uint32_t>& db_ids, const std::vector<std::uint32_t>& db_places,
                     std::size_t n) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i)
    for (std::size_t j = 0; j < std::min(n, ranked[i].size()); ++j) {
      const auto at = std::find(db_ids.begin(), db_ids.end(), ranked[i][j]) - db_ids.begin();
      if (db_places[static_cast<std::size_t>(at)] == query_places[i]) {
        ++hits;
        break;
      }
    }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranked.size());
}

}  // namespace edt::oracle
