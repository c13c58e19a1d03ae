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

#include "edt/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "edt/ops.hpp"

namespace edt {

namespace {

constexpr double kUnitTol = 1e-6;

void check_unit_rows(const Tensor& d) {
  if (d.rank() != 2) throw DimensionError("descriptors must be a B x D matrix, got " + to_string(d.shape()));
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double sq = 0.0;
    for (double v : d.row(i)) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitTol)
      throw ContractError("descriptor row " + std::to_string(i) + " has norm " + std::to_string(std::sqrt(sq)) +
                          ", expected 1");
  }
}

// (1/scale) * log(1 + sum_i exp(scale * sign * (s_i - lambda))), and d/ds_i of it, stabilized.
double log_one_plus_sum_exp(const Tensor& s, std::size_t row, const std::vector<std::size_t>& cols, double scale,
                            double sign, double lambda, std::vector<double>* grad) {
  const std::size_t n = s.cols();
  double mx = 0.0;  // the implicit "1" term is exp(0)
  std::vector<double> a(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    a[i] = scale * sign * (s[row * n + cols[i]] - lambda);
    mx = std::max(mx, a[i]);
  }
  double total = std::exp(-mx);
  for (double v : a) total += std::exp(v - mx);
  if (grad) {
    grad->resize(cols.size());
    for (std::size_t i = 0; i < cols.size(); ++i) (*grad)[i] = sign * std::exp(a[i] - mx) / total;
  }
  return (mx + std::log(total)) / scale;
}

double ms_loss_impl(const Tensor& s, const MinedPairs& pairs, const LossConfig& cfg, Tensor* grad) {
  if (s.rank() != 2) throw DimensionError("ms_loss: similarity must be a matrix, got " + to_string(s.shape()));
  const std::size_t b = s.rows();
  if (pairs.positives.size() != b || pairs.negatives.size() != b)
    throw DimensionError("ms_loss: pair sets cover " + std::to_string(pairs.positives.size()) + " queries, matrix has " +
                         std::to_string(b) + " rows");
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  std::vector<double> gp, gn;
  for (std::size_t q = 0; q < b; ++q) {
    const auto& pos = pairs.positives[q];
    const auto& neg = pairs.negatives[q];
    if (pos.empty() || neg.empty()) continue;
    for (auto j : pos)
      if (j >= s.cols()) throw DimensionError("ms_loss: positive index out of range");
    for (auto j : neg)
      if (j >= s.cols()) throw DimensionError("ms_loss: negative index out of range");
    total += log_one_plus_sum_exp(s, q, pos, cfg.alpha, -1.0, cfg.lambda, grad ? &gp : nullptr);
    total += log_one_plus_sum_exp(s, q, neg, cfg.beta, 1.0, cfg.lambda, grad ? &gn : nullptr);
    if (grad) {
      for (std::size_t i = 0; i < pos.size(); ++i) grad->at(q, pos[i]) += inv_b * gp[i];
      for (std::size_t i = 0; i < neg.size(); ++i) grad->at(q, neg[i]) += inv_b * gn[i];
    }
  }
  return total * inv_b;
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("loss: alpha and beta must be positive");
  if (std::isnan(margin) || std::isnan(lambda)) throw std::invalid_argument("loss: margin and lambda must be numbers");
}

Tensor similarity_matrix(const Tensor& descriptors) {
  check_unit_rows(descriptors);
  Tape tape;
  auto scope = tape.inference();
  const Var d = tape.constant(descriptors);
  return matmul_nt(d, d).value();
}

Var similarity_matrix(const Var& descriptors) {
  check_unit_rows(descriptors.value());
  return matmul_nt(descriptors, descriptors);
}

std::size_t MinedPairs::positive_pairs() const {
  std::size_t n = 0;
  for (const auto& p : positives) n += p.size();
  return n;
}

std::size_t MinedPairs::negative_pairs() const {
  std::size_t n = 0;
  for (const auto& p : negatives) n += p.size();
  return n;
}

std::size_t MinedPairs::active_queries() const {
  std::size_t n = 0;
  for (std::size_t q = 0; q < positives.size(); ++q) n += (!positives[q].empty() && !negatives[q].empty()) ? 1 : 0;
  return n;
}

MinedPairs mine_pairs(const Tensor& similarity, std::span<const std::uint32_t> place_ids, double margin) {
  const std::size_t b = place_ids.size();
  if (similarity.rank() != 2 || similarity.rows() != b || similarity.cols() != b)
    throw DimensionError("mine_pairs: similarity " + to_string(similarity.shape()) + " for " + std::to_string(b) +
                         " labels");
  constexpr double inf = std::numeric_limits<double>::infinity();
  MinedPairs out;
  out.positives.resize(b);
  out.negatives.resize(b);
  for (std::size_t q = 0; q < b; ++q) {
    double min_pos = inf, max_neg = -inf;
    bool has_pos = false, has_neg = false;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == q) continue;
      const double s = similarity.at(q, j);
      if (place_ids[j] == place_ids[q]) {
        has_pos = true;
        min_pos = std::min(min_pos, s);
      } else {
        has_neg = true;
        max_neg = std::max(max_neg, s);
      }
    }
    if (!has_pos) {
      ++out.queries_without_positives;
      continue;
    }
    if (!has_neg) continue;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == q) continue;
      const double s = similarity.at(q, j);
      if (place_ids[j] == place_ids[q]) {
        if (s < max_neg + margin) out.positives[q].push_back(j);
      } else if (s > min_pos - margin) {
        out.negatives[q].push_back(j);
      }
    }
  }
  return out;
}

double ms_loss(const Tensor& similarity, const MinedPairs& pairs, const LossConfig& cfg) {
  return ms_loss_impl(similarity, pairs, cfg, nullptr);
}

Var ms_loss(const Var& similarity, const MinedPairs& pairs, const LossConfig& cfg) {
  Tensor grad(similarity.shape());
  const double value = ms_loss_impl(similarity.value(), pairs, cfg, &grad);
  return similarity.tape().record(
      Tensor({1}, value), {similarity}, {}, grad.bytes(),
      [similarity, grad = std::move(grad)](Tape& t, const Tensor& g) {
        if (!t.needs_grad(similarity)) return;
        auto gs = t.adjoint(similarity).data();
        for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += g[0] * grad[i];
      },
      // Pairs stay as mined at record time; only the similarities are re-read.
      [pairs, cfg](const std::vector<const Tensor*>& in) {
        return Tensor({1}, ms_loss_impl(*in[0], pairs, cfg, nullptr));
      });
}

}  // namespace edt
