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
#include <cstdint>
#include <span>
#include <vector>

#include "edt/autodiff.hpp"

namespace edt {

struct LossConfig {
  double alpha = 1.0;
  double beta = 50.0;
  double lambda = 0.0;
  double margin = 0.1;  // mining epsilon

  void validate() const;
};

/// B x B cosine similarities of unit-norm descriptor rows. Throws ContractError when a row
/// is not unit length within 1e-6.
Tensor similarity_matrix(const Tensor& descriptors);
Var similarity_matrix(const Var& descriptors);

/// Kept pair indices per query row of a similarity matrix.
struct MinedPairs {
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;
  std::size_t queries_without_positives = 0;

  std::size_t positive_pairs() const;
  std::size_t negative_pairs() const;
  /// Queries with both a kept positive and a kept negative; only these contribute loss.
  std::size_t active_queries() const;
};

/// Hard pair mining relative to the opposite extreme:
///   keep n when S_qn > min_p S_qp - margin,   keep p when S_qp < max_n S_qn + margin.
/// The diagonal is never a candidate.
MinedPairs mine_pairs(const Tensor& similarity, std::span<const std::uint32_t> place_ids, double margin);

/// Multi-similarity loss averaged over the rows of `similarity`:
///   (1/B) sum_q [ (1/a) log(1 + sum_p e^{-a(S_qp - l)}) + (1/b) log(1 + sum_n e^{b(S_qn - l)}) ]
/// Both log terms use log-sum-exp. Rows lacking kept positives or kept negatives add zero.
double ms_loss(const Tensor& similarity, const MinedPairs& pairs, const LossConfig& cfg);
Var ms_loss(const Var& similarity, const MinedPairs& pairs, const LossConfig& cfg);

}  // namespace edt
