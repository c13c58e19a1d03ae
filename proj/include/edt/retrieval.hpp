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
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "edt/tensor.hpp"

namespace edt {

/// Unit-norm descriptor rows with unique ids, searched exhaustively.
class DescriptorIndex {
 public:
  DescriptorIndex(std::vector<std::uint32_t> ids, Tensor matrix);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return matrix_.cols(); }
  const std::vector<std::uint32_t>& ids() const { return ids_; }
  const Tensor& matrix() const { return matrix_; }

 private:
  std::vector<std::uint32_t> ids_;
  Tensor matrix_;
};

/// Top-k ids by descending inner product, ties broken by ascending id. `exclude` drops one id
/// from the candidates (a query's own image when query and database overlap).
std::vector<std::uint32_t> knn(const DescriptorIndex& index, std::span<const double> query, std::size_t k,
                               std::optional<std::uint32_t> exclude = std::nullopt);

struct GroundTruth {
  std::map<std::uint32_t, std::set<std::uint32_t>> positives;  // query id -> database ids

  /// Positives are database entries with the same place id.
  static GroundTruth from_places(std::span<const std::uint32_t> query_ids, std::span<const std::uint32_t> query_places,
                                 std::span<const std::uint32_t> db_ids, std::span<const std::uint32_t> db_places);
};

struct RankedList {
  std::uint32_t query_id = 0;
  std::vector<std::uint32_t> ranked;
};

struct QueryRank {
  std::uint32_t query_id = 0;
  std::optional<std::size_t> first_correct;  // 1-based
};

struct EvalResult {
  std::vector<std::pair<std::size_t, double>> recall_at;  // N -> percent
  std::vector<QueryRank> ranks;

  double recall(std::size_t n) const;
};

/// R@N = 100 * |{q : top-N(q) hits gt(q)}| / #queries. A query without positives is a
/// configuration error (std::invalid_argument).
EvalResult recall_at_n(const std::vector<RankedList>& lists, const GroundTruth& gt, std::span<const std::size_t> ns);

struct DescriptorSet {
  std::vector<std::uint32_t> ids;
  std::vector<std::uint32_t> place_ids;
  Tensor matrix;  // count x dim
};

/// Ranks every query against the database (self id excluded) and scores recall.
EvalResult evaluate_descriptors(const DescriptorSet& queries, const DescriptorSet& db, const GroundTruth& gt,
                                std::span<const std::size_t> ns);

// Descriptor file: "EDTD", u32 version, u32 count, u32 dim, f32 LE rows. Sidecar <file>.csv
// holds id,place_id per row.
inline constexpr std::uint32_t kDescriptorVersion = 1;
std::filesystem::path sidecar_path(const std::filesystem::path& descriptor_file);
void save_descriptors(const std::filesystem::path& path, const DescriptorSet& set);
DescriptorSet load_descriptors(const std::filesystem::path& path);

/// query_id,db_id rows, one per positive pair.
void write_ground_truth(const std::filesystem::path& path, const GroundTruth& gt);
GroundTruth read_ground_truth(const std::filesystem::path& path);

/// "N,recall" rows.
void write_recall_csv(const std::filesystem::path& path, const EvalResult& r);
/// "query_id,first_correct_rank" rows; rank is empty when no positive was retrieved.
void write_ranks_csv(const std::filesystem::path& path, const EvalResult& r);

}  // namespace edt
