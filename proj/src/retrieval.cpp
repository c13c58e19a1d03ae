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

#include "edt/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "edt/binio.hpp"
#include "edt/kernels.hpp"

namespace edt {

namespace {

constexpr double kUnitTol = 1e-6;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ls(line);
  std::string f;
  while (std::getline(ls, f, ',')) out.push_back(f);
  return out;
}

}  // namespace

DescriptorIndex::DescriptorIndex(std::vector<std::uint32_t> ids, Tensor matrix)
    : ids_(std::move(ids)), matrix_(std::move(matrix)) {
  if (ids_.empty()) throw DegenerateInputError("descriptor index is empty");
  if (matrix_.rank() != 2 || matrix_.rows() != ids_.size())
    throw DimensionError("descriptor index: " + std::to_string(ids_.size()) + " ids for matrix " +
                         to_string(matrix_.shape()));
  std::set<std::uint32_t> seen;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!seen.insert(ids_[i]).second) throw std::invalid_argument("descriptor index: duplicate id " + std::to_string(ids_[i]));
    double sq = 0.0;
    for (double v : matrix_.row(i)) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitTol)
      throw ContractError("descriptor index: row for id " + std::to_string(ids_[i]) + " is not unit norm");
  }
}

std::vector<std::uint32_t> knn(const DescriptorIndex& index, std::span<const double> query, std::size_t k,
                               std::optional<std::uint32_t> exclude) {
  if (query.size() != index.dim())
    throw DimensionError("knn: query of dim " + std::to_string(query.size()) + " against index of dim " +
                         std::to_string(index.dim()));
  if (k > index.size())
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " exceeds index size " + std::to_string(index.size()));
  std::vector<double> scores(index.size());
  kernels::inner_products(index.matrix().data(), query, scores, index.size(), index.dim());

  const auto& ids = index.ids();
  std::vector<std::size_t> order;
  order.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    if (!exclude || ids[i] != *exclude) order.push_back(i);
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
  std::vector<std::uint32_t> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = ids[order[i]];
  return out;
}

GroundTruth GroundTruth::from_places(std::span<const std::uint32_t> query_ids,
                                     std::span<const std::uint32_t> query_places,
                                     std::span<const std::uint32_t> db_ids, std::span<const std::uint32_t> db_places) {
  if (query_ids.size() != query_places.size() || db_ids.size() != db_places.size())
    throw DimensionError("ground truth: ids and place ids are not aligned");
  std::map<std::uint32_t, std::vector<std::uint32_t>> db_by_place;
  for (std::size_t i = 0; i < db_ids.size(); ++i) db_by_place[db_places[i]].push_back(db_ids[i]);
  GroundTruth gt;
  for (std::size_t i = 0; i < query_ids.size(); ++i) {
    auto& pos = gt.positives[query_ids[i]];
    if (auto it = db_by_place.find(query_places[i]); it != db_by_place.end())
      for (auto id : it->second)
        if (id != query_ids[i]) pos.insert(id);
  }
  return gt;
}

double EvalResult::recall(std::size_t n) const {
  for (const auto& [k, v] : recall_at)
    if (k == n) return v;
  throw std::out_of_range("recall@" + std::to_string(n) + " was not computed");
}

EvalResult recall_at_n(const std::vector<RankedList>& lists, const GroundTruth& gt, std::span<const std::size_t> ns) {
  if (lists.empty()) throw std::invalid_argument("recall: no queries");
  EvalResult r;
  for (const auto& list : lists) {
    auto it = gt.positives.find(list.query_id);
    if (it == gt.positives.end() || it->second.empty())
      throw std::invalid_argument("recall: query " + std::to_string(list.query_id) + " has no positives");
    QueryRank qr{list.query_id, std::nullopt};
    for (std::size_t i = 0; i < list.ranked.size(); ++i)
      if (it->second.contains(list.ranked[i])) {
        qr.first_correct = i + 1;
        break;
      }
    r.ranks.push_back(qr);
  }
  for (std::size_t n : ns) {
    if (n == 0) throw std::invalid_argument("recall: N must be at least 1");
    const auto hits = std::count_if(r.ranks.begin(), r.ranks.end(),
                                    [n](const QueryRank& q) { return q.first_correct && *q.first_correct <= n; });
    r.recall_at.emplace_back(n, 100.0 * static_cast<double>(hits) / static_cast<double>(r.ranks.size()));
  }
  return r;
}

EvalResult evaluate_descriptors(const DescriptorSet& queries, const DescriptorSet& db, const GroundTruth& gt,
                                std::span<const std::size_t> ns) {
  if (queries.matrix.cols() != db.matrix.cols())
    throw DimensionError("evaluate: query dim " + std::to_string(queries.matrix.cols()) + " vs database dim " +
                         std::to_string(db.matrix.cols()));
  const DescriptorIndex index(db.ids, db.matrix);
  const std::size_t max_n = ns.empty() ? 1 : *std::max_element(ns.begin(), ns.end());
  std::vector<RankedList> lists(queries.ids.size());
#pragma omp parallel for schedule(dynamic)
  for (long long q = 0; q < static_cast<long long>(queries.ids.size()); ++q) {
    const std::uint32_t id = queries.ids[q];
    lists[q] = {id, knn(index, queries.matrix.row(q), std::min(max_n, index.size()), id)};
  }
  return recall_at_n(lists, gt, ns);
}

std::filesystem::path sidecar_path(const std::filesystem::path& descriptor_file) {
  auto p = descriptor_file;
  p += ".csv";
  return p;
}

void save_descriptors(const std::filesystem::path& path, const DescriptorSet& set) {
  const std::size_t n = set.ids.size();
  if (set.matrix.rank() != 2 || set.matrix.rows() != n || set.place_ids.size() != n)
    throw DimensionError("descriptor set: ids, place ids and matrix rows disagree");
  BinaryWriter w;
  w.magic("EDTD");
  w.u32(kDescriptorVersion);
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(set.matrix.cols()));
  for (double v : set.matrix.data()) w.f32(static_cast<float>(v));
  std::ostringstream side;
  side << "id,place_id\n";
  for (std::size_t i = 0; i < n; ++i) side << set.ids[i] << ',' << set.place_ids[i] << '\n';
  write_file_atomic(sidecar_path(path), side.str());
  write_file_atomic(path, w.buffer());
}

DescriptorSet load_descriptors(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  BinaryReader r(bytes);
  r.expect_magic("EDTD", "descriptor file");
  const std::size_t at = r.offset();
  if (const auto v = r.u32(); v != kDescriptorVersion)
    throw FormatError("unsupported descriptor version " + std::to_string(v), at);
  const std::size_t dims_at = r.offset();
  const std::uint32_t count = r.u32(), dim = r.u32();
  if (count == 0 || dim == 0) throw FormatError("descriptor file has an empty extent", dims_at);
  r.expect_remaining(static_cast<std::size_t>(count) * dim * sizeof(float), "descriptor file");
  DescriptorSet set;
  set.matrix = Tensor({count, dim});
  for (auto& v : set.matrix.data()) v = r.f32();

  std::ifstream side(sidecar_path(path));
  if (!side) throw std::runtime_error("missing sidecar " + sidecar_path(path).string());
  std::string line;
  if (!std::getline(side, line) || line != "id,place_id")
    throw std::invalid_argument(sidecar_path(path).string() + ": expected header id,place_id");
  while (std::getline(side, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 2) throw std::invalid_argument(sidecar_path(path).string() + ": bad row '" + line + "'");
    set.ids.push_back(static_cast<std::uint32_t>(std::stoul(f[0])));
    set.place_ids.push_back(static_cast<std::uint32_t>(std::stoul(f[1])));
  }
  if (set.ids.size() != count)
    throw std::invalid_argument(sidecar_path(path).string() + ": " + std::to_string(set.ids.size()) +
                                " rows for " + std::to_string(count) + " descriptors");
  return set;
}

void write_ground_truth(const std::filesystem::path& path, const GroundTruth& gt) {
  std::ostringstream os;
  os << "query_id,db_id\n";
  for (const auto& [q, pos] : gt.positives)
    for (auto d : pos) os << q << ',' << d << '\n';
  write_file_atomic(path, os.str());
}

GroundTruth read_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ground truth " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "query_id,db_id")
    throw std::invalid_argument(path.string() + ": expected header query_id,db_id");
  GroundTruth gt;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 2) throw std::invalid_argument(path.string() + ": bad row '" + line + "'");
    gt.positives[static_cast<std::uint32_t>(std::stoul(f[0]))].insert(static_cast<std::uint32_t>(std::stoul(f[1])));
  }
  return gt;
}

void write_recall_csv(const std::filesystem::path& path, const EvalResult& r) {
  std::ostringstream os;
  os << "N,recall\n" << std::setprecision(10);
  for (const auto& [n, v] : r.recall_at) os << n << ',' << v << '\n';
  write_file_atomic(path, os.str());
}

void write_ranks_csv(const std::filesystem::path& path, const EvalResult& r) {
  std::ostringstream os;
  os << "query_id,first_correct_rank\n";
  for (const auto& q : r.ranks) {
    os << q.query_id << ',';
    if (q.first_correct) os << *q.first_correct;
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

}  // namespace edt
