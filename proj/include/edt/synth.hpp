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
#include <string_view>
#include <vector>

#include "edt/random.hpp"
#include "edt/tensor.hpp"

namespace edt {

enum class Split { train, db, query };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Perturbation {
  // A one-pixel shift moves content across the 8-pixel patch grid; with two training views per
  // place the pooled aggregator cannot learn that invariance, so the default corpus does not shift.
  std::size_t shift_px = 0;
  double noise_std = 0.02;
  double brightness_range = 0.1;
};

/// Views of each place: the last one is the query, the one before it goes to the database,
/// the rest are training views.
struct SynthConfig {
  std::size_t places = 32;
  std::size_t views_per_place = 4;
  std::size_t image_size = 32;
  std::size_t channels = 1;
  Perturbation perturbation;
  std::uint64_t seed = 11;

  void validate() const;
  Split split_of_view(std::size_t view) const;
};

struct ManifestRow {
  std::uint32_t image_id = 0;
  std::uint32_t place_id = 0;
  Split split = Split::train;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  std::vector<ManifestRow> select(Split s) const;
  void validate() const;
};

/// Smooth seeded pattern for a place: a few low-frequency sinusoids plus a bright or dark
/// rectangle whose placement is unique to the place. Shape s x s x c.
Tensor render_base(const SynthConfig& cfg, std::size_t place);
/// Base pattern shifted (edge-clamped), scaled in brightness, plus noise clipped to 3 sigma.
Tensor render_view(const SynthConfig& cfg, std::size_t place, std::size_t view);

/// Writes images/<id>.edti for every view plus manifest.csv into `dir`.
Manifest generate(const SynthConfig& cfg, const std::filesystem::path& dir);

std::filesystem::path image_path(const std::filesystem::path& dir, std::uint32_t image_id);
std::filesystem::path manifest_path(const std::filesystem::path& dir);

// Image file: "EDTI", u32 version, u32 h, u32 w, u32 c, f32 LE payload.
inline constexpr std::uint32_t kImageVersion = 1;
void save_image(const std::filesystem::path& path, const Tensor& image);
Tensor load_image(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// P places x K views per batch. Places are drawn without replacement within an epoch and the
/// K views of a place are distinct training views.
class BatchSampler {
 public:
  BatchSampler(const Manifest& manifest, std::size_t places_per_batch, std::size_t images_per_place,
               std::uint64_t seed);

  /// P*K image ids, grouped by place.
  std::vector<std::uint32_t> next();
  std::size_t batches_per_epoch() const { return order_.size() / places_per_batch_; }
  std::size_t epoch() const { return epoch_; }
  std::uint32_t place_of(std::uint32_t image_id) const;

 private:
  void reshuffle();

  std::size_t places_per_batch_;
  std::size_t images_per_place_;
  Rng rng_;
  std::vector<std::uint32_t> places_;
  std::vector<std::vector<std::uint32_t>> views_;  // aligned with places_
  std::vector<std::pair<std::uint32_t, std::uint32_t>> place_of_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace edt
