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

#include "edt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "edt/binio.hpp"

namespace edt {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::db:
      return "db";
    case Split::query:
      return "query";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "db") return Split::db;
  if (s == "query") return Split::query;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

void SynthConfig::validate() const {
  if (places == 0) throw std::invalid_argument("synth: places must be at least 1");
  if (views_per_place < 2) throw std::invalid_argument("synth: views_per_place must be at least 2");
  if (image_size < 4 || channels == 0) throw std::invalid_argument("synth: image_size >= 4 and channels >= 1 required");
  if (perturbation.shift_px * 4 >= image_size)
    throw std::invalid_argument("synth: shift_px must be below image_size / 4");
  if (!(perturbation.noise_std >= 0.0) || !(perturbation.brightness_range >= 0.0) ||
      perturbation.brightness_range >= 1.0)
    throw std::invalid_argument("synth: noise_std >= 0 and 0 <= brightness_range < 1 required");
}

Split SynthConfig::split_of_view(std::size_t view) const {
  if (view + 1 == views_per_place) return Split::query;
  if (view + 2 == views_per_place) return Split::db;
  return Split::train;
}

std::vector<ManifestRow> Manifest::select(Split s) const {
  std::vector<ManifestRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), [s](const ManifestRow& r) { return r.split == s; });
  return out;
}

void Manifest::validate() const {
  std::set<std::uint32_t> ids, db_places;
  for (const auto& r : rows) {
    if (!ids.insert(r.image_id).second)
      throw std::invalid_argument("manifest: duplicate image_id " + std::to_string(r.image_id));
    if (r.split == Split::db) db_places.insert(r.place_id);
  }
  for (const auto& r : rows)
    if (r.split == Split::query && !db_places.contains(r.place_id))
      throw std::invalid_argument("manifest: query place " + std::to_string(r.place_id) + " has no database image");
}

Tensor render_base(const SynthConfig& cfg, std::size_t place) {
  const std::size_t s = cfg.image_size, c = cfg.channels;
  Rng rng = make_rng(cfg.seed, 0x5EED0000ull + place);
  std::uniform_real_distribution<double> amp(0.3, 0.7), freq(0.5, 2.0), phase(0.0, 2.0 * std::numbers::pi);
  constexpr int kWaves = 3;
  Tensor img({s, s, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (int w = 0; w < kWaves; ++w) {
      const double a = amp(rng), fx = freq(rng), fy = freq(rng), ph = phase(rng);
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          img[(y * s + x) * c + ch] +=
              a * std::sin(2.0 * std::numbers::pi * (fx * static_cast<double>(x) + fy * static_cast<double>(y)) /
                               static_cast<double>(s) +
                           ph);
    }
  }
  std::uniform_int_distribution<std::size_t> extent(s / 4, s / 2);
  const std::size_t rw = extent(rng), rh = extent(rng);
  std::uniform_int_distribution<std::size_t> px(0, s - rw), py(0, s - rh);
  const std::size_t x0 = px(rng), y0 = py(rng);
  const double level = (rng() & 1) ? 1.5 : -1.5;
  for (std::size_t y = y0; y < y0 + rh; ++y)
    for (std::size_t x = x0; x < x0 + rw; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) img[(y * s + x) * c + ch] += level;
  return img;
}

Tensor render_view(const SynthConfig& cfg, std::size_t place, std::size_t view) {
  const Tensor base = render_base(cfg, place);
  const std::size_t s = cfg.image_size, c = cfg.channels;
  const auto& pert = cfg.perturbation;
  Rng rng = make_rng(cfg.seed, (0x71E3ull << 32) + place * 1024 + view);
  const auto shift = static_cast<long>(pert.shift_px);
  std::uniform_int_distribution<long> shift_dist(-shift, shift);
  const long dx = shift_dist(rng), dy = shift_dist(rng);
  std::uniform_real_distribution<double> bright(1.0 - pert.brightness_range, 1.0 + pert.brightness_range);
  const double b = pert.brightness_range > 0.0 ? bright(rng) : 1.0;
  std::normal_distribution<double> noise(0.0, pert.noise_std > 0.0 ? pert.noise_std : 1.0);
  const double clip = 3.0 * pert.noise_std;

  const auto clamp = [s](long v) { return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(s) - 1)); };
  Tensor img({s, s, c});
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const std::size_t sy = clamp(static_cast<long>(y) - dy), sx = clamp(static_cast<long>(x) - dx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = b * base[(sy * s + sx) * c + ch];
        if (pert.noise_std > 0.0) v += std::clamp(noise(rng), -clip, clip);
        img[(y * s + x) * c + ch] = v;
      }
    }
  return img;
}

std::filesystem::path image_path(const std::filesystem::path& dir, std::uint32_t image_id) {
  return dir / "images" / (std::to_string(image_id) + ".edti");
}

std::filesystem::path manifest_path(const std::filesystem::path& dir) { return dir / "manifest.csv"; }

Manifest generate(const SynthConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + (dir / "images").string() + ": " + ec.message());
  Manifest m;
  for (std::size_t p = 0; p < cfg.places; ++p)
    for (std::size_t v = 0; v < cfg.views_per_place; ++v) {
      const auto id = static_cast<std::uint32_t>(p * cfg.views_per_place + v);
      save_image(image_path(dir, id), render_view(cfg, p, v));
      m.rows.push_back({id, static_cast<std::uint32_t>(p), cfg.split_of_view(v)});
    }
  write_manifest(manifest_path(dir), m);
  return m;
}

void save_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("image must be h x w x c, got " + to_string(image.shape()));
  BinaryWriter w;
  w.magic("EDTI");
  w.u32(kImageVersion);
  for (auto e : image.shape()) w.u32(static_cast<std::uint32_t>(e));
  for (double v : image.data()) w.f32(static_cast<float>(v));
  write_file_atomic(path, w.buffer());
}

Tensor load_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  BinaryReader r(bytes);
  r.expect_magic("EDTI", "image");
  const std::size_t at = r.offset();
  if (const auto v = r.u32(); v != kImageVersion) throw FormatError("unsupported image version " + std::to_string(v), at);
  const std::size_t dims_at = r.offset();
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  if (h == 0 || w == 0 || c == 0) throw FormatError("image has an empty extent", dims_at);
  r.expect_remaining(static_cast<std::size_t>(h) * w * c * sizeof(float), "image");
  Tensor img({h, w, c});
  for (auto& v : img.data()) v = r.f32();
  return img;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ostringstream os;
  os << "image_id,place_id,split\n";
  for (const auto& r : m.rows) os << r.image_id << ',' << r.place_id << ',' << to_string(r.split) << '\n';
  write_file_atomic(path, os.str());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "image_id,place_id,split")
    throw std::invalid_argument("manifest " + path.string() + ": expected header image_id,place_id,split");
  Manifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, place, split;
    if (!std::getline(ls, id, ',') || !std::getline(ls, place, ',') || !std::getline(ls, split))
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": expected 3 fields");
    try {
      m.rows.push_back({static_cast<std::uint32_t>(std::stoul(id)), static_cast<std::uint32_t>(std::stoul(place)),
                        parse_split(split)});
    } catch (const std::logic_error& e) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

BatchSampler::BatchSampler(const Manifest& manifest, std::size_t places_per_batch, std::size_t images_per_place,
                           std::uint64_t seed)
    : places_per_batch_(places_per_batch), images_per_place_(images_per_place), rng_(make_rng(seed, 0xBA7C)) {
  if (places_per_batch == 0 || images_per_place == 0)
    throw std::invalid_argument("sampler: P and K must be at least 1");
  std::map<std::uint32_t, std::vector<std::uint32_t>> by_place;
  for (const auto& r : manifest.rows)
    if (r.split == Split::train) {
      by_place[r.place_id].push_back(r.image_id);
      place_of_.emplace_back(r.image_id, r.place_id);
    }
  std::sort(place_of_.begin(), place_of_.end());
  for (auto& [place, ids] : by_place)
    if (ids.size() >= images_per_place) {
      places_.push_back(place);
      views_.push_back(ids);
    }
  if (places_.size() < places_per_batch)
    throw std::invalid_argument("sampler: need " + std::to_string(places_per_batch) + " places with at least " +
                                std::to_string(images_per_place) + " training views, found " +
                                std::to_string(places_.size()));
  order_.resize(places_.size());
  reshuffle();
  epoch_ = 0;
}

void BatchSampler::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
  ++epoch_;
}

std::vector<std::uint32_t> BatchSampler::next() {
  if (cursor_ + places_per_batch_ > order_.size()) reshuffle();
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < places_per_batch_; ++i) {
    auto views = views_[order_[cursor_ + i]];
    std::shuffle(views.begin(), views.end(), rng_);
    ids.insert(ids.end(), views.begin(), views.begin() + static_cast<std::ptrdiff_t>(images_per_place_));
  }
  cursor_ += places_per_batch_;
  return ids;
}

std::uint32_t BatchSampler::place_of(std::uint32_t image_id) const {
  auto it = std::lower_bound(place_of_.begin(), place_of_.end(), std::make_pair(image_id, std::uint32_t{0}));
  if (it == place_of_.end() || it->first != image_id)
    throw std::invalid_argument("sampler: unknown training image " + std::to_string(image_id));
  return it->second;
}

}  // namespace edt
