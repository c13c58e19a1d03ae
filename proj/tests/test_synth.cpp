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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "edt/binio.hpp"
#include "edt/synth.hpp"
#include "support.hpp"

using namespace edt;
using edt::test::bit_equal;
using edt::test::TempDir;

namespace {

SynthConfig small_synth() {
  SynthConfig c;
  c.places = 6;
  c.views_per_place = 4;
  c.image_size = 16;
  return c;
}

}  // namespace

TEST_SUITE("synthetic corpus") {
  TEST_CASE("default corpus has 128 images with matching manifest rows") {
    TempDir dir("synth_default");
    const Manifest m = generate(SynthConfig{}, dir.path());
    CHECK(m.rows.size() == 128);
    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "images")) files += e.is_regular_file();
    CHECK(files == 128);
    const Manifest back = read_manifest(manifest_path(dir.path()));
    REQUIRE(back.rows.size() == 128);
    std::map<Split, std::size_t> per_split;
    for (std::size_t i = 0; i < 128; ++i) {
      CHECK(back.rows[i].image_id == m.rows[i].image_id);
      CHECK(back.rows[i].place_id == m.rows[i].place_id);
      CHECK(back.rows[i].split == m.rows[i].split);
      ++per_split[m.rows[i].split];
    }
    CHECK(per_split[Split::train] == 64);
    CHECK(per_split[Split::db] == 32);
    CHECK(per_split[Split::query] == 32);
    const Tensor img = load_image(image_path(dir.path(), 5));
    CHECK(img.shape() == Shape{32, 32, 1});
  }

  TEST_CASE("generation is byte-deterministic") {
    TempDir a("synth_a"), b("synth_b");
    const SynthConfig cfg = small_synth();
    generate(cfg, a.path());
    generate(cfg, b.path());
    CHECK(read_file(manifest_path(a.path())) == read_file(manifest_path(b.path())));
    for (std::uint32_t id = 0; id < 24; ++id)
      CHECK(read_file(image_path(a.path(), id)) == read_file(image_path(b.path(), id)));
  }

  TEST_CASE("a different seed gives a different corpus") {
    SynthConfig a = small_synth(), b = small_synth();
    b.seed = a.seed + 1;
    CHECK_FALSE(bit_equal(render_view(a, 0, 0), render_view(b, 0, 0)));
  }

  TEST_CASE("without perturbation every view equals the base pattern") {
    SynthConfig cfg = small_synth();
    cfg.perturbation = {0, 0.0, 0.0};
    for (std::size_t p = 0; p < cfg.places; ++p) {
      const Tensor base = render_base(cfg, p);
      for (std::size_t v = 0; v < cfg.views_per_place; ++v) CHECK(bit_equal(render_view(cfg, p, v), base));
    }
  }

  TEST_CASE("places have distinct base patterns") {
    const SynthConfig cfg = small_synth();
    for (std::size_t p = 1; p < cfg.places; ++p) CHECK(max_abs_diff(render_base(cfg, 0), render_base(cfg, p)) > 0.1);
  }

  TEST_CASE("perturbations stay within their configured bounds") {
    SynthConfig cfg = small_synth();
    cfg.perturbation = {0, 0.05, 0.1};
    for (std::size_t p = 0; p < cfg.places; ++p) {
      const Tensor base = render_base(cfg, p);
      for (std::size_t v = 0; v < cfg.views_per_place; ++v) {
        const Tensor img = render_view(cfg, p, v);
        for (std::size_t i = 0; i < img.size(); ++i)
          CHECK(std::abs(img[i] - base[i]) <= 0.1 * std::abs(base[i]) + 3.0 * 0.05 + 1e-12);
      }
    }
  }

  TEST_CASE("a configured shift moves the pattern with edge clamping") {
    SynthConfig cfg = small_synth();
    cfg.perturbation = {2, 0.0, 0.0};
    bool any_shifted = false;
    for (std::size_t p = 0; p < cfg.places; ++p) {
      const Tensor base = render_base(cfg, p);
      for (std::size_t v = 0; v < cfg.views_per_place; ++v) {
        const Tensor img = render_view(cfg, p, v);
        // Recover the offset by exhaustive search over the allowed range.
        bool matched = false;
        for (long dy = -2; dy <= 2 && !matched; ++dy)
          for (long dx = -2; dx <= 2 && !matched; ++dx) {
            bool ok = true;
            for (long y = 0; y < 16 && ok; ++y)
              for (long x = 0; x < 16 && ok; ++x) {
                const long sy = std::clamp(y - dy, 0L, 15L), sx = std::clamp(x - dx, 0L, 15L);
                ok = img[static_cast<std::size_t>(y * 16 + x)] == base[static_cast<std::size_t>(sy * 16 + sx)];
              }
            if (ok) {
              matched = true;
              any_shifted = any_shifted || dx != 0 || dy != 0;
            }
          }
        CHECK(matched);
      }
    }
    CHECK(any_shifted);
  }

  TEST_CASE("view roles: last is query, second to last is database") {
    const SynthConfig cfg = small_synth();
    CHECK(cfg.split_of_view(0) == Split::train);
    CHECK(cfg.split_of_view(1) == Split::train);
    CHECK(cfg.split_of_view(2) == Split::db);
    CHECK(cfg.split_of_view(3) == Split::query);
  }

  TEST_CASE("invalid settings are rejected") {
    SynthConfig c = small_synth();
    c.views_per_place = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_synth();
    c.perturbation.shift_px = 4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_synth();
    c.perturbation.brightness_range = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("image files round-trip through float storage") {
    TempDir dir("synth_img");
    const Tensor img = render_view(small_synth(), 1, 2);
    save_image(dir / "x.edti", img);
    const Tensor back = load_image(dir / "x.edti");
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(img[i])));
  }

  TEST_CASE("corrupt image files raise format errors") {
    TempDir dir("synth_bad");
    const Tensor img = render_view(small_synth(), 0, 0);
    save_image(dir / "x.edti", img);
    std::string bytes = read_file(dir / "x.edti");
    write_file_atomic(dir / "trunc.edti", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_image(dir / "trunc.edti"), FormatError);
    std::string bad = bytes;
    bad[0] = 'X';
    write_file_atomic(dir / "magic.edti", bad);
    try {
      load_image(dir / "magic.edti");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
  }

  TEST_CASE("manifest rejects a query place without a database image") {
    TempDir dir("synth_manifest");
    Manifest m;
    m.rows = {{0, 0, Split::train}, {1, 0, Split::query}};
    write_manifest(dir / "m.csv", m);
    CHECK_THROWS_AS(read_manifest(dir / "m.csv"), std::invalid_argument);
  }

  TEST_CASE("an unwritable output path is reported") {
    TempDir dir("synth_unwritable");
    write_file_atomic(dir / "file", "x");
    CHECK_THROWS(generate(small_synth(), dir / "file" / "corpus"));
  }
}

TEST_SUITE("batch sampler") {
  TEST_CASE("batches hold P places with K distinct training views each") {
    SynthConfig cfg = small_synth();
    cfg.views_per_place = 5;  // three training views per place
    Manifest m;
    for (std::uint32_t p = 0; p < 6; ++p)
      for (std::uint32_t v = 0; v < 5; ++v) m.rows.push_back({p * 5 + v, p, cfg.split_of_view(v)});
    BatchSampler s(m, 3, 2, 1);
    for (int b = 0; b < 20; ++b) {
      const auto ids = s.next();
      REQUIRE(ids.size() == 6);
      std::set<std::uint32_t> places;
      for (std::size_t i = 0; i < 3; ++i) {
        const auto a = ids[2 * i], c = ids[2 * i + 1];
        CHECK(a != c);
        CHECK(s.place_of(a) == s.place_of(c));
        CHECK(cfg.split_of_view(a % 5) == Split::train);
        places.insert(s.place_of(a));
      }
      CHECK(places.size() == 3);
    }
  }

  TEST_CASE("every place appears once per epoch") {
    Manifest m;
    for (std::uint32_t p = 0; p < 8; ++p)
      for (std::uint32_t v = 0; v < 2; ++v) m.rows.push_back({p * 2 + v, p, Split::train});
    BatchSampler s(m, 4, 2, 3);
    CHECK(s.batches_per_epoch() == 2);
    for (int epoch = 0; epoch < 5; ++epoch) {
      std::multiset<std::uint32_t> seen;
      for (std::size_t b = 0; b < s.batches_per_epoch(); ++b)
        for (auto id : s.next()) seen.insert(s.place_of(id));
      for (std::uint32_t p = 0; p < 8; ++p) CHECK(seen.count(p) == 2);
    }
  }

  TEST_CASE("sampling is deterministic in the seed") {
    Manifest m;
    for (std::uint32_t p = 0; p < 8; ++p)
      for (std::uint32_t v = 0; v < 3; ++v) m.rows.push_back({p * 3 + v, p, Split::train});
    BatchSampler a(m, 4, 2, 9), b(m, 4, 2, 9), c(m, 4, 2, 10);
    bool differs = false;
    for (int i = 0; i < 10; ++i) {
      const auto x = a.next(), y = b.next(), z = c.next();
      CHECK(x == y);
      differs = differs || x != z;
    }
    CHECK(differs);
  }

  TEST_CASE("too few places is a configuration error") {
    Manifest m;
    for (std::uint32_t p = 0; p < 3; ++p)
      for (std::uint32_t v = 0; v < 2; ++v) m.rows.push_back({p * 2 + v, p, Split::train});
    CHECK_THROWS_AS(BatchSampler(m, 4, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(BatchSampler(m, 2, 3, 1), std::invalid_argument);
  }
}
