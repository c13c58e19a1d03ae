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

#include <fstream>

#include "edt/backbone.hpp"
#include "edt/binio.hpp"
#include "edt/gradcheck.hpp"
#include "edt/lopa.hpp"
#include "edt/model.hpp"
#include "edt/ops.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace edt;
using edt::test::bit_equal;
using edt::test::random_tensor;

namespace {

ViTConfig small_vit() {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.dim = 12;
  c.depth = 2;
  c.heads = 3;
  c.seed = 5;
  return c;
}

Tensor image_for(const ViTConfig& c, std::uint64_t seed) {
  return random_tensor({c.image_size, c.image_size, c.channels}, seed);
}

// Encoder block straight from the definition: z' = MHA(LN(z)) + z; out = MLP(LN(z')) + z'.
oracle::Mat encoder_block_oracle(const oracle::Mat& z, EncoderBlockParams& b, std::size_t heads) {
  const oracle::Mat h = oracle::layer_norm(z, b.ln1_gamma.value, b.ln1_beta.value, 1e-6);
  const auto& a = b.attn;
  const oracle::Mat mid = oracle::plus(oracle::mha(h, h, h, a.wq.value, a.bq.value, a.wk.value, a.bk.value, a.wv.value,
                                                   a.bv.value, a.wo.value, a.bo.value, heads),
                                       z);
  const oracle::Mat h2 = oracle::layer_norm(mid, b.ln2_gamma.value, b.ln2_beta.value, 1e-6);
  const oracle::Mat hidden = oracle::gelu(oracle::add_bias(oracle::mul(h2, oracle::Mat(b.fc1_w.value)), b.fc1_b.value));
  return oracle::plus(oracle::add_bias(oracle::mul(hidden, oracle::Mat(b.fc2_w.value)), b.fc2_b.value), mid);
}

std::vector<AdaptFn> random_adapters(std::size_t depth, std::size_t d, std::size_t r, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xADA);
  std::vector<AdaptFn> fns;
  for (std::size_t i = 0; i < depth; ++i)
    fns.push_back({Param("down" + std::to_string(i), normal_tensor({d, r}, 0.3, rng)),
                   Param("up" + std::to_string(i), normal_tensor({r, d}, 0.3, rng))});
  return fns;
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("patch embedding shape") {
    Backbone bb(small_vit());
    const TokenSeq z = patch_embed(image_for(small_vit(), 1), bb);
    CHECK(z.tokens.shape() == Shape{5, 12});
  }

  TEST_CASE("patchify order is grid row-major, each patch row, column, channel") {
    ViTConfig c = small_vit();
    c.channels = 2;
    Tensor img({8, 8, 2});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
    const Tensor p = patchify(img, c);
    CHECK(p.shape() == Shape{4, 32});
    // Patch 1 is grid row 0, column 1: pixel (y=0, x=4) channel 0 leads, then channel 1.
    CHECK(p.at(1, 0) == static_cast<double>((0 * 8 + 4) * 2));
    CHECK(p.at(1, 1) == static_cast<double>((0 * 8 + 4) * 2 + 1));
    // Second row of patch 2 (grid row 1, column 0) starts at pixel (y=5, x=0).
    CHECK(p.at(2, 8) == static_cast<double>((5 * 8 + 0) * 2));
  }

  TEST_CASE("zero image embeds to class token and position embeddings") {
    Backbone bb(small_vit());
    const TokenSeq z = patch_embed(Tensor({8, 8, 1}), bb);
    for (std::size_t j = 0; j < 12; ++j) CHECK(z.tokens.at(0, j) == bb.class_token().value[j]);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 12; ++j) CHECK(z.tokens.at(i + 1, j) == bb.position_embedding().value.at(i, j));
  }

  TEST_CASE("same seed and image give bit-identical features") {
    Backbone a(small_vit()), b(small_vit());
    const Tensor img = image_for(small_vit(), 2);
    const auto sa = a.forward_collect(img), sb = b.forward_collect(img);
    REQUIRE(sa.layers.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) CHECK(bit_equal(sa.layers[l], sb.layers[l]));
  }

  TEST_CASE("wrong image size is rejected") {
    Backbone bb(small_vit());
    CHECK_THROWS_AS(patch_embed(Tensor({9, 9, 1}), bb), DimensionError);
  }

  TEST_CASE("encoder block matches the straight-line oracle") {
    Backbone bb(small_vit());
    EncoderBlockParams& b = bb.block(0);
    Rng rng = make_rng(3, 3);
    for (Param* p : b.params()) p->value = normal_tensor(p->value.shape(), 0.3, rng);
    const Tensor z = random_tensor({3, 12}, 4);
    Tape t;
    auto s = t.inference();
    const Tensor out = bb.encoder_block(t, t.constant(z), 0).value();
    CHECK(out.shape() == z.shape());
    CHECK(oracle::max_diff(encoder_block_oracle(oracle::Mat(z), b, 3), out) < 1e-12);
  }

  TEST_CASE("zeroed output projections make the block a pure residual") {
    Backbone bb(small_vit());
    EncoderBlockParams& b = bb.block(1);
    for (Param* p : {&b.attn.wo, &b.attn.bo, &b.fc2_w, &b.fc2_b}) p->value.fill(0.0);
    const Tensor z = random_tensor({5, 12}, 6);
    Tape t;
    auto s = t.inference();
    CHECK(bit_equal(bb.encoder_block(t, t.constant(z), 1).value(), z));
  }

  TEST_CASE("forward_collect keeps no backbone activations") {
    ViTConfig c = small_vit();
    c.depth = 4;
    Backbone bb(c);
    Tape t;
    const auto zs = bb.forward_collect(t, image_for(c, 7));
    CHECK(zs.size() == 5);
    CHECK(t.retained_bytes("backbone") == 0);
    for (const auto& z : zs) CHECK_FALSE(z.requires_grad());
  }

  TEST_CASE("feature stack file round-trip and corruption") {
    test::TempDir dir("stack");
    Backbone bb(small_vit());
    const auto stack = bb.forward_collect(image_for(small_vit(), 8));
    save_feature_stack(dir / "z.edtz", stack);
    const auto back = load_feature_stack(dir / "z.edtz");
    REQUIRE(back.layers.size() == stack.layers.size());
    for (std::size_t l = 0; l < stack.layers.size(); ++l)
      for (std::size_t i = 0; i < stack.layers[l].size(); ++i)
        CHECK(back.layers[l][i] == static_cast<double>(static_cast<float>(stack.layers[l][i])));

    const std::string bytes = read_file(dir / "z.edtz");
    CHECK_THROWS_AS(decode_feature_stack(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(decode_feature_stack(bytes.substr(0, 10)), FormatError);
    std::string wrong_count = bytes;
    wrong_count[8] = 7;  // layer count
    CHECK_THROWS_AS(decode_feature_stack(wrong_count), FormatError);
    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_AS(decode_feature_stack(wrong_magic), FormatError);
  }

  TEST_CASE("frozen params are never trainable") {
    Backbone bb(small_vit());
    for (Param* p : bb.params()) CHECK_FALSE(p->trainable);
  }
}

TEST_SUITE("lopa") {
  TEST_CASE("scalar adapter evaluation") {
    AdaptFn f{Param("d", Tensor::matrix(1, 1, {1.0})), Param("u", Tensor::matrix(1, 1, {2.0}))};
    Tape t;
    auto s = t.inference();
    const double y = adapt_fn(t.constant(Tensor::matrix(1, 1, {1.0})), f, 0.5).value()[0];
    // 0.5 * 2 * gelu(1) + 1
    CHECK(y == doctest::Approx(1.8413447460685429).epsilon(1e-15));
  }

  TEST_CASE("zero up-projection or zero scale is the identity") {
    auto fns = random_adapters(1, 6, 2, 1);
    const Tensor x = random_tensor({4, 6}, 2);
    Tape t;
    auto s = t.inference();
    CHECK(bit_equal(adapt_fn(t.constant(x), fns[0], 0.0).value(), x));
    fns[0].up.value.fill(0.0);
    CHECK(bit_equal(adapt_fn(t.constant(x), fns[0], 0.5).value(), x));
  }

  TEST_CASE("zero-initialized ladder returns the sum of the stack") {
    Lopa lopa(LoPAConfig{4, 0.5, 3}, 8, 11);
    std::vector<Tensor> zs;
    for (int i = 0; i < 4; ++i) zs.push_back(random_tensor({5, 8}, 20 + i));
    Tape t;
    std::vector<Var> stack;
    for (const auto& z : zs) stack.push_back(t.constant(z));
    const Tensor y = lopa.forward(stack).value();
    for (std::size_t i = 0; i < y.size(); ++i) {
      double sum = 0.0;
      for (const auto& z : zs) sum += z[i];
      CHECK(std::abs(y[i] - sum) <= 1e-12);
    }
  }

  TEST_CASE("depth one is a single adapter on z0 + z1") {
    LoPAConfig cfg{2, 0.5, 1};
    auto fns = random_adapters(1, 6, 2, 3);
    const Tensor z0 = random_tensor({3, 6}, 4), z1 = random_tensor({3, 6}, 5);
    Tape t;
    auto s = t.inference();
    const Tensor y = lopa_forward({t.constant(z0), t.constant(z1)}, fns, cfg).value();
    const Tensor ref = adapt_fn(add(t.constant(z0), t.constant(z1)), fns[0], 0.5).value();
    CHECK(bit_equal(y, ref));
  }

  TEST_CASE("depth mismatch is rejected") {
    LoPAConfig cfg{2, 0.5, 2};
    auto fns = random_adapters(2, 6, 2, 6);
    Tape t;
    const Var z = t.constant(random_tensor({3, 6}, 7));
    CHECK_THROWS_AS((void)lopa_forward({z, z}, fns, cfg), DimensionError);
  }

  TEST_CASE("adapter gradients match central differences") {
    LoPAConfig cfg{2, 0.5, 3};
    auto fns = random_adapters(3, 6, 2, 8);
    std::vector<Tensor> zs;
    for (int i = 0; i < 4; ++i) zs.push_back(random_tensor({4, 6}, 30 + i));
    const Tensor c = random_tensor({4, 6}, 40);
    std::vector<Param*> ps;
    for (auto& f : fns) ps.insert(ps.end(), {&f.down, &f.up});
    const auto r = grad_check([&](Tape& t) {
      std::vector<Var> stack;
      for (const auto& z : zs) stack.push_back(t.constant(z));
      return dot_const(lopa_forward(stack, fns, cfg), c);
    }, ps);
    CHECK(r.passed());
    CHECK(r.checked == 3 * 2 * 6 * 2);
  }

  TEST_CASE("adapter gradients do not depend on whether the backbone was recorded") {
    ViTConfig vc = small_vit();
    Backbone bb(vc);
    LoPAConfig cfg{2, 0.5, vc.depth};
    auto fns = random_adapters(vc.depth, vc.dim, 2, 9);
    const Tensor img = image_for(vc, 10);
    const Tensor c = random_tensor({5, 12}, 11);
    std::vector<Param*> ps;
    for (auto& f : fns) ps.insert(ps.end(), {&f.down, &f.up});

    const auto frozen = analytic_gradients(
        [&](Tape& t) { return dot_const(lopa_forward(bb.forward_collect(t, img), fns, cfg), c); }, ps);
    const auto recorded = analytic_gradients([&](Tape& t) {
      std::vector<Var> zs{bb.patch_embed(t, img)};
      for (std::size_t l = 0; l < vc.depth; ++l) zs.push_back(bb.encoder_block(t, zs.back(), l));
      return dot_const(lopa_forward(zs, fns, cfg), c);
    }, ps);
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(max_abs_diff(frozen[i], recorded[i]) <= 1e-12);
    for (Param* p : bb.params())
      for (double g : p->grad.data()) CHECK(g == 0.0);
  }

  TEST_CASE("serial reference with zero up-projections reproduces the backbone") {
    ViTConfig vc = small_vit();
    Backbone bb(vc);
    Lopa lopa(LoPAConfig{2, 0.5, vc.depth}, vc.dim, 12);
    const Tensor img = image_for(vc, 13);
    Tape t;
    const Tensor y = serial_adapter_forward_reference(t, img, bb, lopa.functions(), lopa.config()).value();
    CHECK(bit_equal(y, bb.forward_collect(img).layers.back()));
    CHECK(t.retained_bytes("backbone") > 0);
  }

  TEST_CASE("memory report: LoPA keeps no backbone activations, serial does") {
    RunConfig cfg;
    const MemoryReport lopa = memory_report(cfg, AdapterMode::lopa);
    const MemoryReport serial = memory_report(cfg, AdapterMode::serial);
    CHECK(lopa.bytes("backbone") == 0);
    CHECK(serial.bytes("backbone") > 0);
    std::size_t total_lopa = 0, total_serial = 0;
    for (const auto& [n, b] : lopa.retained_bytes) total_lopa += b;
    for (const auto& [n, b] : serial.retained_bytes) total_serial += b;
    CHECK(total_lopa < total_serial);
    CHECK(lopa.trainable_params == 2048);
    CHECK(lopa.trainable_params == cfg.lopa.depth * 2 * cfg.backbone.dim * cfg.lopa.rank);
    const MemoryReport again = memory_report(cfg, AdapterMode::lopa);
    CHECK(again.retained_bytes == lopa.retained_bytes);
  }

  TEST_CASE("rank must be below width") {
    CHECK_THROWS_AS(Lopa(LoPAConfig{8, 0.5, 2}, 8, 1), std::invalid_argument);
    CHECK_THROWS_AS(Lopa(LoPAConfig{0, 0.5, 2}, 8, 1), std::invalid_argument);
  }

  TEST_CASE("up-projections start at zero and everything is trainable") {
    Lopa lopa(LoPAConfig{4, 0.5, 4}, 64, 1);
    CHECK(lopa.trainable_count() == 2048);
    for (auto& f : lopa.functions()) {
      CHECK(f.down.trainable);
      CHECK(f.up.trainable);
      for (double v : f.up.value.data()) CHECK(v == 0.0);
    }
  }
}
