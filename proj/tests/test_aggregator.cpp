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
#include <numeric>

#include "edt/aggregator.hpp"
#include "edt/gradcheck.hpp"
#include "edt/ops.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace edt;
using edt::test::bit_equal;
using edt::test::random_tensor;

namespace {

AggregatorConfig small_agg() {
  AggregatorConfig c;
  c.dim = 8;
  c.decoder_blocks = 2;
  c.queries = 4;
  c.heads = 2;
  c.out_dim = 3;
  c.out_queries = 5;
  return c;
}

Tensor describe(Aggregator& agg, const Tensor& tokens) {
  Tape t;
  auto s = t.inference();
  return agg.aggregate(t.constant(tokens)).value();
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), out.row(i).begin());
  return out;
}

double norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("aggregator") {
  TEST_CASE("toy descriptor length and unit norm") {
    Aggregator agg(AggregatorConfig{}, 1);
    const Tensor d = describe(agg, random_tensor({17, 64}, 2));
    CHECK(d.size() == 256);
    CHECK(std::abs(norm(d) - 1.0) < 1e-9);
  }

  TEST_CASE("decoder block has no feedforward network") {
    Aggregator agg(AggregatorConfig{}, 1);
    for (std::size_t i = 0; i < 2; ++i) {
      DecoderBlock& b = agg.block(i);
      CHECK(b.param_count() == DecoderBlock::expected_param_count(64));
      CHECK(b.param_count() == 2 * (4 * 64 * 64 + 4 * 64) + 4 * 64);
      CHECK(b.params().size() == 2 * 8 + 4);
    }
  }

  TEST_CASE("project_in with identity weights passes tokens through") {
    Aggregator agg(small_agg(), 3);
    for (Param* p : agg.params()) {
      if (p->name == "agg.proj.w") {
        p->value.fill(0.0);
        for (std::size_t i = 0; i < 8; ++i) p->value.at(i, i) = 1.0;
      }
    }
    const Tensor x = random_tensor({6, 8}, 4);
    Tape t;
    auto s = t.inference();
    const Tensor f = agg.project_in(t.constant(x)).value();
    CHECK(f.rows() == 6);
    CHECK(bit_equal(f, x));
  }

  TEST_CASE("descriptor is invariant to token row permutations") {
    Aggregator agg(small_agg(), 5);
    const Tensor x = random_tensor({9, 8}, 6);
    const Tensor ref = describe(agg, x);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(7, 0);
    for (int trial = 0; trial < 20; ++trial) {
      std::shuffle(perm.begin(), perm.end(), rng);
      CHECK(max_abs_diff(describe(agg, permute_rows(x, perm)), ref) < 1e-9);
    }
  }

  TEST_CASE("decoder block is permutation equivariant in its queries") {
    Aggregator agg(small_agg(), 8);
    DecoderBlock& b = agg.block(0);
    const Tensor o = random_tensor({4, 8}, 9), f = random_tensor({7, 8}, 10);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    Tape t;
    auto s = t.inference();
    const Tensor a = decoder_block(t.constant(o), t.constant(f), b, 2).value();
    const Tensor p = decoder_block(t.constant(permute_rows(o, perm)), t.constant(f), b, 2).value();
    CHECK(max_abs_diff(permute_rows(a, perm), p) < 1e-12);
  }

  TEST_CASE("decoder block matches the straight-line oracle") {
    Aggregator agg(small_agg(), 11);
    DecoderBlock& b = agg.block(1);
    Rng rng = make_rng(12, 0);
    for (Param* p : b.params()) p->value = normal_tensor(p->value.shape(), 0.4, rng);
    const Tensor o = random_tensor({4, 8}, 13), f = random_tensor({6, 8}, 14);
    Tape t;
    auto s = t.inference();
    const Tensor out = decoder_block(t.constant(o), t.constant(f), b, 2).value();

    const auto& sa = b.self_attn;
    const auto& ca = b.cross_attn;
    const oracle::Mat om(o), fm(f);
    const oracle::Mat q = oracle::layer_norm(
        oracle::plus(oracle::mha(om, om, om, sa.wq.value, sa.bq.value, sa.wk.value, sa.bk.value, sa.wv.value,
                                 sa.bv.value, sa.wo.value, sa.bo.value, 2),
                     om),
        b.ln1_gamma.value, b.ln1_beta.value, 1e-6);
    const oracle::Mat ref = oracle::layer_norm(
        oracle::plus(oracle::mha(q, fm, fm, ca.wq.value, ca.bq.value, ca.wk.value, ca.bk.value, ca.wv.value,
                                 ca.bv.value, ca.wo.value, ca.bo.value, 2),
                     q),
        b.ln2_gamma.value, b.ln2_beta.value, 1e-6);
    CHECK(oracle::max_diff(ref, out) < 1e-12);
  }

  TEST_CASE("zeroed attention output projections leave two layer norms") {
    Aggregator agg(small_agg(), 15);
    DecoderBlock& b = agg.block(0);
    for (Param* p : {&b.self_attn.wo, &b.self_attn.bo, &b.cross_attn.wo, &b.cross_attn.bo}) p->value.fill(0.0);
    const Tensor o = random_tensor({4, 8}, 16), f = random_tensor({6, 8}, 17);
    Tape t;
    auto s = t.inference();
    const Tensor out = decoder_block(t.constant(o), t.constant(f), b, 2).value();
    const Var ln1 = layer_norm(t.constant(o), t.constant(b.ln1_gamma.value), t.constant(b.ln1_beta.value));
    const Tensor ref = layer_norm(ln1, t.constant(b.ln2_gamma.value), t.constant(b.ln2_beta.value)).value();
    CHECK(max_abs_diff(out, ref) < 1e-14);
  }

  TEST_CASE("without decoder blocks the descriptor ignores the input") {
    AggregatorConfig c = small_agg();
    c.decoder_blocks = 0;
    Aggregator agg(c, 18);
    const Tensor a = describe(agg, random_tensor({6, 8}, 19));
    const Tensor b = describe(agg, random_tensor({6, 8}, 20));
    CHECK(bit_equal(a, b));
  }

  TEST_CASE("batched aggregation equals one sample at a time") {
    Aggregator agg(small_agg(), 21);
    const std::size_t batch = 5, rows = 7;
    const Tensor x = random_tensor({batch * rows, 8}, 22);
    Tape t;
    auto s = t.inference();
    const Tensor joint = agg.aggregate_batch(t.constant(x), batch).value();
    CHECK(joint.shape() == Shape{batch, 15});
    for (std::size_t i = 0; i < batch; ++i) {
      Tensor one({rows, 8});
      std::copy(x.ptr() + i * rows * 8, x.ptr() + (i + 1) * rows * 8, one.ptr());
      const Tensor d = describe(agg, one);
      for (std::size_t j = 0; j < d.size(); ++j) CHECK(std::abs(joint.at(i, j) - d[j]) < 1e-12);
    }
  }

  TEST_CASE("head shapes and parameter count") {
    AggregatorConfig c = small_agg();
    Aggregator agg(c, 23);
    const std::size_t d = c.dim;
    const std::size_t expected = c.queries * d + d * d + d + c.decoder_blocks * DecoderBlock::expected_param_count(d) +
                                 d * c.out_dim + c.out_dim + c.queries * c.out_queries + c.out_queries;
    CHECK(agg.param_count() == expected);
    std::size_t listed = 0;
    for (Param* p : agg.params()) {
      CHECK(p->trainable);
      listed += p->size();
    }
    CHECK(listed == expected);
  }

  TEST_CASE("aggregator gradients match central differences") {
    Aggregator agg(small_agg(), 24);
    const Tensor x = random_tensor({6, 8}, 25);
    const Tensor c = random_tensor({15}, 26);
    const auto r = grad_check([&](Tape& t) { return dot_const(agg.aggregate(t.constant(x)), c); }, agg.params());
    CHECK(r.passed());
    CHECK(r.checked == agg.param_count());
  }

  TEST_CASE("width mismatch is rejected") {
    Aggregator agg(small_agg(), 27);
    Tape t;
    CHECK_THROWS_AS((void)agg.aggregate(t.constant(random_tensor({6, 9}, 28))), DimensionError);
    CHECK_THROWS_AS(Aggregator(AggregatorConfig{6, 1, 2, 4, 2, 2}, 1), std::invalid_argument);
  }
}
