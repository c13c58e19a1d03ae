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
#include <numeric>

#include "edt/attention.hpp"
#include "edt/gradcheck.hpp"
#include "edt/ops.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace edt;
using edt::test::random_tensor;

namespace {

MhaParams random_mha(std::size_t d, std::uint64_t seed, bool trainable = true) {
  Rng rng = make_rng(seed, 0xA77);
  MhaParams p = MhaParams::init("mha", d, 0.4, rng, trainable);
  for (Param* b : {&p.bq, &p.bk, &p.bv, &p.bo}) b->value = normal_tensor(b->value.shape(), 0.1, rng);
  return p;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), out.row(i).begin());
  return out;
}

Tensor run_mha(MhaParams& p, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, std::size_t segments = 1) {
  Tape t;
  auto s = t.inference();
  return mha(t, t.constant(q), t.constant(k), t.constant(v), p, heads, segments).value();
}

}  // namespace

TEST_SUITE("attention") {
  TEST_CASE("a single key makes every output row equal") {
    MhaParams p = random_mha(8, 1);
    const Tensor out = run_mha(p, random_tensor({5, 8}, 2), random_tensor({1, 8}, 3), random_tensor({1, 8}, 4), 2);
    for (std::size_t i = 1; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) CHECK(out.at(i, j) == doctest::Approx(out.at(0, j)).epsilon(1e-14));
  }

  TEST_CASE("identity projections reduce to scaled dot-product attention") {
    MhaParams p = random_mha(4, 5);
    for (Param* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
      w->value.fill(0.0);
      for (std::size_t i = 0; i < 4; ++i) w->value.at(i, i) = 1.0;
    }
    for (Param* b : {&p.bq, &p.bk, &p.bv, &p.bo}) b->value.fill(0.0);
    const Tensor q = random_tensor({3, 4}, 6), k = random_tensor({3, 4}, 7), v = random_tensor({3, 4}, 8);
    const Tensor out = run_mha(p, q, k, v, 1);
    const oracle::Mat ref = oracle::attention(oracle::Mat(q), oracle::Mat(k), oracle::Mat(v));
    CHECK(oracle::max_diff(ref, out) < 1e-12);

    Tape t;
    auto s = t.inference();
    const Tensor plain = attention(t.constant(q), t.constant(k), t.constant(v)).value();
    CHECK(oracle::max_diff(ref, plain) < 1e-12);
  }

  TEST_CASE("multi-head output matches the straight-line oracle") {
    MhaParams p = random_mha(12, 9);
    const Tensor q = random_tensor({5, 12}, 10), kv = random_tensor({7, 12}, 11);
    const Tensor out = run_mha(p, q, kv, kv, 3);
    const oracle::Mat ref = oracle::mha(oracle::Mat(q), oracle::Mat(kv), oracle::Mat(kv), p.wq.value, p.bq.value,
                                        p.wk.value, p.bk.value, p.wv.value, p.bv.value, p.wo.value, p.bo.value, 3);
    CHECK(oracle::max_diff(ref, out) < 1e-12);
  }

  TEST_CASE("permuting keys and values together leaves the output unchanged") {
    MhaParams p = random_mha(8, 12);
    const Tensor q = random_tensor({4, 8}, 13), k = random_tensor({9, 8}, 14), v = random_tensor({9, 8}, 15);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(16, 0);
    for (int trial = 0; trial < 5; ++trial) {
      std::shuffle(perm.begin(), perm.end(), rng);
      const Tensor a = run_mha(p, q, k, v, 2);
      const Tensor b = run_mha(p, q, permute_rows(k, perm), permute_rows(v, perm), 2);
      CHECK(max_abs_diff(a, b) < 1e-12);
    }
  }

  TEST_CASE("fused and unfused formulations agree in value and gradient") {
    MhaParams fused = random_mha(8, 17);
    MhaParams unfused = random_mha(8, 17);
    Param q("q", random_tensor({5, 8}, 18)), kv("kv", random_tensor({6, 8}, 19));
    const Tensor c = random_tensor({5, 8}, 20);
    auto params_of = [&](MhaParams& p) {
      std::vector<Param*> ps = p.params();
      ps.push_back(&q);
      ps.push_back(&kv);
      return ps;
    };
    const auto grads_a = analytic_gradients(
        [&](Tape& t) { return dot_const(mha(t, t.param(q), t.param(kv), t.param(kv), fused, 2), c); }, params_of(fused));
    const auto grads_b = analytic_gradients(
        [&](Tape& t) { return dot_const(mha_unfused(t, t.param(q), t.param(kv), t.param(kv), unfused, 2), c); },
        params_of(unfused));
    REQUIRE(grads_a.size() == grads_b.size());
    for (std::size_t i = 0; i < grads_a.size(); ++i) CHECK(max_abs_diff(grads_a[i], grads_b[i]) < 1e-12);

    Tape t;
    auto s = t.inference();
    const Tensor a = mha(t, t.constant(q.value), t.constant(kv.value), t.constant(kv.value), fused, 2).value();
    const Tensor b = mha_unfused(t, t.constant(q.value), t.constant(kv.value), t.constant(kv.value), unfused, 2).value();
    CHECK(max_abs_diff(a, b) < 1e-12);
  }

  TEST_CASE("segments never attend across samples") {
    MhaParams p = random_mha(8, 21);
    const std::size_t seg = 3;
    const Tensor q = random_tensor({seg * 4, 8}, 22), kv = random_tensor({seg * 5, 8}, 23);
    const Tensor joint = run_mha(p, q, kv, kv, 2, seg);
    for (std::size_t s = 0; s < seg; ++s) {
      Tensor qs({4, 8}), ks({5, 8});
      std::copy(q.ptr() + s * 32, q.ptr() + (s + 1) * 32, qs.ptr());
      std::copy(kv.ptr() + s * 40, kv.ptr() + (s + 1) * 40, ks.ptr());
      const Tensor alone = run_mha(p, qs, ks, ks, 2);
      for (std::size_t i = 0; i < alone.size(); ++i) CHECK(std::abs(alone[i] - joint[s * 32 + i]) < 1e-13);
    }
  }

  TEST_CASE("gradient check through multi-head attention") {
    MhaParams p = random_mha(8, 24);
    Param x("x", random_tensor({4, 8}, 25));
    const Tensor c = random_tensor({4, 8}, 26);
    std::vector<Param*> ps = p.params();
    ps.push_back(&x);
    const auto r = grad_check([&](Tape& t) {
      const Var v = t.param(x);
      return dot_const(mha(t, v, v, v, p, 2), c);
    }, ps);
    CHECK(r.passed());
    CHECK(r.checked == p.param_count() + 32);
  }

  TEST_CASE("width not divisible by heads is rejected") {
    MhaParams p = random_mha(6, 27);
    Tape t;
    const Var x = t.constant(random_tensor({2, 6}, 28));
    CHECK_THROWS_AS((void)mha(t, x, x, x, p, 4), DimensionError);
  }
}
