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

#include "edt/attention.hpp"

#include <cmath>

#include "edt/ops.hpp"

namespace edt {

MhaParams MhaParams::init(const std::string& prefix, std::size_t dim, double weight_std, Rng& rng, bool trainable) {
  auto w = [&](const char* n) { return Param(prefix + "." + n, normal_tensor({dim, dim}, weight_std, rng), trainable); };
  auto b = [&](const char* n) { return Param(prefix + "." + n, Tensor({dim}), trainable); };
  MhaParams p;
  p.wq = w("wq");
  p.bq = b("bq");
  p.wk = w("wk");
  p.bk = b("bk");
  p.wv = w("wv");
  p.bv = b("bv");
  p.wo = w("wo");
  p.bo = b("bo");
  return p;
}

std::vector<Param*> MhaParams::params() { return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}; }

std::size_t MhaParams::param_count() const {
  const std::size_t d = dim();
  return 4 * d * d + 4 * d;
}

Var attention(const Var& q, const Var& k, const Var& v) {
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  return matmul(softmax_rows(scale(matmul_nt(q, k), scale_factor)), v);
}

namespace {

void check_mha_inputs(const Var& q_in, const Var& k_in, const Var& v_in, std::size_t d, std::size_t heads) {
  if (heads == 0 || d % heads != 0)
    throw DimensionError("mha: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  for (const Var* x : {&q_in, &k_in, &v_in})
    if (x->value().rank() != 2 || x->value().cols() != d)
      throw DimensionError("mha: input " + to_string(x->shape()) + " does not match width " + std::to_string(d));
  if (k_in.value().rows() != v_in.value().rows())
    throw DimensionError("mha: key rows " + to_string(k_in.shape()) + " vs value rows " + to_string(v_in.shape()));
}

}  // namespace

Var mha(Tape& tape, const Var& q_in, const Var& k_in, const Var& v_in, MhaParams& p, std::size_t heads,
        std::size_t segments) {
  check_mha_inputs(q_in, k_in, v_in, p.dim(), heads);
  const Var q = linear(q_in, tape.param(p.wq), tape.param(p.bq));
  const Var k = linear(k_in, tape.param(p.wk), tape.param(p.bk));
  const Var v = linear(v_in, tape.param(p.wv), tape.param(p.bv));
  return linear(multi_head_attention(q, k, v, heads, segments), tape.param(p.wo), tape.param(p.bo));
}

Var mha_unfused(Tape& tape, const Var& q_in, const Var& k_in, const Var& v_in, MhaParams& p, std::size_t heads) {
  const std::size_t d = p.dim();
  check_mha_inputs(q_in, k_in, v_in, d, heads);
  const Var q = linear(q_in, tape.param(p.wq), tape.param(p.bq));
  const Var k = linear(k_in, tape.param(p.wk), tape.param(p.bk));
  const Var v = linear(v_in, tape.param(p.wv), tape.param(p.bv));

  const std::size_t dh = d / heads;
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh, c1 = c0 + dh;
    if (heads == 1)
      outs.push_back(attention(q, k, v));
    else
      outs.push_back(attention(slice_cols(q, c0, c1), slice_cols(k, c0, c1), slice_cols(v, c0, c1)));
  }
  const Var joined = heads == 1 ? outs.front() : concat_cols(outs);
  return linear(joined, tape.param(p.wo), tape.param(p.bo));
}

}  // namespace edt
