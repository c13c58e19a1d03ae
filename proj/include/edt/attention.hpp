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
#include <string>
#include <vector>

#include "edt/autodiff.hpp"
#include "edt/random.hpp"

namespace edt {

/// Projections of one multi-head attention layer. Each projection is d x d with a bias;
/// heads are contiguous column blocks of width d / heads.
struct MhaParams {
  Param wq, bq, wk, bk, wv, bv, wo, bo;

  static MhaParams init(const std::string& prefix, std::size_t dim, double weight_std, Rng& rng, bool trainable);

  std::vector<Param*> params();
  std::size_t dim() const { return wq.value.rows(); }
  std::size_t param_count() const;
};

/// Scaled dot-product attention softmax(q k^T / sqrt(d_k)) v for single-head inputs.
Var attention(const Var& q, const Var& k, const Var& v);

/// Multi-head attention: project, attend per head with scale 1/sqrt(d / heads), concatenate,
/// project with W_O. With segments > 1 the rows hold that many independent samples stacked
/// in equal blocks, and attention never crosses a block boundary.
Var mha(Tape& tape, const Var& q_in, const Var& k_in, const Var& v_in, MhaParams& p, std::size_t heads,
        std::size_t segments = 1);

/// Same function built from per-head slices, single-head attention and concatenation.
/// Slower; kept as an independent formulation for tests.
Var mha_unfused(Tape& tape, const Var& q_in, const Var& k_in, const Var& v_in, MhaParams& p, std::size_t heads);

}  // namespace edt
