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
#include <vector>

#include "edt/attention.hpp"
#include "edt/autodiff.hpp"

namespace edt {

struct AggregatorConfig {
  std::size_t dim = 64;
  std::size_t decoder_blocks = 2;
  std::size_t queries = 16;
  std::size_t heads = 4;
  std::size_t out_dim = 16;      // d'
  std::size_t out_queries = 16;  // M'

  void validate() const;
  std::size_t descriptor_dim() const { return out_dim * out_queries; }
};

/// Self-attention and cross-attention, each followed by a residual LayerNorm. No feedforward.
struct DecoderBlock {
  MhaParams self_attn;
  MhaParams cross_attn;
  Param ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  std::vector<Param*> params();
  std::size_t param_count() const;
  /// 2 * (4 d^2 + 4 d) + 4 d
  static std::size_t expected_param_count(std::size_t dim) { return 2 * (4 * dim * dim + 4 * dim) + 4 * dim; }
};

/// Q_i = LN(MHA(O, O, O) + O);  O_i = LN(MHA(Q_i, F, F) + Q_i)
/// `batch` equal row blocks of o_prev and features are independent samples.
Var decoder_block(const Var& o_prev, const Var& features, DecoderBlock& block, std::size_t heads,
                  std::size_t batch = 1);
/// The self-attention half: LN(MHA(O, O, O) + O).
Var decoder_self(const Var& o_prev, DecoderBlock& block, std::size_t heads, std::size_t batch = 1);
/// The cross-attention half: LN(MHA(Q, F, F) + Q).
Var decoder_cross(const Var& q, const Var& features, DecoderBlock& block, std::size_t heads, std::size_t batch = 1);

/// Learnable-query decoder aggregator producing a unit-norm global descriptor.
class Aggregator {
 public:
  Aggregator(const AggregatorConfig& cfg, std::uint64_t seed);

  const AggregatorConfig& config() const { return cfg_; }

  /// F = X W_1 + b_1 over all N+1 tokens.
  Var project_in(const Var& tokens);
  /// O_L after the decoder stack, starting from the learnable queries.
  Var decode(const Var& features);
  /// Reduce width to d', transpose, mix queries to M': (O W_2 + b_2)^T W_3 + b_3, shape d' x M'.
  Var head(const Var& decoded);
  /// Row-major flatten of the head output, L2-normalized.
  Var aggregate(const Var& tokens);
  /// `batch` token matrices stacked row-wise in, one descriptor per row out (batch x D).
  /// Equal to running aggregate on each block.
  Var aggregate_batch(const Var& tokens, std::size_t batch);

  Param& queries() { return queries_; }
  DecoderBlock& block(std::size_t i) { return blocks_.at(i); }
  std::vector<Param*> params();
  std::size_t param_count() const;

 private:
  AggregatorConfig cfg_;
  Param queries_;
  Param proj_w_, proj_b_;
  std::vector<DecoderBlock> blocks_;
  Param w2_, b2_, w3_, b3_;
};

}  // namespace edt
