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

#include "edt/aggregator.hpp"

#include <cmath>
#include <string>

#include "edt/ops.hpp"
#include "edt/random.hpp"

namespace edt {

namespace {

constexpr double kQueryStd = 0.02;

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

void AggregatorConfig::validate() const {
  if (dim < 2 || queries == 0 || heads == 0 || out_dim == 0 || out_queries == 0)
    throw std::invalid_argument("aggregator: dim >= 2 and queries, heads, out_dim, out_queries >= 1 required");
  if (dim % heads != 0)
    throw std::invalid_argument("aggregator: dim " + std::to_string(dim) + " is not divisible by heads " +
                                std::to_string(heads));
}

std::vector<Param*> DecoderBlock::params() {
  std::vector<Param*> out = self_attn.params();
  for (Param* p : cross_attn.params()) out.push_back(p);
  for (Param* p : {&ln1_gamma, &ln1_beta, &ln2_gamma, &ln2_beta}) out.push_back(p);
  return out;
}

std::size_t DecoderBlock::param_count() const {
  return self_attn.param_count() + cross_attn.param_count() + ln1_gamma.size() + ln1_beta.size() + ln2_gamma.size() +
         ln2_beta.size();
}

Var decoder_self(const Var& o_prev, DecoderBlock& block, std::size_t heads, std::size_t batch) {
  Tape& tape = o_prev.tape();
  return layer_norm(add(mha(tape, o_prev, o_prev, o_prev, block.self_attn, heads, batch), o_prev),
                    tape.param(block.ln1_gamma), tape.param(block.ln1_beta));
}

Var decoder_cross(const Var& q, const Var& features, DecoderBlock& block, std::size_t heads, std::size_t batch) {
  Tape& tape = q.tape();
  return layer_norm(add(mha(tape, q, features, features, block.cross_attn, heads, batch), q),
                    tape.param(block.ln2_gamma), tape.param(block.ln2_beta));
}

Var decoder_block(const Var& o_prev, const Var& features, DecoderBlock& block, std::size_t heads, std::size_t batch) {
  return decoder_cross(decoder_self(o_prev, block, heads, batch), features, block, heads, batch);
}

Aggregator::Aggregator(const AggregatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(seed, 0xA66);
  const std::size_t d = cfg_.dim;
  queries_ = Param("agg.queries", normal_tensor({cfg_.queries, d}, kQueryStd, rng));
  proj_w_ = Param("agg.proj.w", normal_tensor({d, d}, fan_in_std(d), rng));
  proj_b_ = Param("agg.proj.b", Tensor({d}));
  for (std::size_t i = 0; i < cfg_.decoder_blocks; ++i) {
    const std::string pre = "agg.block" + std::to_string(i);
    DecoderBlock b;
    b.self_attn = MhaParams::init(pre + ".self", d, fan_in_std(d), rng, true);
    b.cross_attn = MhaParams::init(pre + ".cross", d, fan_in_std(d), rng, true);
    b.ln1_gamma = Param(pre + ".ln1.gamma", Tensor({d}, 1.0));
    b.ln1_beta = Param(pre + ".ln1.beta", Tensor({d}));
    b.ln2_gamma = Param(pre + ".ln2.gamma", Tensor({d}, 1.0));
    b.ln2_beta = Param(pre + ".ln2.beta", Tensor({d}));
    blocks_.push_back(std::move(b));
  }
  w2_ = Param("agg.head.w2", normal_tensor({d, cfg_.out_dim}, fan_in_std(d), rng));
  b2_ = Param("agg.head.b2", Tensor({cfg_.out_dim}));
  w3_ = Param("agg.head.w3", normal_tensor({cfg_.queries, cfg_.out_queries}, fan_in_std(cfg_.queries), rng));
  b3_ = Param("agg.head.b3", Tensor({cfg_.out_queries}));
}

Var Aggregator::project_in(const Var& tokens) {
  Tape& tape = tokens.tape();
  if (tokens.value().rank() != 2 || tokens.value().cols() != cfg_.dim)
    throw DimensionError("aggregator: tokens " + to_string(tokens.shape()) + " do not have width " +
                         std::to_string(cfg_.dim));
  return linear(tokens, tape.param(proj_w_), tape.param(proj_b_));
}

Var Aggregator::decode(const Var& features) {
  Tape& tape = features.tape();
  Var o = tape.param(queries_);
  for (auto& b : blocks_) o = decoder_block(o, features, b, cfg_.heads);
  return o;
}

Var Aggregator::head(const Var& decoded) {
  Tape& tape = decoded.tape();
  const Var reduced = linear(decoded, tape.param(w2_), tape.param(b2_));
  return linear(transpose(reduced), tape.param(w3_), tape.param(b3_));
}

Var Aggregator::aggregate(const Var& tokens) {
  auto region = tokens.tape().region("aggregator");
  const Var features = project_in(tokens);
  return l2_normalize(flatten(head(decode(features))));
}

Var Aggregator::aggregate_batch(const Var& tokens, std::size_t batch) {
  Tape& tape = tokens.tape();
  auto region = tape.region("aggregator");
  if (batch == 0 || tokens.value().rank() != 2 || tokens.value().rows() % batch != 0)
    throw DimensionError("aggregator: " + std::to_string(batch) + " samples do not divide tokens " +
                         to_string(tokens.shape()));
  const Var features = project_in(tokens);
  Var o = tape.param(queries_);
  bool shared = true;  // o is still the same for every sample
  for (auto& b : blocks_) {
    Var q = decoder_self(o, b, cfg_.heads, shared ? 1 : batch);
    if (shared && batch > 1) q = repeat_rows(q, batch);
    shared = false;
    o = decoder_cross(q, features, b, cfg_.heads, batch);
  }
  if (shared && batch > 1) o = repeat_rows(o, batch);
  const Var reduced = linear(o, tape.param(w2_), tape.param(b2_));
  const Var mixed = linear(block_transpose(reduced, batch), tape.param(w3_), tape.param(b3_));
  return l2_normalize_rows(reshape(mixed, {batch, cfg_.descriptor_dim()}));
}

std::vector<Param*> Aggregator::params() {
  std::vector<Param*> out{&queries_, &proj_w_, &proj_b_};
  for (auto& b : blocks_)
    for (Param* p : b.params()) out.push_back(p);
  for (Param* p : {&w2_, &b2_, &w3_, &b3_}) out.push_back(p);
  return out;
}

std::size_t Aggregator::param_count() const {
  std::size_t n = queries_.size() + proj_w_.size() + proj_b_.size() + w2_.size() + b2_.size() + w3_.size() + b3_.size();
  for (const auto& b : blocks_) n += b.param_count();
  return n;
}

}  // namespace edt
