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

#include "edt/lopa.hpp"

#include <string>

#include "edt/ops.hpp"
#include "edt/random.hpp"

namespace edt {

void LoPAConfig::validate(std::size_t dim) const {
  if (rank == 0 || rank >= dim)
    throw std::invalid_argument("lopa: rank must satisfy 0 < r < d, got r=" + std::to_string(rank) +
                                " d=" + std::to_string(dim));
  if (!(scale >= 0.0)) throw std::invalid_argument("lopa: scale must be nonnegative");
  if (depth == 0) throw std::invalid_argument("lopa: depth must be at least 1");
}

Var adapt_fn(const Var& x, AdaptFn& f, double scale_factor) {
  Tape& tape = x.tape();
  auto region = tape.region("lopa");
  const Var hidden = gelu(matmul(x, tape.param(f.down)));
  return add(scale(matmul(hidden, tape.param(f.up)), scale_factor), x);
}

Var lopa_forward(const std::vector<Var>& stack, std::vector<AdaptFn>& fns, const LoPAConfig& cfg) {
  if (fns.size() != cfg.depth || stack.size() != fns.size() + 1)
    throw DimensionError("lopa: " + std::to_string(fns.size()) + " adapters for a stack of " +
                         std::to_string(stack.size()) + " layers (need depth + 1 layers)");
  auto region = stack.front().tape().region("lopa");
  Var y = adapt_fn(add(stack[0], stack[1]), fns[0], cfg.scale);
  for (std::size_t i = 1; i < fns.size(); ++i) y = adapt_fn(add(y, stack[i + 1]), fns[i], cfg.scale);
  return y;
}

Var serial_adapter_forward_reference(Tape& tape, const Tensor& image, Backbone& backbone, std::vector<AdaptFn>& fns,
                                     const LoPAConfig& cfg) {
  if (fns.size() != backbone.config().depth || cfg.depth != fns.size())
    throw DimensionError("serial reference: " + std::to_string(fns.size()) + " adapters for backbone depth " +
                         std::to_string(backbone.config().depth));
  Var z;
  {
    auto region = tape.region("backbone");
    z = backbone.patch_embed(tape, image);
  }
  for (std::size_t l = 0; l < fns.size(); ++l) {
    {
      auto region = tape.region("backbone");
      z = backbone.encoder_block(tape, z, l);
    }
    z = adapt_fn(z, fns[l], cfg.scale);
  }
  return z;
}

Lopa::Lopa(const LoPAConfig& cfg, std::size_t dim, std::uint64_t seed) : cfg_(cfg), dim_(dim) {
  cfg_.validate(dim);
  Rng rng = make_rng(seed, 0x10BA);
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    const std::string pre = "lopa.h" + std::to_string(i + 1);
    fns_.push_back(AdaptFn{Param(pre + ".down", normal_tensor({dim, cfg_.rank}, 0.02, rng)),
                           Param(pre + ".up", Tensor({cfg_.rank, dim}))});
  }
}

std::vector<Param*> Lopa::params() {
  std::vector<Param*> out;
  for (auto& f : fns_) {
    out.push_back(&f.down);
    out.push_back(&f.up);
  }
  return out;
}

std::size_t Lopa::trainable_count() const {
  std::size_t n = 0;
  for (const auto& f : fns_) n += (f.down.trainable ? f.down.size() : 0) + (f.up.trainable ? f.up.size() : 0);
  return n;
}

}  // namespace edt
