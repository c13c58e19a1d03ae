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

#include "edt/autodiff.hpp"
#include "edt/backbone.hpp"

namespace edt {

struct LoPAConfig {
  std::size_t rank = 4;
  double scale = 0.5;
  std::size_t depth = 4;

  void validate(std::size_t dim) const;
};

/// Low-rank adapter h(x) = s * gelu(x W_d) W_u + x, applied to every token row.
struct AdaptFn {
  Param down;  // d x r
  Param up;    // r x d, zero at init so h starts as the identity
};

Var adapt_fn(const Var& x, AdaptFn& f, double scale);

/// Parallel ladder over frozen intermediates:
///   y_1 = h_1(z_0 + z_1),  y_i = h_i(y_{i-1} + z_i),  returns y_L.
Var lopa_forward(const std::vector<Var>& stack, std::vector<AdaptFn>& fns, const LoPAConfig& cfg);

/// Serial-adapter reference: h_i applied after encoder block i with the backbone recorded on
/// the tape, so backbone activations are kept for backward. Exists for memory accounting only.
Var serial_adapter_forward_reference(Tape& tape, const Tensor& image, Backbone& backbone, std::vector<AdaptFn>& fns,
                                     const LoPAConfig& cfg);

class Lopa {
 public:
  Lopa(const LoPAConfig& cfg, std::size_t dim, std::uint64_t seed);

  const LoPAConfig& config() const { return cfg_; }
  Var forward(const std::vector<Var>& stack) { return lopa_forward(stack, fns_, cfg_); }
  std::vector<AdaptFn>& functions() { return fns_; }
  std::vector<Param*> params();
  /// Counted from the adapter params; equals depth * 2 * d * r.
  std::size_t trainable_count() const;
  std::size_t dim() const { return dim_; }

 private:
  LoPAConfig cfg_;
  std::size_t dim_;
  std::vector<AdaptFn> fns_;
};

}  // namespace edt
