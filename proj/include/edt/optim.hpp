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
#include <vector>

#include "edt/autodiff.hpp"

namespace edt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over the trainable subset of `params`; frozen params are never touched.
/// step() applies the update and zeroes every gradient it consumed.
class Adam {
 public:
  explicit Adam(const std::vector<Param*>& params, AdamConfig cfg = {});

  void step(double lr);
  std::size_t steps() const { return t_; }
  std::size_t parameter_count() const;

 private:
  AdamConfig cfg_;
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

/// lr0 * decay^floor(epoch / every), epoch counted from 0.
double scheduled_lr(double lr0, double decay, std::size_t every, std::size_t epoch);

}  // namespace edt
