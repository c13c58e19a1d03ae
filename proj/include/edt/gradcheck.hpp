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
#include <functional>
#include <string>
#include <vector>

#include "edt/autodiff.hpp"

namespace edt {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  std::size_t max_listed = 32;
  // Re-evaluate only what depends on the perturbed param instead of the whole function.
  bool incremental = true;
};

struct GradCheckFailure {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double max_error = 0.0;
  std::string worst_param;
  std::vector<GradCheckFailure> failures;  // first max_listed failures

  bool passed() const { return failed == 0 && checked > 0; }
};

/// Builds the scalar to differentiate on the given tape.
using ScalarFn = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients with central differences for every trainable scalar:
/// |analytic - numeric| / max(1, |numeric|) <= tolerance. Perturbed evaluations either
/// re-run the recorded tape from the changed param or call f afresh in inference mode. Throws NumericalError if any evaluation is non-finite.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Param*>& params, const GradCheckOptions& opts = {});

/// Analytic gradients of f with respect to `params`, one tensor per param (zero for frozen ones).
std::vector<Tensor> analytic_gradients(const ScalarFn& f, const std::vector<Param*>& params);

}  // namespace edt
