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

#include "edt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace edt {

namespace {

double evaluate(const ScalarFn& f) {
  Tape tape;
  auto scope = tape.inference();
  const double v = f(tape).value()[0];
  if (!std::isfinite(v)) throw NumericalError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

std::vector<Tensor> analytic_gradients(const ScalarFn& f, const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
  Tape tape;
  const Var loss = f(tape);
  if (!std::isfinite(loss.value()[0])) throw NumericalError("grad_check: loss evaluated to a non-finite value");
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (Param* p : params) {
    grads.push_back(p->grad);
    p->zero_grad();
  }
  return grads;
}

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Param*>& params, const GradCheckOptions& opts) {
  if (!(opts.step >= 1e-6 && opts.step <= 1e-4))
    throw ContractError("grad_check: step must lie in [1e-6, 1e-4], got " + std::to_string(opts.step));
  for (Param* p : params) p->zero_grad();
  Tape tape;
  const Var loss = f(tape);
  if (!std::isfinite(loss.value()[0])) throw NumericalError("grad_check: loss evaluated to a non-finite value");
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (Param* p : params) {
    grads.push_back(p->grad);
    p->zero_grad();
  }
  // Incremental mode re-runs only the ops downstream of the perturbed param on the recorded tape.
  auto perturbed = [&](const Param& p) {
    if (!opts.incremental) return evaluate(f);
    const double v = tape.recompute_from(p, loss)[0];
    if (!std::isfinite(v)) throw NumericalError("grad_check: loss evaluated to a non-finite value");
    return v;
  };

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + opts.step;
      const double up = perturbed(p);
      p.value[i] = saved - opts.step;
      const double down = perturbed(p);
      p.value[i] = saved;

      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = grads[k][i];
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++report.checked;
      if (err > report.max_error) {
        report.max_error = err;
        report.worst_param = p.name + "[" + std::to_string(i) + "]";
      }
      if (err > opts.tolerance) {
        ++report.failed;
        if (report.failures.size() < opts.max_listed) report.failures.push_back({p.name, i, analytic, numeric, err});
      }
    }
  }
  return report;
}

}  // namespace edt
