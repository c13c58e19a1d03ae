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
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edt/tensor.hpp"

namespace edt {

/// A named weight with its gradient accumulator. Frozen params never receive gradient.
struct Param {
  Param() = default;
  Param(std::string name, Tensor value, bool trainable = true);

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  std::size_t size() const { return value.size(); }
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while its Tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class TapeMode {
  record,     // ops keep what their adjoints need
  frozen,     // nothing is kept; trainable params are rejected
  inference,  // nothing is kept; any param is read as a constant
};

/// Single-use reverse-mode tape: one forward, one backward.
///
/// Every op recorded in record mode keeps references to the values its adjoint reads, and
/// the tape accounts those bytes per region label. Ops in frozen or inference mode keep
/// nothing and produce constants, so backward never reaches past them.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;
  /// Pure re-evaluation of an op from its input values, in `inputs` order.
  using Recompute = std::function<Tensor(const std::vector<const Tensor*>& inputs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Param leaves alias the Param's storage: the Param must outlive the tape and keep its
  /// value until backward has run.
  Var param(Param& p);
  // Read-only access is only legal for frozen params.
  Var param(const Param& p);

  /// Appends an op result. `saved` lists inputs whose values `backward` reads; `extra_bytes`
  /// counts buffers the closure owns (normalized rows, probabilities). `recompute`, when given,
  /// lets recompute_from re-run the op on changed inputs.
  Var record(Tensor value, std::initializer_list<Var> inputs, std::initializer_list<Var> saved,
             std::size_t extra_bytes, Backward backward, Recompute recompute = {});
  Var record(Tensor value, const std::vector<Var>& inputs, const std::vector<Var>& saved,
             std::size_t extra_bytes, Backward backward, Recompute recompute = {});

  /// Value of `out` after `p` changed in place: re-runs only the ops downstream of p's leaves
  /// and reuses every other recorded value. Results match a fresh forward pass exactly because
  /// the same code runs on the same inputs. Works before or after backward; throws
  /// ContractError when a dependent op cannot be recomputed.
  Tensor recompute_from(const Param& p, const Var& out);

  TapeMode mode() const { return mode_; }
  bool recording() const { return mode_ == TapeMode::record; }

  bool needs_grad(const Var& v) const;
  /// Adjoint buffer for v, zero-allocated on first touch.
  Tensor& adjoint(const Var& v);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint once, newest first.
  /// A second call throws ContractError.
  void backward(const Var& loss);
  bool consumed() const { return consumed_; }

  std::size_t retained_bytes() const;
  std::size_t retained_bytes(std::string_view region) const;
  std::vector<std::pair<std::string, std::size_t>> retained_by_region() const;
  std::size_t recorded_ops() const;
  std::size_t node_count() const { return nodes_.size(); }

  // Drops the payload of nodes [begin, end) except the ids in `keep`.
  void release_values(std::size_t begin, std::size_t end, const std::vector<std::size_t>& keep);

  class RegionScope {
   public:
    RegionScope(Tape& tape, std::size_t region);
    ~RegionScope();
    RegionScope(const RegionScope&) = delete;
    RegionScope& operator=(const RegionScope&) = delete;

   private:
    Tape& tape_;
    std::size_t previous_;
  };

  class ModeScope {
   public:
    ModeScope(Tape& tape, TapeMode mode);
    ~ModeScope();
    ModeScope(const ModeScope&) = delete;
    ModeScope& operator=(const ModeScope&) = delete;

   private:
    Tape& tape_;
    TapeMode previous_;
  };

  /// Tags ops recorded while the scope lives with `name` for byte accounting.
  [[nodiscard]] RegionScope region(std::string_view name);
  [[nodiscard]] ModeScope inference() { return ModeScope(*this, TapeMode::inference); }
  [[nodiscard]] ModeScope frozen() { return ModeScope(*this, TapeMode::frozen); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;  // param leaves read the Param's own storage
    Tensor grad;
    Param* param = nullptr;
    bool requires_grad = false;
    bool saved = false;
    std::size_t saved_region = 0;
    std::size_t region = 0;
    std::size_t extra_bytes = 0;
    std::vector<std::size_t> inputs;
    Backward backward;
    Recompute recompute;

    const Tensor& current() const { return ref ? *ref : value; }
  };

  Var push(Node node);
  void check_owner(const Var& v) const;
  std::size_t region_id(std::string_view name);

  // deque keeps node references stable while the tape grows.
  std::deque<Node> nodes_;
  std::vector<std::string> regions_{"default"};
  std::size_t current_region_ = 0;
  TapeMode mode_ = TapeMode::record;
  bool consumed_ = false;
};

namespace detail {

inline void collect_ids(const Var& v, std::vector<std::size_t>& ids) { ids.push_back(v.id()); }
inline void collect_ids(const std::vector<Var>& vs, std::vector<std::size_t>& ids) {
  for (const auto& v : vs) ids.push_back(v.id());
}

}  // namespace detail

/// Runs `f` with the tape in frozen mode. Results are constant leaves; every interior value
/// is released on exit, so the region retains zero bytes for backward. Using a trainable
/// Param inside throws ContractError.
template <class F>
auto frozen_region(Tape& tape, F&& f) {
  const std::size_t begin = tape.node_count();
  auto result = [&] {
    auto scope = tape.frozen();
    return std::forward<F>(f)();
  }();
  std::vector<std::size_t> keep;
  detail::collect_ids(result, keep);
  tape.release_values(begin, tape.node_count(), keep);
  return result;
}

}  // namespace edt
