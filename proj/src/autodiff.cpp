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

#include "edt/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

namespace edt {

Param::Param(std::string name_, Tensor value_, bool trainable_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0), trainable(trainable_) {}

const Tensor& Var::value() const { return tape_->nodes_[id_].current(); }

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::push(Node node) {
  node.region = current_region_;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(const Var& v) const {
  if (!v.valid() || &v.tape() != this) throw ContractError("variable belongs to a different tape");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Param& p) {
  if (mode_ == TapeMode::frozen && p.trainable)
    throw ContractError("trainable param '" + p.name + "' used inside a frozen region");
  if (consumed_) throw ContractError("tape already ran backward; start a new tape");
  Node n;
  n.ref = &p.value;
  if (mode_ == TapeMode::record && p.trainable) {
    n.param = &p;
    n.requires_grad = true;
  }
  return push(std::move(n));
}

Var Tape::param(const Param& p) {
  if (p.trainable && mode_ != TapeMode::inference)
    throw ContractError("trainable param '" + p.name + "' requested read-only outside inference");
  Node n;
  n.ref = &p.value;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, std::initializer_list<Var> saved,
                 std::size_t extra_bytes, Backward backward, Recompute recompute) {
  return record(std::move(value), std::vector<Var>(inputs), std::vector<Var>(saved), extra_bytes,
                std::move(backward), std::move(recompute));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, const std::vector<Var>& saved,
                 std::size_t extra_bytes, Backward backward, Recompute recompute) {
  if (consumed_) throw ContractError("tape already ran backward; start a new tape");
  for (const auto& v : inputs) check_owner(v);
  if (!value.all_finite()) throw NumericalError("op produced a non-finite value, shape " + to_string(value.shape()));

  Node n;
  n.value = std::move(value);
  if (mode_ != TapeMode::record) return push(std::move(n));

  for (const auto& v : inputs) {
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.extra_bytes = extra_bytes;
  n.backward = std::move(backward);
  n.recompute = std::move(recompute);
  for (const auto& v : saved) {
    Node& s = nodes_[v.id()];
    // Weights are resident anyway; only activations count as retained.
    if (!s.saved && s.param == nullptr) {
      s.saved = true;
      s.saved_region = current_region_;
    }
  }
  return push(std::move(n));
}

bool Tape::needs_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

Tensor& Tape::adjoint(const Var& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = Tensor(n.current().shape(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& loss) {
  check_owner(loss);
  if (consumed_) throw ContractError("backward already ran on this tape");
  if (loss.value().size() != 1)
    throw DimensionError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  consumed_ = true;
  if (!needs_grad(loss)) return;

  adjoint(loss).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr && n.param->trainable) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    if (!n.param) n.grad.release();
  }
}

Tensor Tape::recompute_from(const Param& p, const Var& out) {
  check_owner(out);
  const std::size_t end = out.id() + 1;
  std::vector<char> dirty(end, 0);
  std::vector<Tensor> fresh(end);
  std::vector<const Tensor*> ins;
  auto value_of = [&](std::size_t j) -> const Tensor& { return dirty[j] && !nodes_[j].ref ? fresh[j] : nodes_[j].current(); };
  for (std::size_t i = 0; i < end; ++i) {
    const Node& n = nodes_[i];
    if (n.ref == &p.value) {
      dirty[i] = 1;
      continue;
    }
    bool stale = false;
    for (std::size_t j : n.inputs) stale = stale || dirty[j];
    if (!stale) continue;
    if (!n.recompute) throw ContractError("recompute_from: op " + std::to_string(i) + " cannot be re-evaluated");
    ins.clear();
    for (std::size_t j : n.inputs) ins.push_back(&value_of(j));
    fresh[i] = n.recompute(ins);
    if (!fresh[i].all_finite()) throw NumericalError("recompute_from: op produced a non-finite value");
    dirty[i] = 1;
  }
  return value_of(out.id());
}

std::size_t Tape::retained_bytes() const {
  std::size_t total = 0;
  for (const auto& [name, bytes] : retained_by_region()) total += bytes;
  return total;
}

std::size_t Tape::retained_bytes(std::string_view region) const {
  for (const auto& [name, bytes] : retained_by_region())
    if (name == region) return bytes;
  return 0;
}

std::vector<std::pair<std::string, std::size_t>> Tape::retained_by_region() const {
  std::vector<std::size_t> bytes(regions_.size(), 0);
  for (const auto& n : nodes_) {
    if (n.saved) bytes[n.saved_region] += n.value.bytes();
    bytes[n.region] += n.extra_bytes;
  }
  std::vector<std::pair<std::string, std::size_t>> out;
  for (std::size_t i = 0; i < regions_.size(); ++i) out.emplace_back(regions_[i], bytes[i]);
  return out;
}

std::size_t Tape::recorded_ops() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return static_cast<bool>(n.backward); }));
}

void Tape::release_values(std::size_t begin, std::size_t end, const std::vector<std::size_t>& keep) {
  const std::unordered_set<std::size_t> kept(keep.begin(), keep.end());
  for (std::size_t i = begin; i < end; ++i)
    if (!kept.contains(i)) nodes_[i].value.release();
}

std::size_t Tape::region_id(std::string_view name) {
  auto it = std::find(regions_.begin(), regions_.end(), name);
  if (it != regions_.end()) return static_cast<std::size_t>(it - regions_.begin());
  regions_.emplace_back(name);
  return regions_.size() - 1;
}

Tape::RegionScope Tape::region(std::string_view name) { return RegionScope(*this, region_id(name)); }

Tape::RegionScope::RegionScope(Tape& tape, std::size_t region) : tape_(tape), previous_(tape.current_region_) {
  tape_.current_region_ = region;
}

Tape::RegionScope::~RegionScope() { tape_.current_region_ = previous_; }

Tape::ModeScope::ModeScope(Tape& tape, TapeMode mode) : tape_(tape), previous_(tape.mode_) {
  // Nested scopes may only tighten: frozen inside inference stays inference.
  if (!(previous_ == TapeMode::inference && mode == TapeMode::frozen)) tape_.mode_ = mode;
}

Tape::ModeScope::~ModeScope() { tape_.mode_ = previous_; }

}  // namespace edt
