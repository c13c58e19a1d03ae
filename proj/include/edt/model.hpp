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
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edt/backbone.hpp"
#include "edt/config.hpp"
#include "edt/aggregator.hpp"
#include "edt/lopa.hpp"

namespace edt {

/// Frozen backbone, LoPA ladder and decoder aggregator wired into one descriptor model.
class Model {
 public:
  explicit Model(const RunConfig& cfg);

  const RunConfig& config() const { return cfg_; }
  Backbone& backbone() { return backbone_; }
  Lopa& lopa() { return lopa_; }
  Aggregator& aggregator() { return aggregator_; }

  /// Descriptor of one image recorded on `tape`; the backbone runs frozen.
  Var descriptor(Tape& tape, const Tensor& image);
  /// Same, starting from a precomputed intermediate stack.
  Var descriptor(Tape& tape, const IntermediateStack& stack);
  /// Descriptors of a batch as rows (B x D) from one pass through adapters and aggregator.
  Var descriptors(Tape& tape, const std::vector<const Tensor*>& images);
  Var descriptors(Tape& tape, const std::vector<IntermediateStack>& stacks);
  /// Inference-only descriptor.
  Tensor describe(const Tensor& image);

  /// Every param in a fixed order: backbone, lopa, aggregator.
  std::vector<Param*> params();
  std::vector<Param*> trainable_params();
  std::size_t trainable_count();

 private:
  RunConfig cfg_;
  Backbone backbone_;
  Lopa lopa_;
  Aggregator aggregator_;
};

// Checkpoint: "EDTC", u32 version, u32 config length + JSON bytes, u32 tensor count, then per
// tensor u32 name length, name, u32 rank, u32 extents, f64 LE payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, Model& model);
Model load_checkpoint(const std::filesystem::path& path);

enum class AdapterMode { lopa, serial };

struct MemoryReport {
  AdapterMode mode = AdapterMode::lopa;
  std::size_t trainable_params = 0;  // adapter params only
  std::vector<std::pair<std::string, std::size_t>> retained_bytes;  // per region, one image

  std::size_t bytes(std::string_view region) const;
};

/// Records one image through backbone and adapters (no aggregator) and reports the activation
/// bytes the tape keeps for backward. In serial mode the adapters sit after every encoder
/// block, so backward must cross the backbone.
MemoryReport memory_report(const RunConfig& cfg, AdapterMode mode);

}  // namespace edt
