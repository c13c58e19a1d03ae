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
#include <stdexcept>
#include <string>
#include <string_view>

#include "edt/backbone.hpp"
#include "edt/aggregator.hpp"
#include "edt/lopa.hpp"
#include "edt/loss.hpp"
#include "edt/synth.hpp"

namespace edt {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t places_per_batch = 8;  // P
  std::size_t images_per_place = 2;  // K
  double lr = 1e-3;
  double lr_decay = 0.7;
  std::size_t decay_every = 3;  // epochs
  std::uint64_t seed = 7;
};

/// Every knob of a run. Sections: backbone, lopa, aggregator, loss, train, synth.
/// Missing keys keep their defaults; unknown keys are rejected.
struct RunConfig {
  ViTConfig backbone;
  LoPAConfig lopa;
  AggregatorConfig aggregator;
  LossConfig loss;
  TrainConfig train;
  SynthConfig synth;

  /// Per-section checks plus cross-section consistency (widths, depths, image geometry).
  void validate() const;
};

RunConfig parse_run_config(std::string_view json_text);
std::string to_json_string(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace edt
