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
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "edt/gradcheck.hpp"
#include "edt/loss.hpp"
#include "edt/model.hpp"
#include "edt/optim.hpp"
#include "edt/retrieval.hpp"
#include "edt/synth.hpp"

namespace edt {

/// Images of a corpus keyed by image id.
using ImageStore = std::map<std::uint32_t, Tensor>;
ImageStore load_images(const std::filesystem::path& dir, const Manifest& manifest);

struct StepResult {
  double loss = 0.0;
  std::size_t positive_pairs = 0;
  std::size_t negative_pairs = 0;
  std::size_t active_queries = 0;
  std::size_t queries_without_positives = 0;
};

/// Batch descriptors, similarity, mining and MS loss on `tape`. `pairs` receives the mined sets.
Var batch_loss(Tape& tape, Model& model, const std::vector<const Tensor*>& images,
               std::span<const std::uint32_t> place_ids, MinedPairs* pairs = nullptr);

/// One optimization step. Throws NumericalError on a non-finite loss.
StepResult train_step(Model& model, Adam& adam, double lr, const std::vector<const Tensor*>& images,
                      std::span<const std::uint32_t> place_ids);

struct TrainSummary {
  std::vector<double> epoch_loss;  // mean step loss per epoch
  std::size_t steps = 0;
};

/// Trains on the train split with P x K batches and the stepwise lr schedule. One key=value
/// line per step goes to `log` when given.
TrainSummary train(Model& model, const Manifest& manifest, const ImageStore& images, std::ostream* log = nullptr);

DescriptorSet extract(Model& model, const Manifest& manifest, const ImageStore& images, Split split);

/// Query split against db split with same-place ground truth.
EvalResult evaluate(Model& model, const Manifest& manifest, const ImageStore& images, std::span<const std::size_t> ns);

struct GradCheckSetup {
  std::size_t batch = 8;
  std::size_t images_per_place = 2;
};

/// Finite-difference check of the batch loss with respect to every trainable scalar of a fresh
/// model built from `cfg`. The batch comes from the synthetic renderer; pairs are mined once at
/// the unperturbed point and held fixed.
GradCheckReport pipeline_grad_check(const RunConfig& cfg, const GradCheckOptions& opts, GradCheckSetup setup = {});

}  // namespace edt
