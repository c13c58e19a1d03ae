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

#include "edt/pipeline.hpp"

#include <cmath>
#include <set>

#include "edt/ops.hpp"
#include "edt/random.hpp"

namespace edt {

ImageStore load_images(const std::filesystem::path& dir, const Manifest& manifest) {
  ImageStore store;
  for (const auto& row : manifest.rows) store.emplace(row.image_id, load_image(image_path(dir, row.image_id)));
  return store;
}

namespace {

const Tensor& image_of(const ImageStore& images, std::uint32_t id) {
  auto it = images.find(id);
  if (it == images.end()) throw std::invalid_argument("image " + std::to_string(id) + " is missing from the corpus");
  return it->second;
}

Var loss_from_descriptors(const Var& descs, std::span<const std::uint32_t> place_ids, const LossConfig& cfg,
                          const MinedPairs* fixed, MinedPairs* mined) {
  const Var s = similarity_matrix(descs);
  MinedPairs pairs = fixed ? *fixed : mine_pairs(s.value(), place_ids, cfg.margin);
  Var loss = ms_loss(s, pairs, cfg);
  if (mined) *mined = std::move(pairs);
  return loss;
}

}  // namespace

Var batch_loss(Tape& tape, Model& model, const std::vector<const Tensor*>& images,
               std::span<const std::uint32_t> place_ids, MinedPairs* pairs) {
  if (images.size() != place_ids.size())
    throw DimensionError("batch: " + std::to_string(images.size()) + " images but " +
                         std::to_string(place_ids.size()) + " place ids");
  if (images.size() < 2) throw DimensionError("batch needs at least two images");
  return loss_from_descriptors(model.descriptors(tape, images), place_ids, model.config().loss, nullptr, pairs);
}

StepResult train_step(Model& model, Adam& adam, double lr, const std::vector<const Tensor*>& images,
                      std::span<const std::uint32_t> place_ids) {
  Tape tape;
  MinedPairs pairs;
  const Var loss = batch_loss(tape, model, images, place_ids, &pairs);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericalError("training loss is not finite");
  tape.backward(loss);
  adam.step(lr);
  return StepResult{value, pairs.positive_pairs(), pairs.negative_pairs(), pairs.active_queries(),
                    pairs.queries_without_positives};
}

TrainSummary train(Model& model, const Manifest& manifest, const ImageStore& images, std::ostream* log) {
  const TrainConfig& t = model.config().train;
  BatchSampler sampler(manifest, t.places_per_batch, t.images_per_place, t.seed);
  Adam adam(model.params());
  TrainSummary summary;
  for (std::size_t epoch = 0; epoch < t.epochs; ++epoch) {
    const double lr = scheduled_lr(t.lr, t.lr_decay, t.decay_every, epoch);
    double total = 0.0;
    const std::size_t batches = sampler.batches_per_epoch();
    for (std::size_t b = 0; b < batches; ++b) {
      const auto ids = sampler.next();
      std::vector<const Tensor*> batch;
      std::vector<std::uint32_t> places;
      for (std::uint32_t id : ids) {
        batch.push_back(&image_of(images, id));
        places.push_back(sampler.place_of(id));
      }
      const StepResult r = train_step(model, adam, lr, batch, places);
      total += r.loss;
      ++summary.steps;
      if (log)
        *log << "step=" << summary.steps << " epoch=" << epoch + 1 << " lr=" << lr << " loss=" << r.loss
             << " pos_pairs=" << r.positive_pairs << " neg_pairs=" << r.negative_pairs
             << " active=" << r.active_queries << " no_positive=" << r.queries_without_positives << '\n';
    }
    summary.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  return summary;
}

DescriptorSet extract(Model& model, const Manifest& manifest, const ImageStore& images, Split split) {
  const auto rows = manifest.select(split);
  if (rows.empty()) throw std::invalid_argument(std::string("split '") + std::string(to_string(split)) + "' is empty");
  DescriptorSet set;
  set.matrix = Tensor({rows.size(), model.config().aggregator.descriptor_dim()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor d = model.describe(image_of(images, rows[i].image_id));
    std::copy(d.data().begin(), d.data().end(), set.matrix.ptr() + i * d.size());
    set.ids.push_back(rows[i].image_id);
    set.place_ids.push_back(rows[i].place_id);
  }
  return set;
}

EvalResult evaluate(Model& model, const Manifest& manifest, const ImageStore& images, std::span<const std::size_t> ns) {
  const DescriptorSet q = extract(model, manifest, images, Split::query);
  const DescriptorSet db = extract(model, manifest, images, Split::db);
  const GroundTruth gt = GroundTruth::from_places(q.ids, q.place_ids, db.ids, db.place_ids);
  return evaluate_descriptors(q, db, gt, ns);
}

GradCheckReport pipeline_grad_check(const RunConfig& cfg, const GradCheckOptions& opts, GradCheckSetup setup) {
  if (setup.images_per_place == 0 || setup.batch % setup.images_per_place != 0 || setup.batch < 2)
    throw std::invalid_argument("grad check batch must be a multiple of images_per_place and at least 2");
  Model model(cfg);
  // Move off the zero-initialized up-projections so every adapter scalar has a nonzero gradient.
  Rng rng = make_rng(cfg.train.seed, 0x6C4E);
  for (auto& fn : model.lopa().functions()) fn.up.value = normal_tensor(fn.up.value.shape(), 0.02, rng);

  SynthConfig synth = cfg.synth;
  const std::size_t places = setup.batch / setup.images_per_place;
  if (places > synth.places) synth.places = places;
  if (setup.images_per_place > synth.views_per_place) synth.views_per_place = setup.images_per_place;
  std::vector<IntermediateStack> stacks;
  std::vector<std::uint32_t> place_ids;
  for (std::size_t p = 0; p < places; ++p)
    for (std::size_t v = 0; v < setup.images_per_place; ++v) {
      stacks.push_back(model.backbone().forward_collect(render_view(synth, p, v)));
      place_ids.push_back(static_cast<std::uint32_t>(p));
    }

  // The frozen backbone is constant with respect to every checked scalar, so its stacks are
  // computed once. Mining is a discontinuous selection; it is fixed at the base point.
  MinedPairs pairs;
  bool mined = false;
  const ScalarFn f = [&](Tape& tape) {
    MinedPairs fresh;
    Var loss = loss_from_descriptors(model.descriptors(tape, stacks), place_ids, cfg.loss, mined ? &pairs : nullptr, &fresh);
    if (!mined) {
      pairs = std::move(fresh);
      mined = true;
    }
    return loss;
  };
  {
    Tape probe;
    auto scope = probe.inference();
    f(probe);
  }
  if (pairs.active_queries() == 0) throw NumericalError("grad check batch mined no active queries");
  return grad_check(f, model.trainable_params(), opts);
}

}  // namespace edt
