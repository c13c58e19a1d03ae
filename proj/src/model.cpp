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

#include "edt/model.hpp"

#include <algorithm>
#include <map>

#include "edt/binio.hpp"
#include "edt/ops.hpp"
#include "edt/synth.hpp"

namespace edt {

Model::Model(const RunConfig& cfg)
    : cfg_(cfg),
      backbone_((cfg_.validate(), cfg_.backbone)),
      lopa_(cfg_.lopa, cfg_.backbone.dim, cfg_.train.seed),
      aggregator_(cfg_.aggregator, cfg_.train.seed) {}

Var Model::descriptor(Tape& tape, const Tensor& image) {
  return aggregator_.aggregate(lopa_.forward(backbone_.forward_collect(tape, image)));
}

Var Model::descriptor(Tape& tape, const IntermediateStack& stack) {
  std::vector<Var> zs;
  for (const auto& z : stack.layers) zs.push_back(tape.constant(z));
  return aggregator_.aggregate(lopa_.forward(zs));
}

namespace {

Var batched_descriptors(Lopa& lopa, Aggregator& aggregator, const std::vector<std::vector<Var>>& per_image) {
  const std::size_t layers = per_image.front().size();
  std::vector<Var> zs;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<Var> parts;
    for (const auto& stack : per_image) parts.push_back(stack.at(l));
    zs.push_back(parts.size() == 1 ? parts.front() : concat_rows(parts));
  }
  return aggregator.aggregate_batch(lopa.forward(zs), per_image.size());
}

}  // namespace

Var Model::descriptors(Tape& tape, const std::vector<const Tensor*>& images) {
  if (images.empty()) throw DimensionError("descriptors: empty batch");
  std::vector<std::vector<Var>> per_image;
  for (const Tensor* img : images) per_image.push_back(backbone_.forward_collect(tape, *img));
  return batched_descriptors(lopa_, aggregator_, per_image);
}

Var Model::descriptors(Tape& tape, const std::vector<IntermediateStack>& stacks) {
  if (stacks.empty()) throw DimensionError("descriptors: empty batch");
  const std::size_t layers = stacks.front().layers.size();
  std::vector<Var> zs;
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& first = stacks.front().layers.at(l);
    Tensor joined({first.rows() * stacks.size(), first.cols()});
    for (std::size_t b = 0; b < stacks.size(); ++b) {
      const Tensor& z = stacks[b].layers.at(l);
      require_same_shape(z, first, "descriptors");
      std::copy(z.data().begin(), z.data().end(), joined.ptr() + b * z.size());
    }
    zs.push_back(tape.constant(std::move(joined)));
  }
  return aggregator_.aggregate_batch(lopa_.forward(zs), stacks.size());
}

Tensor Model::describe(const Tensor& image) {
  Tape tape;
  auto scope = tape.inference();
  return descriptor(tape, image).value();
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out = backbone_.params();
  for (Param* p : lopa_.params()) out.push_back(p);
  for (Param* p : aggregator_.params()) out.push_back(p);
  return out;
}

std::vector<Param*> Model::trainable_params() {
  std::vector<Param*> out;
  for (Param* p : params())
    if (p->trainable) out.push_back(p);
  return out;
}

std::size_t Model::trainable_count() {
  std::size_t n = 0;
  for (Param* p : trainable_params()) n += p->size();
  return n;
}

void save_checkpoint(const std::filesystem::path& path, Model& model) {
  BinaryWriter w;
  w.magic("EDTC");
  w.u32(kCheckpointVersion);
  const std::string cfg = to_json_string(model.config());
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  const auto params = model.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t e : p->value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : p->value.data()) w.f64(v);
  }
  write_file_atomic(path, w.buffer());
}

Model load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  BinaryReader r(bytes);
  r.expect_magic("EDTC", "checkpoint");
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  const std::uint32_t cfg_len = r.u32();
  Model model(parse_run_config(r.bytes(cfg_len)));

  std::map<std::string, Param*> by_name;
  for (Param* p : model.params()) by_name[p->name] = p;
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  if (count != by_name.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                          std::to_string(by_name.size()),
                      count_at);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.offset();
    const std::string name(r.bytes(r.u32()));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint tensor '" + name + "' is not a model param", at);
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u32();
    Param& p = *it->second;
    if (shape != p.value.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(shape) + ", expected " +
                            to_string(p.value.shape()),
                        at);
    for (auto& v : p.value.data()) v = r.f64();
    by_name.erase(it);
  }
  r.expect_remaining(0, "checkpoint");
  return model;
}

std::size_t MemoryReport::bytes(std::string_view region) const {
  for (const auto& [name, b] : retained_bytes)
    if (name == region) return b;
  return 0;
}

MemoryReport memory_report(const RunConfig& cfg, AdapterMode mode) {
  cfg.validate();
  Backbone backbone(cfg.backbone);
  Lopa lopa(cfg.lopa, cfg.backbone.dim, cfg.train.seed);
  SynthConfig synth = cfg.synth;
  const Tensor image = render_view(synth, 0, 0);

  Tape tape;
  // Regions are created up front so both modes report the same rows.
  { auto a = tape.region("backbone"); }
  { auto b = tape.region("lopa"); }
  Var y;
  if (mode == AdapterMode::lopa)
    y = lopa.forward(backbone.forward_collect(tape, image));
  else
    y = serial_adapter_forward_reference(tape, image, backbone, lopa.functions(), cfg.lopa);
  (void)y;

  MemoryReport report;
  report.mode = mode;
  report.trainable_params = lopa.trainable_count();
  for (auto& [name, b] : tape.retained_by_region())
    if (name != "default") report.retained_bytes.emplace_back(name, b);
  return report;
}

}  // namespace edt
