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

#include "edt/backbone.hpp"

#include <string>

#include "edt/binio.hpp"
#include "edt/ops.hpp"
#include "edt/random.hpp"

namespace edt {

namespace {

constexpr double kInitStd = 0.02;

}  // namespace

void ViTConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || channels == 0 || dim == 0 || depth == 0 || heads == 0)
    throw std::invalid_argument("backbone: every size must be at least 1");
  if (image_size % patch_size != 0)
    throw std::invalid_argument("backbone: image_size " + std::to_string(image_size) +
                                " is not divisible by patch_size " + std::to_string(patch_size));
  if (dim % heads != 0)
    throw std::invalid_argument("backbone: dim " + std::to_string(dim) + " is not divisible by heads " +
                                std::to_string(heads));
  if (dim < 2) throw std::invalid_argument("backbone: dim must be at least 2 for layer norm");
}

void IntermediateStack::validate() const {
  if (layers.size() < 2) throw DimensionError("feature stack needs at least z_0 and z_1");
  for (const auto& z : layers) {
    if (z.rank() != 2 || z.shape() != layers.front().shape())
      throw DimensionError("feature stack layers disagree: " + to_string(z.shape()) + " vs " +
                           to_string(layers.front().shape()));
    if (!z.all_finite()) throw NumericalError("feature stack holds non-finite values");
  }
}

std::vector<Param*> EncoderBlockParams::params() {
  std::vector<Param*> out{&ln1_gamma, &ln1_beta};
  for (Param* p : attn.params()) out.push_back(p);
  for (Param* p : {&ln2_gamma, &ln2_beta, &fc1_w, &fc1_b, &fc2_w, &fc2_b}) out.push_back(p);
  return out;
}

Backbone::Backbone(const ViTConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(cfg_.seed, 0xB0B0);
  const std::size_t d = cfg_.dim;
  patch_w_ = Param("backbone.patch.w", normal_tensor({cfg_.patch_dim(), d}, kInitStd, rng), false);
  patch_b_ = Param("backbone.patch.b", Tensor({d}), false);
  class_token_ = Param("backbone.cls", normal_tensor({d}, kInitStd, rng), false);
  pos_embed_ = Param("backbone.pos", normal_tensor({cfg_.num_patches(), d}, kInitStd, rng), false);
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const std::string pre = "backbone.block" + std::to_string(l);
    EncoderBlockParams b;
    b.ln1_gamma = Param(pre + ".ln1.gamma", Tensor({d}, 1.0), false);
    b.ln1_beta = Param(pre + ".ln1.beta", Tensor({d}), false);
    b.attn = MhaParams::init(pre + ".attn", d, kInitStd, rng, false);
    b.ln2_gamma = Param(pre + ".ln2.gamma", Tensor({d}, 1.0), false);
    b.ln2_beta = Param(pre + ".ln2.beta", Tensor({d}), false);
    b.fc1_w = Param(pre + ".mlp.fc1.w", normal_tensor({d, 4 * d}, kInitStd, rng), false);
    b.fc1_b = Param(pre + ".mlp.fc1.b", Tensor({4 * d}), false);
    b.fc2_w = Param(pre + ".mlp.fc2.w", normal_tensor({4 * d, d}, kInitStd, rng), false);
    b.fc2_b = Param(pre + ".mlp.fc2.b", Tensor({d}), false);
    blocks_.push_back(std::move(b));
  }
}

Tensor patchify(const Tensor& image, const ViTConfig& cfg) {
  const std::size_t s = cfg.image_size, p = cfg.patch_size, c = cfg.channels;
  if (image.shape() != Shape{s, s, c})
    throw DimensionError("image " + to_string(image.shape()) + " does not match backbone input " +
                         to_string(Shape{s, s, c}));
  const std::size_t g = cfg.grid();
  Tensor out({cfg.num_patches(), cfg.patch_dim()});
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      double* dst = out.ptr() + (gy * g + gx) * cfg.patch_dim();
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t ch = 0; ch < c; ++ch)
            *dst++ = image[((gy * p + y) * s + (gx * p + x)) * c + ch];
    }
  return out;
}

Var Backbone::patch_embed(Tape& tape, const Tensor& image) {
  const Var patches = tape.constant(patchify(image, cfg_));
  const Var x_p = add(linear(patches, tape.param(patch_w_), tape.param(patch_b_)), tape.param(pos_embed_));
  return concat_rows({tape.param(class_token_), x_p});
}

Var Backbone::encoder_block(Tape& tape, const Var& z, std::size_t layer) {
  EncoderBlockParams& b = blocks_.at(layer);
  const Var h = layer_norm(z, tape.param(b.ln1_gamma), tape.param(b.ln1_beta));
  const Var z_mid = add(mha(tape, h, h, h, b.attn, cfg_.heads), z);
  const Var h2 = layer_norm(z_mid, tape.param(b.ln2_gamma), tape.param(b.ln2_beta));
  const Var hidden = gelu(linear(h2, tape.param(b.fc1_w), tape.param(b.fc1_b)));
  return add(linear(hidden, tape.param(b.fc2_w), tape.param(b.fc2_b)), z_mid);
}

std::vector<Var> Backbone::forward_collect(Tape& tape, const Tensor& image) {
  auto region = tape.region("backbone");
  return frozen_region(tape, [&] {
    std::vector<Var> zs;
    zs.push_back(patch_embed(tape, image));
    for (std::size_t l = 0; l < cfg_.depth; ++l) zs.push_back(encoder_block(tape, zs.back(), l));
    return zs;
  });
}

IntermediateStack Backbone::forward_collect(const Tensor& image) {
  Tape tape;
  IntermediateStack stack;
  for (const Var& z : forward_collect(tape, image)) stack.layers.push_back(z.value());
  return stack;
}

std::vector<Param*> Backbone::params() {
  std::vector<Param*> out{&patch_w_, &patch_b_, &class_token_, &pos_embed_};
  for (auto& b : blocks_)
    for (Param* p : b.params()) out.push_back(p);
  return out;
}

TokenSeq patch_embed(const Tensor& image, Backbone& backbone) {
  Tape tape;
  auto scope = tape.inference();
  return TokenSeq{backbone.patch_embed(tape, image).value()};
}

void save_feature_stack(const std::filesystem::path& path, const IntermediateStack& stack) {
  stack.validate();
  BinaryWriter w;
  w.magic("EDTZ");
  w.u32(kFeatureStackVersion);
  w.u32(static_cast<std::uint32_t>(stack.layers.size()));
  w.u32(static_cast<std::uint32_t>(stack.layers.front().rows()));
  w.u32(static_cast<std::uint32_t>(stack.layers.front().cols()));
  for (const auto& z : stack.layers)
    for (double v : z.data()) w.f32(static_cast<float>(v));
  write_file_atomic(path, w.buffer());
}

IntermediateStack decode_feature_stack(std::string_view bytes) {
  BinaryReader r(bytes);
  r.expect_magic("EDTZ", "feature stack");
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32(); v != kFeatureStackVersion)
    throw FormatError("unsupported feature stack version " + std::to_string(v), version_at);
  const std::size_t header_at = r.offset();
  const std::uint32_t layers = r.u32(), rows = r.u32(), d = r.u32();
  if (layers < 2 || rows == 0 || d == 0)
    throw FormatError("feature stack header has empty extents (" + std::to_string(layers) + ", " +
                          std::to_string(rows) + ", " + std::to_string(d) + ")",
                      header_at);
  r.expect_remaining(static_cast<std::size_t>(layers) * rows * d * sizeof(float), "feature stack");
  IntermediateStack stack;
  for (std::uint32_t l = 0; l < layers; ++l) {
    Tensor z({rows, d});
    for (auto& v : z.data()) v = r.f32();
    stack.layers.push_back(std::move(z));
  }
  stack.validate();
  return stack;
}

IntermediateStack load_feature_stack(const std::filesystem::path& path) { return decode_feature_stack(read_file(path)); }

}  // namespace edt
