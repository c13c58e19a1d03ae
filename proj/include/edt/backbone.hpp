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
#include <string_view>
#include <vector>

#include "edt/attention.hpp"
#include "edt/autodiff.hpp"

namespace edt {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
};

/// (N+1) x d token matrix; row 0 is the class token.
struct TokenSeq {
  Tensor tokens;
  std::size_t rows() const { return tokens.rows(); }
};

/// Outputs z_0 .. z_L of the patch embedding and every encoder block.
struct IntermediateStack {
  std::vector<Tensor> layers;

  std::size_t depth() const { return layers.empty() ? 0 : layers.size() - 1; }
  void validate() const;
};

struct EncoderBlockParams {
  Param ln1_gamma, ln1_beta;
  MhaParams attn;
  Param ln2_gamma, ln2_beta;
  Param fc1_w, fc1_b, fc2_w, fc2_b;

  std::vector<Param*> params();
};

/// Pre-norm ViT encoder with frozen, seeded weights.
class Backbone {
 public:
  explicit Backbone(const ViTConfig& cfg);

  const ViTConfig& config() const { return cfg_; }

  /// Splits an h x w x c image into p x p patches (row-major over the grid, each patch
  /// flattened row, column, channel), projects them, adds position embeddings, prepends the
  /// class token.
  Var patch_embed(Tape& tape, const Tensor& image);
  /// z' = MHA(LN(z)) + z;  out = MLP(LN(z')) + z'
  Var encoder_block(Tape& tape, const Var& z, std::size_t layer);

  /// Runs the whole encoder inside a frozen region and returns constant leaves z_0 .. z_L.
  std::vector<Var> forward_collect(Tape& tape, const Tensor& image);
  IntermediateStack forward_collect(const Tensor& image);

  std::vector<Param*> params();
  EncoderBlockParams& block(std::size_t i) { return blocks_.at(i); }
  Param& class_token() { return class_token_; }
  Param& position_embedding() { return pos_embed_; }
  Param& patch_weight() { return patch_w_; }
  Param& patch_bias() { return patch_b_; }

 private:
  ViTConfig cfg_;
  Param patch_w_, patch_b_, class_token_, pos_embed_;
  std::vector<EncoderBlockParams> blocks_;
};

/// Rearranges an image into an N x (p*p*c) matrix of flattened patches.
Tensor patchify(const Tensor& image, const ViTConfig& cfg);

TokenSeq patch_embed(const Tensor& image, Backbone& backbone);

// Feature-stack file: "EDTZ", u32 version, u32 layers, u32 rows, u32 d, then f32 LE payload,
// layer-major then row-major.
inline constexpr std::uint32_t kFeatureStackVersion = 1;
void save_feature_stack(const std::filesystem::path& path, const IntermediateStack& stack);
IntermediateStack load_feature_stack(const std::filesystem::path& path);
IntermediateStack decode_feature_stack(std::string_view bytes);

}  // namespace edt
