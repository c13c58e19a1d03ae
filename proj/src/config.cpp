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

#include "edt/config.hpp"

#include <initializer_list>
#include <set>

#include "edt/binio.hpp"
#include "json.hpp"

namespace edt {

namespace {

using nlohmann::json;

void allow_keys(const json& obj, const std::string& section, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items())
    if (!allowed.contains(k)) throw ConfigError("unknown config key '" + (section.empty() ? k : section + "." + k) + "'");
}

template <class T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  try {
    if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("");
    }
    out = v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type: " + v.dump());
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    backbone.validate();
    lopa.validate(backbone.dim);
    aggregator.validate();
    loss.validate();
    synth.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (lopa.depth != backbone.depth)
    throw ConfigError("lopa.depth " + std::to_string(lopa.depth) + " must equal backbone.depth " +
                      std::to_string(backbone.depth));
  if (aggregator.dim != backbone.dim)
    throw ConfigError("aggregator.dim " + std::to_string(aggregator.dim) + " must equal backbone.dim " +
                      std::to_string(backbone.dim));
  if (synth.image_size != backbone.image_size || synth.channels != backbone.channels)
    throw ConfigError("synth image geometry must match backbone image_size and channels");
  if (train.epochs == 0 || train.places_per_batch == 0 || train.images_per_place == 0)
    throw ConfigError("train.epochs, places_per_batch and images_per_place must be at least 1");
  if (!(train.lr >= 0.0) || !(train.lr_decay > 0.0)) throw ConfigError("train.lr >= 0 and train.lr_decay > 0 required");
}

RunConfig parse_run_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  allow_keys(root, "", {"backbone", "lopa", "aggregator", "loss", "train", "synth"});
  RunConfig cfg;
  if (root.contains("backbone")) {
    const auto& s = root["backbone"];
    allow_keys(s, "backbone", {"image_size", "patch_size", "channels", "dim", "depth", "heads", "seed"});
    auto& b = cfg.backbone;
    read(s, "backbone", "image_size", b.image_size);
    read(s, "backbone", "patch_size", b.patch_size);
    read(s, "backbone", "channels", b.channels);
    read(s, "backbone", "dim", b.dim);
    read(s, "backbone", "depth", b.depth);
    read(s, "backbone", "heads", b.heads);
    read(s, "backbone", "seed", b.seed);
  }
  // Dependent defaults follow the backbone unless given explicitly.
  cfg.lopa.depth = cfg.backbone.depth;
  cfg.aggregator.dim = cfg.backbone.dim;
  cfg.synth.image_size = cfg.backbone.image_size;
  cfg.synth.channels = cfg.backbone.channels;
  if (root.contains("lopa")) {
    const auto& s = root["lopa"];
    allow_keys(s, "lopa", {"rank", "scale", "depth"});
    read(s, "lopa", "rank", cfg.lopa.rank);
    read(s, "lopa", "scale", cfg.lopa.scale);
    read(s, "lopa", "depth", cfg.lopa.depth);
  }
  if (root.contains("aggregator")) {
    const auto& s = root["aggregator"];
    allow_keys(s, "aggregator", {"dim", "decoder_blocks", "queries", "heads", "out_dim", "out_queries"});
    auto& a = cfg.aggregator;
    read(s, "aggregator", "dim", a.dim);
    read(s, "aggregator", "decoder_blocks", a.decoder_blocks);
    read(s, "aggregator", "queries", a.queries);
    read(s, "aggregator", "heads", a.heads);
    read(s, "aggregator", "out_dim", a.out_dim);
    read(s, "aggregator", "out_queries", a.out_queries);
  }
  if (root.contains("loss")) {
    const auto& s = root["loss"];
    allow_keys(s, "loss", {"alpha", "beta", "lambda", "margin"});
    read(s, "loss", "alpha", cfg.loss.alpha);
    read(s, "loss", "beta", cfg.loss.beta);
    read(s, "loss", "lambda", cfg.loss.lambda);
    read(s, "loss", "margin", cfg.loss.margin);
  }
  if (root.contains("train")) {
    const auto& s = root["train"];
    allow_keys(s, "train", {"epochs", "places_per_batch", "images_per_place", "lr", "lr_decay", "decay_every", "seed"});
    auto& t = cfg.train;
    read(s, "train", "epochs", t.epochs);
    read(s, "train", "places_per_batch", t.places_per_batch);
    read(s, "train", "images_per_place", t.images_per_place);
    read(s, "train", "lr", t.lr);
    read(s, "train", "lr_decay", t.lr_decay);
    read(s, "train", "decay_every", t.decay_every);
    read(s, "train", "seed", t.seed);
  }
  if (root.contains("synth")) {
    const auto& s = root["synth"];
    allow_keys(s, "synth", {"places", "views_per_place", "image_size", "channels", "perturbation", "seed"});
    auto& y = cfg.synth;
    read(s, "synth", "places", y.places);
    read(s, "synth", "views_per_place", y.views_per_place);
    read(s, "synth", "image_size", y.image_size);
    read(s, "synth", "channels", y.channels);
    read(s, "synth", "seed", y.seed);
    if (s.contains("perturbation")) {
      const auto& p = s["perturbation"];
      allow_keys(p, "synth.perturbation", {"shift_px", "noise_std", "brightness_range"});
      read(p, "synth.perturbation", "shift_px", y.perturbation.shift_px);
      read(p, "synth.perturbation", "noise_std", y.perturbation.noise_std);
      read(p, "synth.perturbation", "brightness_range", y.perturbation.brightness_range);
    }
  }
  cfg.validate();
  return cfg;
}

std::string to_json_string(const RunConfig& c) {
  json j;
  j["backbone"] = {{"image_size", c.backbone.image_size}, {"patch_size", c.backbone.patch_size},
                   {"channels", c.backbone.channels},     {"dim", c.backbone.dim},
                   {"depth", c.backbone.depth},           {"heads", c.backbone.heads},
                   {"seed", c.backbone.seed}};
  j["lopa"] = {{"rank", c.lopa.rank}, {"scale", c.lopa.scale}, {"depth", c.lopa.depth}};
  j["aggregator"] = {{"dim", c.aggregator.dim},         {"decoder_blocks", c.aggregator.decoder_blocks},
                     {"queries", c.aggregator.queries}, {"heads", c.aggregator.heads},
                     {"out_dim", c.aggregator.out_dim}, {"out_queries", c.aggregator.out_queries}};
  j["loss"] = {{"alpha", c.loss.alpha}, {"beta", c.loss.beta}, {"lambda", c.loss.lambda}, {"margin", c.loss.margin}};
  j["train"] = {{"epochs", c.train.epochs},
                {"places_per_batch", c.train.places_per_batch},
                {"images_per_place", c.train.images_per_place},
                {"lr", c.train.lr},
                {"lr_decay", c.train.lr_decay},
                {"decay_every", c.train.decay_every},
                {"seed", c.train.seed}};
  j["synth"] = {{"places", c.synth.places},
                {"views_per_place", c.synth.views_per_place},
                {"image_size", c.synth.image_size},
                {"channels", c.synth.channels},
                {"seed", c.synth.seed},
                {"perturbation",
                 {{"shift_px", c.synth.perturbation.shift_px},
                  {"noise_std", c.synth.perturbation.noise_std},
                  {"brightness_range", c.synth.perturbation.brightness_range}}}};
  return j.dump(2);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text);
}

}  // namespace edt
