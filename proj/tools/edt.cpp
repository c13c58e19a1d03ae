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

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "edt/binio.hpp"
#include "edt/config.hpp"
#include "edt/model.hpp"
#include "edt/pipeline.hpp"
#include "edt/runtime.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
// Byte offset of the dim field in a descriptor file header.
constexpr std::size_t kDimOffset = 12;

edt::RunConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    edt::RunConfig cfg;
    cfg.validate();
    return cfg;
  }
  return edt::load_run_config(path);
}

edt::Manifest load_manifest(const fs::path& dir) {
  const fs::path m = edt::manifest_path(dir);
  if (!fs::exists(m)) throw std::invalid_argument("no corpus at " + dir.string() + " (missing " + m.string() + ")");
  return edt::read_manifest(m);
}

fs::path ground_truth_path(const fs::path& dir) { return dir / "ground_truth.csv"; }

void print_recall(const edt::EvalResult& r) {
  for (const auto& [n, v] : r.recall_at) std::cout << "R@" << n << " " << std::fixed << std::setprecision(2) << v << "\n";
}

int cmd_synth(const std::string& config, const fs::path& out) {
  const edt::RunConfig cfg = config_or_default(config);
  const edt::Manifest m = edt::generate(cfg.synth, out);
  std::vector<std::uint32_t> qi, qp, di, dp;
  for (const auto& r : m.select(edt::Split::query)) qi.push_back(r.image_id), qp.push_back(r.place_id);
  for (const auto& r : m.select(edt::Split::db)) di.push_back(r.image_id), dp.push_back(r.place_id);
  edt::write_ground_truth(ground_truth_path(out), edt::GroundTruth::from_places(qi, qp, di, dp));
  std::cout << "wrote " << m.rows.size() << " images of " << cfg.synth.places << " places to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const std::string& config, const fs::path& data, const fs::path& out, std::string log_path) {
  const edt::RunConfig cfg = config_or_default(config);
  const edt::Manifest manifest = load_manifest(data);
  const edt::ImageStore images = edt::load_images(data, manifest);
  if (log_path.empty()) log_path = out.string() + ".log";
  std::ostringstream log;
  edt::Model model(cfg);
  const edt::TrainSummary s = edt::train(model, manifest, images, &log);
  for (std::size_t e = 0; e < s.epoch_loss.size(); ++e)
    log << "epoch=" << e + 1 << " mean_loss=" << std::setprecision(10) << s.epoch_loss[e] << "\n";
  edt::write_file_atomic(log_path, log.str());
  edt::save_checkpoint(out, model);
  std::cout << "trained " << s.steps << " steps over " << s.epoch_loss.size() << " epochs";
  if (!s.epoch_loss.empty())
    std::cout << ", loss " << std::setprecision(6) << s.epoch_loss.front() << " -> " << s.epoch_loss.back();
  std::cout << "\ncheckpoint " << out.string() << "\nlog " << log_path << "\n";
  return kOk;
}

int cmd_extract(const fs::path& model_path, const fs::path& data, const std::string& split, const fs::path& out) {
  const edt::Split s = edt::parse_split(split);
  edt::Model model = edt::load_checkpoint(model_path);
  const edt::Manifest manifest = load_manifest(data);
  const edt::ImageStore images = edt::load_images(data, manifest);
  const edt::DescriptorSet set = edt::extract(model, manifest, images, s);
  edt::save_descriptors(out, set);
  std::cout << "wrote " << set.ids.size() << " x " << set.matrix.cols() << " descriptors to " << out.string()
            << " (ids in " << edt::sidecar_path(out).string() << ")\n";
  return kOk;
}

int cmd_evaluate(const fs::path& query, const fs::path& db, const std::string& gt_path, std::vector<std::size_t> ns,
                 const std::string& out, const std::string& ranks) {
  const edt::DescriptorSet q = edt::load_descriptors(query);
  const edt::DescriptorSet d = edt::load_descriptors(db);
  if (q.matrix.cols() != d.matrix.cols())
    throw edt::FormatError(query.string() + " holds dim " + std::to_string(q.matrix.cols()) + " descriptors but " +
                           db.string() + " holds dim " + std::to_string(d.matrix.cols()),
                           kDimOffset);
  const edt::GroundTruth gt = gt_path.empty() ? edt::GroundTruth::from_places(q.ids, q.place_ids, d.ids, d.place_ids)
                                              : edt::read_ground_truth(gt_path);
  const edt::EvalResult r = edt::evaluate_descriptors(q, d, gt, ns);
  print_recall(r);
  if (!out.empty()) edt::write_recall_csv(out, r);
  if (!ranks.empty()) edt::write_ranks_csv(ranks, r);
  return kOk;
}

int cmd_gradcheck(const std::string& config, double tol, double step, std::size_t batch) {
  const edt::RunConfig cfg = config_or_default(config);
  edt::GradCheckOptions opts;
  opts.tolerance = tol;
  opts.step = step;
  edt::GradCheckSetup setup;
  setup.batch = batch;
  const edt::GradCheckReport r = edt::pipeline_grad_check(cfg, opts, setup);
  std::cout << "checked " << r.checked << " scalars, " << r.failed << " failed, max error " << std::scientific
            << std::setprecision(3) << r.max_error << " (" << r.worst_param << ")\n";
  for (const auto& f : r.failures)
    std::cout << "  " << f.param << "[" << f.index << "] analytic " << f.analytic << " numeric " << f.numeric << "\n";
  std::cout << (r.passed() ? "PASS" : "FAIL") << "\n";
  return r.passed() ? kOk : kRuntime;
}

int cmd_memreport(const std::string& config) {
  const edt::RunConfig cfg = config_or_default(config);
  for (const auto mode : {edt::AdapterMode::lopa, edt::AdapterMode::serial}) {
    const edt::MemoryReport r = edt::memory_report(cfg, mode);
    std::cout << (mode == edt::AdapterMode::lopa ? "lopa" : "serial") << " trainable_adapter_params "
              << r.trainable_params << "\n";
    for (const auto& [region, bytes] : r.retained_bytes)
      std::cout << "  retained_bytes " << region << " " << bytes << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  edt::configure_allocator();
  CLI::App app{"Place-recognition descriptor toolkit: synthesize, train, extract, evaluate, check."};
  app.require_subcommand(1);

  std::string config, log_path, split, gt, out_csv, ranks_csv;
  fs::path out, data, model, query, db;
  std::vector<std::size_t> ns{1, 5, 10};
  double tol = 1e-5, step = 1e-5;
  std::size_t batch = 8;

  auto* synth = app.add_subcommand("synth", "Render the synthetic corpus and its ground truth");
  synth->add_option("--config", config, "Run config JSON (defaults when omitted)");
  synth->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train adapters and aggregator; write a checkpoint");
  train->add_option("--config", config, "Run config JSON (defaults when omitted)");
  train->add_option("--data", data, "Corpus directory")->required();
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--log", log_path, "Training log path (default <out>.log)");

  auto* extract = app.add_subcommand("extract", "Write descriptors of one split");
  extract->add_option("--model", model, "Checkpoint path")->required();
  extract->add_option("--data", data, "Corpus directory")->required();
  extract->add_option("--split", split, "train, db or query")->required();
  extract->add_option("--out", out, "Descriptor file")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Recall@N of query descriptors against a database");
  evaluate->add_option("--query", query, "Query descriptor file")->required();
  evaluate->add_option("--db", db, "Database descriptor file")->required();
  evaluate->add_option("--gt", gt, "Ground truth CSV (default: same place id)");
  evaluate->add_option("--n", ns, "Comma-separated N values")->delimiter(',');
  evaluate->add_option("--out", out_csv, "Recall CSV path");
  evaluate->add_option("--ranks", ranks_csv, "Per-query first-correct-rank CSV path");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full pipeline");
  gradcheck->add_option("--config", config, "Run config JSON (defaults when omitted)");
  gradcheck->add_option("--tol", tol, "Relative tolerance");
  gradcheck->add_option("--step", step, "Central-difference step");
  gradcheck->add_option("--batch", batch, "Images in the checked batch");

  auto* memreport = app.add_subcommand("memreport", "Adapter params and retained activation bytes, LoPA vs serial");
  memreport->add_option("--config", config, "Run config JSON (defaults when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*synth) return cmd_synth(config, out);
    if (*train) return cmd_train(config, data, out, log_path);
    if (*extract) return cmd_extract(model, data, split, out);
    if (*evaluate) return cmd_evaluate(query, db, gt, ns, out_csv, ranks_csv);
    if (*gradcheck) return cmd_gradcheck(config, tol, step, batch);
    if (*memreport) return cmd_memreport(config);
  } catch (const edt::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}
