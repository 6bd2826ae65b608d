// Copyright (c) 2026 The tlasa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: gen-data, train-encoder, train, sample, analyze, report.
// Any subcommand accepts --config FILE plus --section.key=value overrides.

#include <malloc.h>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "tlasa/harness/commands.hpp"

namespace {

using namespace tlasa;
using namespace tlasa::harness;

struct Common {
  std::string config_file;
};

// Remaining "--key=value" arguments, checked against the schema.
Overrides collect_overrides(const CLI::App& sub) {
  Overrides out;
  auto probe = FlatConfig::defaults();
  for (auto arg : sub.remaining()) {
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    arg.erase(0, 2);
    const auto eq = arg.find('=');
    if (eq == std::string::npos) throw ConfigError("override '--" + arg + "' must look like --key=value");
    probe.set(arg.substr(0, eq), arg.substr(eq + 1));
    out[arg.substr(0, eq)] = arg.substr(eq + 1);
  }
  return out;
}

ExperimentConfig load_config(const Common& c, const Overrides& ov) {
  auto flat = FlatConfig::defaults();
  if (!c.config_file.empty()) flat.merge_file(c.config_file);
  for (const auto& [k, v] : ov) flat.set(k, v);
  return ExperimentConfig::from(flat);
}

CLI::App* add_sub(CLI::App& app, const char* name, const char* help, Common& common) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config", common.config_file, "key = value config file");
  sub->allow_extras();
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"flow-matching TTS toy with time- and layer-adaptive speaker alignment"};
  app.require_subcommand(1);
  Common common;
  std::string out, checkpoint, run_dir;
  std::vector<std::string> runs;
  bool print_config = false;

  auto* gen = add_sub(app, "gen-data", "generate the synthetic corpus", common);
  gen->add_option("--out", out, "dataset directory")->required();

  auto* enc = add_sub(app, "train-encoder", "pretrain and freeze speaker encoders A and B", common);
  enc->add_option("--out", out, "output directory")->required();

  auto* train = add_sub(app, "train", "train one run and evaluate it", common);
  train->add_option("--out", out, "run directory")->required();
  train->add_flag("--print-config", print_config, "print the resolved config and exit");

  auto* sample = add_sub(app, "sample", "generate the evaluation utterances from a checkpoint", common);
  sample->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--out", out, "output JSON-lines file")->required();

  auto* analyze = add_sub(app, "analyze", "CKNNA sweeps, heatmaps and correlation for a run", common);
  analyze->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  auto* report = add_sub(app, "report", "aggregate runs into a comparison table", common);
  report->add_option("--out", out, "report directory")->required();
  report->add_option("runs", runs, "run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = load_config(common, collect_overrides(*gen));
      auto h = cmd_gen_data(cfg, out);
      std::printf("dataset %s: %zu train / %zu heldout / %zu test utterances, sha256 %s\n", out.c_str(),
                  h.dataset.train.size(), h.dataset.heldout.size(), h.dataset.test.size(), h.hash.c_str());
    } else if (enc->parsed()) {
      auto cfg = load_config(common, collect_overrides(*enc));
      auto data = load_or_generate(cfg);
      auto rep = cmd_train_encoder(cfg, data.dataset, out);
      std::printf("encoder A: held-out accuracy %.4f, sha256 %s\n", rep.accuracy_a, rep.encoders.a.hash().c_str());
      std::printf("encoder B: held-out accuracy %.4f, sha256 %s\n", rep.accuracy_b, rep.encoders.b.hash().c_str());
    } else if (train->parsed()) {
      auto cfg = load_config(common, collect_overrides(*train));
      if (print_config) {
        std::cout << cfg.flat.to_text();
        return 0;
      }
      auto res = cmd_train(cfg, out);
      const auto& fin = res.evals.back();
      std::printf("%s seed %llu: step %zu sim A %.4f sim B %.4f cknna %.4f\n", tla::mode_name(cfg.tla.mode),
                  static_cast<unsigned long long>(cfg.train.seed), fin.step, fin.sim_a, fin.sim_b, fin.cknna_mean);
    } else if (sample->parsed()) {
      auto res = cmd_sample(checkpoint, collect_overrides(*sample), out);
      std::printf("%zu utterances: sim A %.4f sim B %.4f\n", res.items, res.sim_a, res.sim_b);
    } else if (analyze->parsed()) {
      auto res = cmd_analyze(run_dir, collect_overrides(*analyze));
      std::printf("%zu checkpoints: pearson %.4f spearman %.4f\n", res.rows.size(), res.pearson, res.spearman);
    } else if (report->parsed()) {
      auto res = cmd_report({runs.begin(), runs.end()}, out);
      std::cout << res.markdown;
    }
  } catch (const tlasa::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
