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

#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "tlasa/harness/evaluate.hpp"
#include "tlasa/harness/trainer.hpp"

namespace tlasa::harness {

struct Encoders {
  spk::SpeakerEncoder a, b;
};

struct EvalRow {
  std::size_t step = 0;
  double sim_a = 0, sim_b = 0, cknna_mean = 0;
  std::string checkpoint_hash;
};

struct HeatmapSnapshot {
  std::size_t step = 0;
  std::vector<double> grid;  // 64 x N
};

struct RunResult {
  std::vector<LossRow> losses;
  std::vector<double> wall_ms;
  std::vector<EvalRow> evals;
  std::vector<HeatmapSnapshot> heatmaps;
  std::vector<double> heatmap_uniform;
  std::optional<std::size_t> steps_to_threshold;
  std::vector<cknna::SweepPoint> final_layer_sweep, final_timestep_sweep;
  std::string config_hash, dataset_hash, encoder_a_hash, encoder_b_hash;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool evaluate = true;
  bool final_sweeps = true;
  bool eval_initial = true;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

inline std::string step_name(const char* prefix, std::size_t step, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%06zu%s", prefix, step, suffix);
  return buf;
}

inline std::string loss_csv(const std::vector<LossRow>& rows) {
  std::string out = "step,cfm,tla_sa,total\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + fmt_real(r.cfm) + "," + fmt_real(r.tla_sa) + "," + fmt_real(r.total) + "\n";
  return out;
}

inline std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = "step,sim_encoder_A,sim_encoder_B,cknna_mean,checkpoint_hash\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + fmt_real(r.sim_a) + "," + fmt_real(r.sim_b) + "," + fmt_real(r.cknna_mean) +
           "," + r.checkpoint_hash + "\n";
  return out;
}

inline std::string sweep_csv(const std::vector<cknna::SweepPoint>& pts, std::size_t k, std::size_t B,
                             const std::string& checkpoint_hash) {
  std::string out = "axis_value,score,k,B,checkpoint_hash\n";
  for (const auto& p : pts)
    out += fmt_real(p.axis_value) + "," + fmt_real(p.score) + "," + std::to_string(k) + "," + std::to_string(B) + "," +
           checkpoint_hash + "\n";
  return out;
}

inline void check_encoder(const spk::SpeakerEncoder& enc, const std::string& expected, const char* which) {
  if (enc.hash() != expected) {
    throw IntegrityError(std::string("encoder ") + which + " parameters changed during training");
  }
}

// Trains one run. Evaluates at step 0, every eval_every steps and at the end;
// snapshots the time-weight heatmap on its own cadence.
inline RunResult run_training(const ExperimentConfig& cfg, const synth::Dataset& ds, const std::string& dataset_hash,
                              const Encoders& enc, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  RunResult res;
  res.config_hash = cfg.flat.hash();
  res.dataset_hash = dataset_hash;
  res.encoder_a_hash = enc.a.hash();
  res.encoder_b_hash = enc.b.hash();

  const bool files = !opt.out_dir.empty();
  if (files) {
    fs::create_directories(opt.out_dir / "checkpoints");
    fs::create_directories(opt.out_dir / "heatmaps");
    write_text(opt.out_dir / "config.txt", cfg.flat.to_text());
  }

  Trainer trainer(cfg, ds, enc.a);
  std::optional<EvalSet> es;
  if (opt.evaluate) es = build_eval_set(cfg, ds, enc.a, enc.b);

  auto snapshot_heatmap = [&](std::size_t step) {
    res.heatmaps.push_back({step, weight_heatmap(trainer.head())});
    if (files) {
      write_text(opt.out_dir / "heatmaps" / step_name("heatmap_step_", step, ".csv"),
                 heatmap_csv(res.heatmaps.back().grid, cfg.tla.layers));
    }
  };
  auto evaluate = [&](std::size_t step) {
    EvalRow row;
    row.step = step;
    row.checkpoint_hash = trainer.checkpoint_hash();
    if (es) {
      auto sim = generation_similarity(trainer.net(), *es, enc.a, enc.b, cfg.eval.ode);
      row.sim_a = sim.sim_a;
      row.sim_b = sim.sim_b;
      row.cknna_mean = cknna_summary(trainer.net(), *es, cfg.eval).mean;
      if (!res.steps_to_threshold && row.sim_a >= cfg.eval.sim_threshold) res.steps_to_threshold = step;
    }
    if (files) {
      auto j = trainer.checkpoint_json();
      write_text(opt.out_dir / "checkpoints" / step_name("step_", step, ".json"), j.dump() + "\n");
    }
    check_encoder(enc.a, res.encoder_a_hash, "A");
    check_encoder(enc.b, res.encoder_b_hash, "B");
    res.evals.push_back(std::move(row));
  };

  res.heatmap_uniform = weight_heatmap(trainer.head(), /*uniform=*/true);
  if (files) {
    write_text(opt.out_dir / "heatmaps" / "heatmap_step_000000_uniform.csv",
               heatmap_csv(res.heatmap_uniform, cfg.tla.layers));
  }
  snapshot_heatmap(0);
  if (opt.eval_initial || cfg.train.steps == 0) evaluate(0);

  const std::size_t total = cfg.train.steps;
  for (std::size_t s = 0; s < total; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    res.losses.push_back(trainer.step());
    res.wall_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    const std::size_t done = s + 1;
    const bool last = done == total;
    if (last || (cfg.train.eval_every && done % cfg.train.eval_every == 0)) evaluate(done);
    if (last || (cfg.train.heatmap_every && done % cfg.train.heatmap_every == 0)) snapshot_heatmap(done);
  }

  if (es && opt.final_sweeps) {
    res.final_layer_sweep = cknna_summary(trainer.net(), *es, cfg.eval).layers;
    res.final_timestep_sweep = timestep_curve(trainer.net(), *es, cfg.eval);
  }
  check_encoder(enc.a, res.encoder_a_hash, "A");
  check_encoder(enc.b, res.encoder_b_hash, "B");

  if (files) {
    write_text(opt.out_dir / "loss.csv", loss_csv(res.losses));
    std::string timing = "step,wall_ms\n";
    for (std::size_t i = 0; i < res.wall_ms.size(); ++i) timing += std::to_string(i) + "," + fmt_real(res.wall_ms[i]) + "\n";
    write_text(opt.out_dir / "timing.csv", timing);
    write_text(opt.out_dir / "eval.csv", eval_csv(res.evals));
    const std::string final_hash = res.evals.back().checkpoint_hash;
    const std::size_t B = es ? es->items : 0;
    if (!res.final_layer_sweep.empty()) {
      write_text(opt.out_dir / "layer_sweep.csv", sweep_csv(res.final_layer_sweep, cfg.eval.cknna.k, B, final_hash));
      write_text(opt.out_dir / "timestep_sweep.csv",
                 sweep_csv(res.final_timestep_sweep, cfg.eval.cknna.k, B, final_hash));
    }
    const auto& fin = res.evals.back();
    nlohmann::json report{
        {"mode", tla::mode_name(cfg.tla.mode)},
        {"seed", cfg.train.seed},
        {"steps", cfg.train.steps},
        {"lambda", cfg.tla.lambda},
        {"alpha", cfg.tla.alpha},
        {"config_hash", res.config_hash},
        {"dataset_hash", res.dataset_hash},
        {"encoder_a_hash", res.encoder_a_hash},
        {"encoder_b_hash", res.encoder_b_hash},
        {"final", {{"step", fin.step}, {"sim_encoder_A", fin.sim_a}, {"sim_encoder_B", fin.sim_b},
                   {"cknna_mean", fin.cknna_mean}, {"checkpoint_hash", fin.checkpoint_hash}}},
        {"eval_utterances", B},
        {"cknna", {{"k", cfg.eval.cknna.k}, {"t_fixed", cfg.eval.t_fixed}, {"layer_fixed", cfg.eval.layer_fixed}}},
        {"sim_threshold", cfg.eval.sim_threshold},
        {"steps_to_threshold", res.steps_to_threshold ? nlohmann::json(*res.steps_to_threshold) : nlohmann::json()},
        {"heatmap_tv_final_vs_step0", heatmap_tv(res.heatmaps.front().grid, res.heatmaps.back().grid, cfg.tla.layers)},
        {"schedule", {{"lr", cfg.schedule.lr_max}, {"lr_min", cfg.schedule.lr_min}, {"warmup", cfg.schedule.warmup},
                      {"note", "desk-scale learning rates and step budget"}}}};
    write_text(opt.out_dir / "report.json", report.dump(2) + "\n");
  }
  return res;
}

}  // namespace tlasa::harness
