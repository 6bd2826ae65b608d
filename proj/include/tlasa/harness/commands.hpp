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

// Subcommand bodies shared by the CLI and the acceptance suite.

#pragma once

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tlasa/harness/run.hpp"
#include "tlasa/synthvoice/manifest.hpp"

namespace tlasa::harness {

namespace fs = std::filesystem;

struct DatasetHandle {
  synth::Dataset dataset;
  std::string hash;
};

inline DatasetHandle cmd_gen_data(const ExperimentConfig& cfg, const fs::path& out_dir) {
  DatasetHandle h{synth::generate_dataset(cfg.data), {}};
  h.hash = synth::write_dataset(out_dir, h.dataset);
  write_text(out_dir / "config.txt", cfg.flat.to_text());
  return h;
}

// From data.dir when set (its generating config must match), else in memory.
inline DatasetHandle load_or_generate(const ExperimentConfig& cfg) {
  if (cfg.data_dir.empty()) {
    DatasetHandle h{synth::generate_dataset(cfg.data), {}};
    h.hash = synth::dataset_hash(h.dataset);
    return h;
  }
  auto loaded = synth::read_dataset(cfg.data_dir);
  if (synth::to_json(loaded.dataset.config) != synth::to_json(cfg.data)) {
    throw IntegrityError("dataset in " + cfg.data_dir + " was generated with a different data config");
  }
  return {std::move(loaded.dataset), loaded.hash};
}

struct EncoderReport {
  Encoders encoders;
  double accuracy_a = -1, accuracy_b = -1;  // -1 when loaded from disk
};

inline EncoderReport train_encoders(const ExperimentConfig& cfg, const synth::Dataset& ds) {
  auto a = spk::pretrain_encoder(ds.train, ds.heldout, cfg.encoder, cfg.encoder_seed_a);
  auto b = spk::pretrain_encoder(ds.train, ds.heldout, cfg.encoder, cfg.encoder_seed_b);
  return {{std::move(a.model), std::move(b.model)}, a.heldout_accuracy, b.heldout_accuracy};
}

inline EncoderReport cmd_train_encoder(const ExperimentConfig& cfg, const synth::Dataset& ds, const fs::path& out_dir) {
  auto rep = train_encoders(cfg, ds);
  fs::create_directories(out_dir);
  rep.encoders.a.save(out_dir / "encoder_a.json");
  rep.encoders.b.save(out_dir / "encoder_b.json");
  nlohmann::json j{{"encoder_a", {{"seed", cfg.encoder_seed_a}, {"hash", rep.encoders.a.hash()}, {"heldout_accuracy", rep.accuracy_a}}},
                   {"encoder_b", {{"seed", cfg.encoder_seed_b}, {"hash", rep.encoders.b.hash()}, {"heldout_accuracy", rep.accuracy_b}}}};
  write_text(out_dir / "encoders.json", j.dump(2) + "\n");
  return rep;
}

inline EncoderReport load_or_train_encoders(const ExperimentConfig& cfg, const synth::Dataset& ds) {
  if (cfg.encoder_path_a.empty() != cfg.encoder_path_b.empty()) {
    throw ConfigError("encoder.path_a and encoder.path_b must be set together");
  }
  if (cfg.encoder_path_a.empty()) return train_encoders(cfg, ds);
  EncoderReport rep{{spk::SpeakerEncoder::load(cfg.encoder_path_a), spk::SpeakerEncoder::load(cfg.encoder_path_b)}};
  if (!rep.encoders.a.frozen() || !rep.encoders.b.frozen()) throw IntegrityError("encoder checkpoints must be frozen");
  return rep;
}

inline RunResult cmd_train(const ExperimentConfig& cfg, const fs::path& out_dir) {
  auto data = load_or_generate(cfg);
  auto enc = load_or_train_encoders(cfg, data.dataset);
  return run_training(cfg, data.dataset, data.hash, enc.encoders, {out_dir, true, true});
}

inline nlohmann::json read_json(const fs::path& path) {
  const auto text = synth::read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

// Config a checkpoint was trained with, with evaluation settings, encoder
// paths and the dataset directory taken from `overrides`.
using Overrides = std::map<std::string, std::string>;

inline ExperimentConfig config_of_checkpoint(const nlohmann::json& ckpt, const Overrides& overrides) {
  auto flat = FlatConfig::defaults();
  flat.merge_text(ckpt.at("config").get<std::string>());
  for (const auto& [k, v] : overrides) {
    const bool eval_side = k.rfind("eval.", 0) == 0 || k.rfind("encoder.path", 0) == 0 || k == "data.dir";
    if (!eval_side) throw ConfigError("'" + k + "' is fixed by the checkpoint; only eval.*, encoder.path_* and data.dir apply");
    flat.set(k, v);
  }
  return ExperimentConfig::from(flat);
}

struct SampleResult {
  double sim_a = 0, sim_b = 0;
  std::size_t items = 0;
};

// Generates the evaluation utterances from a checkpoint and writes them as
// JSON lines (speaker, prompt/generated frame counts, generated frames).
inline SampleResult cmd_sample(const fs::path& checkpoint, const Overrides& overrides, const fs::path& out_file) {
  auto ckpt = read_json(checkpoint);
  auto cfg = config_of_checkpoint(ckpt, overrides);
  auto data = load_or_generate(cfg);
  auto enc = load_or_train_encoders(cfg, data.dataset);
  Trainer trainer(cfg, data.dataset, enc.encoders.a);
  trainer.load_checkpoint(ckpt);
  auto es = build_eval_set(cfg, data.dataset, enc.encoders.a, enc.encoders.b);

  std::ofstream os(out_file, std::ios::binary);
  if (!os) throw IoError("cannot write " + out_file.string());
  num::NoGradGuard guard;
  double sa = 0, sb = 0;
  std::size_t index = 0;
  for (std::size_t c = 0; c < es.chunks.size(); ++c) {
    const auto& batch = es.chunks[c];
    auto req = fm::request_from_batch(batch);
    auto gen = fm::generated_frames(fm::ode_sample(trainer.net(), req, es.sample_seeds[c], cfg.eval.ode), req);
    auto prompts = synth::select_frames(batch.x1, batch.mask, batch.valid_len, false);
    auto ea = enc.encoders.a.embed(gen), pa = enc.encoders.a.embed(prompts);
    auto eb = enc.encoders.b.embed(gen), pb = enc.encoders.b.embed(prompts);
    auto ca = num::cosine_similarity(ea, pa), cb = num::cosine_similarity(eb, pb);
    for (std::size_t b = 0; b < gen.size(); ++b, ++index) {
      nlohmann::json line{{"index", index},
                          {"speaker_id", batch.speaker_ids[b]},
                          {"prompt_frames", prompts[b].frames},
                          {"generated_frames", gen[b].frames},
                          {"sim_encoder_A", ca[b]},
                          {"sim_encoder_B", cb[b]},
                          {"features", gen[b].values}};
      os << line.dump() << '\n';
      sa += ca[b];
      sb += cb[b];
    }
  }
  return {sa / static_cast<double>(index), sb / static_cast<double>(index), index};
}

struct CorrelationRow {
  std::size_t step = 0;
  std::string checkpoint_hash;
  double similarity = 0, cknna_mean = 0;
};

struct AnalysisResult {
  std::vector<CorrelationRow> rows;
  double pearson = 0, spearman = 0;
  std::vector<cknna::SweepPoint> layer_sweep, timestep_sweep;
  double heatmap_tv = 0;
};

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::istringstream is(synth::read_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Correlates generation similarity with mean CKNNA over every evaluated
// checkpoint of a run, and sweeps layers/timesteps on the final one.
inline AnalysisResult cmd_analyze(const fs::path& run_dir, const Overrides& overrides_flat = {}) {
  const auto eval_rows = read_csv(run_dir / "eval.csv");
  std::vector<fs::path> missing;
  for (const auto& r : eval_rows) {
    auto p = run_dir / "checkpoints" / step_name("step_", std::stoul(r.at(0)), ".json");
    if (!fs::exists(p)) missing.push_back(p);
  }
  if (eval_rows.empty()) throw IoError("no evaluated checkpoints listed in " + (run_dir / "eval.csv").string());
  if (!missing.empty()) {
    std::string list;
    for (const auto& p : missing) list += "\n  " + p.string();
    throw IoError("missing checkpoints:" + list);
  }

  auto final_ckpt = read_json(run_dir / "checkpoints" / step_name("step_", std::stoul(eval_rows.back().at(0)), ".json"));
  auto cfg = config_of_checkpoint(final_ckpt, overrides_flat);
  auto data = load_or_generate(cfg);
  auto enc = load_or_train_encoders(cfg, data.dataset);
  auto es = build_eval_set(cfg, data.dataset, enc.encoders.a, enc.encoders.b);

  AnalysisResult res;
  Trainer trainer(cfg, data.dataset, enc.encoders.a);
  for (const auto& r : eval_rows) {
    CorrelationRow row;
    row.step = std::stoul(r.at(0));
    trainer.load_checkpoint(read_json(run_dir / "checkpoints" / step_name("step_", row.step, ".json")));
    row.checkpoint_hash = trainer.checkpoint_hash();
    row.similarity = std::stod(r.at(1));
    row.cknna_mean = cknna_summary(trainer.net(), es, cfg.eval).mean;
    res.rows.push_back(row);
  }
  std::vector<double> sim, ck;
  for (const auto& r : res.rows) {
    sim.push_back(r.similarity);
    ck.push_back(r.cknna_mean);
  }
  if (res.rows.size() >= 2) {
    res.pearson = cknna::pearson(sim, ck);
    res.spearman = cknna::spearman(sim, ck);
  }
  res.layer_sweep = cknna_summary(trainer.net(), es, cfg.eval).layers;
  res.timestep_sweep = timestep_curve(trainer.net(), es, cfg.eval);

  const auto out = run_dir / "analysis";
  fs::create_directories(out);
  const auto& final_hash = res.rows.back().checkpoint_hash;
  write_text(out / "layer_sweep.csv", sweep_csv(res.layer_sweep, cfg.eval.cknna.k, es.items, final_hash));
  write_text(out / "timestep_sweep.csv", sweep_csv(res.timestep_sweep, cfg.eval.cknna.k, es.items, final_hash));
  std::string corr = "step,checkpoint_hash,similarity,cknna_mean\n";
  for (const auto& r : res.rows)
    corr += std::to_string(r.step) + "," + r.checkpoint_hash + "," + fmt_real(r.similarity) + "," + fmt_real(r.cknna_mean) + "\n";
  write_text(out / "correlation.csv", corr);
  nlohmann::json summary{{"checkpoints", res.rows.size()},
                         {"pearson", res.pearson},
                         {"spearman", res.spearman},
                         {"cknna_k", cfg.eval.cknna.k},
                         {"t_fixed", cfg.eval.t_fixed},
                         {"layer_fixed", cfg.eval.layer_fixed}};

  // Heatmaps: first and last snapshot of the run.
  std::vector<fs::path> maps;
  if (fs::exists(run_dir / "heatmaps"))
    for (const auto& e : fs::directory_iterator(run_dir / "heatmaps")) {
      const auto name = e.path().filename().string();
      if (name.rfind("heatmap_step_", 0) == 0 && name.find("uniform") == std::string::npos) maps.push_back(e.path());
    }
  std::sort(maps.begin(), maps.end());
  if (maps.size() >= 2) {
    auto grid_of = [](const fs::path& p) {
      std::vector<double> g;
      for (const auto& r : read_csv(p)) g.push_back(std::stod(r.at(2)));
      return g;
    };
    auto first = grid_of(maps.front()), last = grid_of(maps.back());
    res.heatmap_tv = heatmap_tv(first, last, cfg.tla.layers);
    fs::copy_file(maps.front(), out / "heatmap_first.csv", fs::copy_options::overwrite_existing);
    fs::copy_file(maps.back(), out / "heatmap_last.csv", fs::copy_options::overwrite_existing);
    summary["heatmap_tv_last_vs_first"] = res.heatmap_tv;
  }
  write_text(out / "correlation.json", summary.dump(2) + "\n");
  return res;
}

struct Stats {
  double mean = 0, std = 0;
  std::size_t n = 0;
};

inline Stats stats_of(const std::vector<double>& v) {
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

// One-sided paired t-test of mean(a - b) > 0. Returns p = 1 for fewer than
// two pairs or zero spread with non-positive mean.
inline double paired_t_pvalue(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("paired test: series lengths differ");
  if (a.size() < 2) return 1.0;
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const auto s = stats_of(d);
  if (s.std == 0) return s.mean > 0 ? 0.0 : 1.0;
  const double t = s.mean / (s.std / std::sqrt(static_cast<double>(d.size())));
  boost::math::students_t dist(static_cast<double>(d.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, t));
}

struct ModeRow {
  std::string mode;
  Stats sim_a, sim_b;
  std::vector<std::uint64_t> seeds;
  std::vector<double> a, b;
};

struct ComparisonReport {
  std::vector<ModeRow> rows;
  std::string markdown, csv;
};

inline ComparisonReport cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: need at least one run directory");
  std::map<std::string, ModeRow> by_mode;
  std::string dataset_hash;
  for (const auto& dir : run_dirs) {
    auto rep = read_json(dir / "report.json");
    const auto h = rep.at("dataset_hash").get<std::string>();
    if (dataset_hash.empty()) dataset_hash = h;
    if (h != dataset_hash) throw IntegrityError("report: run " + dir.string() + " used a different dataset (" + h + ")");
    auto& row = by_mode[rep.at("mode").get<std::string>()];
    row.mode = rep.at("mode").get<std::string>();
    row.seeds.push_back(rep.at("seed").get<std::uint64_t>());
    row.a.push_back(rep.at("final").at("sim_encoder_A").get<double>());
    row.b.push_back(rep.at("final").at("sim_encoder_B").get<double>());
  }
  ComparisonReport out;
  const char* order[] = {"baseline", "layer_only", "layer_time"};
  for (const char* m : order) {
    auto it = by_mode.find(m);
    if (it == by_mode.end()) continue;
    it->second.sim_a = stats_of(it->second.a);
    it->second.sim_b = stats_of(it->second.b);
    out.rows.push_back(it->second);
  }
  auto pm = [](const Stats& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f ± %.4f", s.mean, s.std);
    return std::string(buf);
  };
  auto pv = [](double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", p);
    return std::string(buf);
  };
  out.csv = "mode,runs,sim_encoder_A_mean,sim_encoder_A_std,sim_encoder_B_mean,sim_encoder_B_std\n";
  out.markdown = "| Mode | Layer | Time | Runs | Sim (encoder A) | Sim (encoder B) |\n|---|---|---|---|---|---|\n";
  for (const auto& r : out.rows) {
    const bool layer = r.mode != "baseline", time = r.mode == "layer_time";
    out.csv += r.mode + "," + std::to_string(r.sim_a.n) + "," + fmt_real(r.sim_a.mean) + "," + fmt_real(r.sim_a.std) + "," +
               fmt_real(r.sim_b.mean) + "," + fmt_real(r.sim_b.std) + "\n";
    out.markdown += "| " + r.mode + " | " + (layer ? "yes" : "no") + " | " + (time ? "yes" : "no") + " | " +
                    std::to_string(r.sim_a.n) + " | " + pm(r.sim_a) + " | " + pm(r.sim_b) + " |\n";
  }
  // Paired comparison against the baseline over shared seeds.
  auto base = by_mode.find("baseline");
  if (base != by_mode.end()) {
    for (const char* m : {"layer_only", "layer_time"}) {
      auto it = by_mode.find(m);
      if (it == by_mode.end()) continue;
      std::vector<double> xa, xb, ya, yb;
      for (std::size_t i = 0; i < it->second.seeds.size(); ++i) {
        auto s = std::find(base->second.seeds.begin(), base->second.seeds.end(), it->second.seeds[i]);
        if (s == base->second.seeds.end()) continue;
        const auto j = static_cast<std::size_t>(s - base->second.seeds.begin());
        xa.push_back(it->second.a[i]);
        ya.push_back(base->second.a[j]);
        xb.push_back(it->second.b[i]);
        yb.push_back(base->second.b[j]);
      }
      if (xa.size() >= 2) {
        out.markdown += "\n" + std::string(m) + " vs baseline over " + std::to_string(xa.size()) +
                        " paired seeds: one-sided p (encoder A) = " + pv(paired_t_pvalue(xa, ya)) +
                        ", p (encoder B) = " + pv(paired_t_pvalue(xb, yb)) + "\n";
      }
    }
  }
  out.markdown += "\nDataset hash: " + dataset_hash + "\n";
  fs::create_directories(out_dir);
  write_text(out_dir / "report.md", out.markdown);
  write_text(out_dir / "report.csv", out.csv);
  return out;
}

}  // namespace tlasa::harness
