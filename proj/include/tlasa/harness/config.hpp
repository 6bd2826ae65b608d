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

// Flat key=value experiment configuration. Every key has a documented
// default; files and --key=value flags may only set known keys.

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tlasa/cknna/cknna.hpp"
#include "tlasa/fm_core/flow.hpp"
#include "tlasa/numcore/optim.hpp"
#include "tlasa/numcore/sha256.hpp"
#include "tlasa/spk_encoder/encoder.hpp"
#include "tlasa/synthvoice/batch.hpp"
#include "tlasa/tla_sa/tla_sa.hpp"

namespace tlasa::harness {

// Round-trip exact decimal form.
inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct ConfigEntry {
  const char* key;
  const char* value;
  const char* help;
};

inline const std::vector<ConfigEntry>& config_schema() {
  static const std::vector<ConfigEntry> schema = {
      {"data.seed", "1234", "dataset seed"},
      {"data.total_speakers", "237", "speakers in total (training = total - test)"},
      {"data.test_speakers", "37", "unseen test speakers"},
      {"data.test_utterances", "500", "test utterances"},
      {"data.train_utts_per_speaker", "20", "training utterances per speaker"},
      {"data.heldout_utts_per_speaker", "5", "held-out utterances per training speaker"},
      {"data.feat_dim", "24", "frame feature dimension"},
      {"data.id_dim", "16", "speaker latent dimension"},
      {"data.vocab", "32", "content vocabulary size"},
      {"data.token_dim", "8", "content token embedding dimension"},
      {"data.frames_per_token", "4", "frames per content token"},
      {"data.min_tokens", "8", "minimum tokens per utterance"},
      {"data.max_tokens", "24", "maximum tokens per utterance"},
      {"data.noise", "0.1", "per-frame noise scale"},
      {"data.min_angle_deg", "5", "minimum angle between speaker latents"},
      {"data.dir", "", "dataset directory (empty: generate in memory)"},

      {"encoder.seed_a", "101", "seed of the supervising encoder"},
      {"encoder.seed_b", "202", "seed of the evaluation-only encoder"},
      {"encoder.hidden", "64", "encoder hidden width"},
      {"encoder.embed_dim", "32", "speaker embedding dimension"},
      {"encoder.epochs", "30", "pre-training epochs"},
      {"encoder.batch", "64", "pre-training batch size"},
      {"encoder.lr", "0.003", "pre-training learning rate"},
      {"encoder.logit_scale", "16", "cosine-softmax logit scale"},
      {"encoder.path_a", "", "supervising encoder checkpoint (empty: train)"},
      {"encoder.path_b", "", "evaluation encoder checkpoint (empty: train)"},

      {"model.layers", "12", "supervised residual blocks"},
      {"model.hidden", "64", "trunk width"},
      {"model.time_dim", "64", "sinusoidal time embedding size"},
      {"model.time_freq_max", "100", "highest time embedding frequency (rad)"},
      {"model.window_mixing", "true", "window averaging inside blocks"},
      {"model.mix_radius", "2", "window averaging radius in frames"},
      {"model.sandwich", "false", "add 2+2 untapped blocks"},

      {"loss.mode", "layer_time", "baseline | layer_only | layer_time"},
      {"loss.lambda", "0.5", "weight of the alignment loss"},
      {"loss.alpha", "0.01", "entropy regulariser weight"},
      {"loss.distance", "cosine", "cosine | l2"},
      {"loss.esa_source", "prompt", "prompt | target audio for the encoder embedding"},
      {"loss.adapter_hidden", "64", "layer adapter hidden width"},
      {"loss.time_hidden", "64", "time adapter hidden width"},
      {"loss.time_zero_init", "false", "zero-initialise the time adapter output layer"},

      {"mask.lo", "0.3", "lowest masked fraction"},
      {"mask.hi", "0.9", "highest masked fraction"},

      {"optim.lr", "0.0003", "peak learning rate"},
      {"optim.lr_min", "0.00003", "final learning rate"},
      {"optim.warmup", "200", "warm-up steps"},
      {"optim.beta1", "0.9", "AdamW beta1"},
      {"optim.beta2", "0.999", "AdamW beta2"},
      {"optim.eps", "1e-8", "AdamW epsilon"},
      {"optim.weight_decay", "0.01", "decoupled weight decay"},

      {"train.seed", "1", "run seed (data order, init, noise)"},
      {"train.steps", "8000", "optimizer steps"},
      {"train.batch", "16", "utterances per step"},
      {"train.eval_every", "500", "evaluation cadence in steps (0: final only)"},
      {"train.heatmap_every", "1000", "weight heatmap cadence in steps (0: first/last only)"},

      {"eval.utterances", "500", "test utterances generated per evaluation"},
      {"eval.batch", "50", "generation batch size"},
      {"eval.ode_steps", "32", "Euler steps"},
      {"eval.reimpose_each_step", "true", "hold prompt frames after every step"},
      {"eval.seed", "7", "evaluation masks and noise"},
      {"eval.cknna_k", "10", "CKNNA neighbour count"},
      {"eval.cknna_normalize", "true", "unit-normalise rows before CKNNA"},
      {"eval.t_fixed", "0.5", "denoising time for layer sweeps"},
      {"eval.layer_fixed", "5", "layer for timestep sweeps"},
      {"eval.t_points", "16", "timestep sweep grid size"},
      {"eval.sim_threshold", "0.9", "similarity threshold for steps-to-threshold"},
  };
  return schema;
}

class FlatConfig {
 public:
  static FlatConfig defaults() {
    FlatConfig c;
    for (const auto& e : config_schema()) c.values_[e.key] = e.value;
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
  }

  std::uint64_t u64(const std::string& key) const {
    const auto& s = str(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
    }
    return v;
  }

  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
  }

  // "key = value" lines; '#' starts a comment.
  void merge_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    merge_text(ss.str());
  }

  // Accepts "--key=value" or "key=value".
  void merge_override(std::string arg) {
    if (arg.rfind("--", 0) == 0) arg.erase(0, 2);
    const auto eq = arg.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + arg + "' must look like --key=value");
    set(arg.substr(0, eq), arg.substr(eq + 1));
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  std::string hash() const { return sha256_hex(to_text()); }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

enum class EsaSource { kPrompt, kTarget };

struct TrainSettings {
  std::uint64_t seed = 1;
  std::size_t steps = 8000;
  std::size_t batch = 16;
  std::size_t eval_every = 500;
  std::size_t heatmap_every = 1000;
};

struct EvalSettings {
  std::size_t utterances = 500;
  std::size_t batch = 50;
  fm::OdeOptions ode;
  std::uint64_t seed = 7;
  cknna::CknnaConfig cknna;
  double t_fixed = 0.5;
  std::size_t layer_fixed = 5;
  std::size_t t_points = 16;
  double sim_threshold = 0.9;
};

// Typed view of a FlatConfig with cross-module dimensions tied together.
struct ExperimentConfig {
  FlatConfig flat;
  synth::SynthConfig data;
  std::string data_dir;
  spk::EncoderConfig encoder;
  std::uint64_t encoder_seed_a = 101, encoder_seed_b = 202;
  std::string encoder_path_a, encoder_path_b;
  fm::FieldConfig model;
  tla::TlaConfig tla;
  EsaSource esa_source = EsaSource::kPrompt;
  synth::MaskRange mask;
  num::AdamWConfig adamw;
  num::CosineSchedule schedule;
  TrainSettings train;
  EvalSettings eval;

  static ExperimentConfig from(FlatConfig flat) {
    ExperimentConfig c;
    auto& f = flat;
    c.data.seed = f.u64("data.seed");
    const std::size_t total_speakers = f.size("data.total_speakers");
    c.data.test_speakers = f.size("data.test_speakers");
    if (c.data.test_speakers > total_speakers) {
      throw ConfigError("data.test_speakers (" + std::to_string(c.data.test_speakers) + ") exceeds data.total_speakers (" +
                        std::to_string(total_speakers) + ")");
    }
    c.data.train_speakers = total_speakers - c.data.test_speakers;
    c.data.test_utterances = f.size("data.test_utterances");
    c.data.train_utts_per_speaker = f.size("data.train_utts_per_speaker");
    c.data.heldout_utts_per_speaker = f.size("data.heldout_utts_per_speaker");
    c.data.feat_dim = f.size("data.feat_dim");
    c.data.id_dim = f.size("data.id_dim");
    c.data.vocab = f.size("data.vocab");
    c.data.token_dim = f.size("data.token_dim");
    c.data.frames_per_token = f.size("data.frames_per_token");
    c.data.min_tokens = f.size("data.min_tokens");
    c.data.max_tokens = f.size("data.max_tokens");
    c.data.noise_scale = f.real("data.noise");
    c.data.min_angle_deg = f.real("data.min_angle_deg");
    c.data.validate();
    c.data_dir = f.str("data.dir");

    c.encoder.feat_dim = c.data.feat_dim;
    c.encoder.hidden = f.size("encoder.hidden");
    c.encoder.embed_dim = f.size("encoder.embed_dim");
    c.encoder.epochs = f.size("encoder.epochs");
    c.encoder.batch = f.size("encoder.batch");
    c.encoder.lr = f.real("encoder.lr");
    c.encoder.logit_scale = f.real("encoder.logit_scale");
    c.encoder_seed_a = f.u64("encoder.seed_a");
    c.encoder_seed_b = f.u64("encoder.seed_b");
    c.encoder_path_a = f.str("encoder.path_a");
    c.encoder_path_b = f.str("encoder.path_b");

    c.model.feat_dim = c.data.feat_dim;
    c.model.hidden = f.size("model.hidden");
    c.model.layers = f.size("model.layers");
    c.model.cond_dim = c.encoder.embed_dim;
    c.model.vocab = c.data.vocab;
    c.model.frames_per_token = c.data.frames_per_token;
    c.model.time_dim = f.size("model.time_dim");
    c.model.time_freq_max = f.real("model.time_freq_max");
    c.model.window_mixing = f.flag("model.window_mixing");
    c.model.mix_radius = f.size("model.mix_radius");
    c.model.sandwich = f.flag("model.sandwich");
    c.model.validate();

    c.tla.layers = c.model.layers;
    c.tla.tap_dim = c.model.hidden;
    c.tla.embed_dim = c.encoder.embed_dim;
    c.tla.adapter_hidden = f.size("loss.adapter_hidden");
    c.tla.time_dim = c.model.time_dim;
    c.tla.time_hidden = f.size("loss.time_hidden");
    c.tla.time_freq_max = c.model.time_freq_max;
    c.tla.zero_init_time_output = f.flag("loss.time_zero_init");
    c.tla.alpha = f.real("loss.alpha");
    c.tla.mode = tla::parse_mode(f.str("loss.mode"));
    c.tla.distance = tla::parse_distance(f.str("loss.distance"));
    if (c.tla.mode == tla::Mode::kBaseline) f.set("loss.lambda", "0");
    c.tla.lambda = f.real("loss.lambda");
    c.tla.validate();
    const auto& src = f.str("loss.esa_source");
    if (src == "prompt") c.esa_source = EsaSource::kPrompt;
    else if (src == "target") c.esa_source = EsaSource::kTarget;
    else throw ConfigError("loss.esa_source must be prompt or target, got '" + src + "'");

    c.mask.lo = f.real("mask.lo");
    c.mask.hi = f.real("mask.hi");
    c.mask.validate();

    c.adamw.beta1 = f.real("optim.beta1");
    c.adamw.beta2 = f.real("optim.beta2");
    c.adamw.eps = f.real("optim.eps");
    c.adamw.weight_decay = f.real("optim.weight_decay");
    c.schedule.lr_max = f.real("optim.lr");
    c.schedule.lr_min = f.real("optim.lr_min");
    c.schedule.warmup = static_cast<long>(f.u64("optim.warmup"));

    c.train.seed = f.u64("train.seed");
    c.train.steps = f.size("train.steps");
    c.train.batch = f.size("train.batch");
    c.train.eval_every = f.size("train.eval_every");
    c.train.heatmap_every = f.size("train.heatmap_every");
    if (c.train.batch == 0) throw ConfigError("train.batch must be >= 1");
    c.schedule.total_steps = static_cast<long>(c.train.steps);

    c.eval.utterances = f.size("eval.utterances");
    c.eval.batch = f.size("eval.batch");
    c.eval.ode.steps = f.size("eval.ode_steps");
    c.eval.ode.reimpose_each_step = f.flag("eval.reimpose_each_step");
    c.eval.seed = f.u64("eval.seed");
    c.eval.cknna.k = f.size("eval.cknna_k");
    c.eval.cknna.normalize_rows = f.flag("eval.cknna_normalize");
    c.eval.t_fixed = f.real("eval.t_fixed");
    c.eval.layer_fixed = f.size("eval.layer_fixed");
    c.eval.t_points = f.size("eval.t_points");
    c.eval.sim_threshold = f.real("eval.sim_threshold");
    if (c.eval.utterances == 0 || c.eval.utterances > c.data.test_utterances) {
      throw ConfigError("eval.utterances must be in [1, data.test_utterances]");
    }
    if (c.eval.batch == 0) throw ConfigError("eval.batch must be >= 1");
    if (c.eval.ode.steps == 0) throw ConfigError("eval.ode_steps must be >= 1");
    if (c.eval.layer_fixed >= c.model.layers) throw ConfigError("eval.layer_fixed must be < model.layers");
    if (!(c.eval.t_fixed >= 0 && c.eval.t_fixed <= 1)) throw ConfigError("eval.t_fixed must be in [0,1]");
    c.flat = std::move(flat);
    return c;
  }
};

}  // namespace tlasa::harness
