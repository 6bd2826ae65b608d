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

// Synthetic identity-conditioned sequences. A dataset is a pure function of
// its SynthConfig: every utterance draws from its own keyed random stream, so
// items can be produced in any order (or concurrently) with identical bytes.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tlasa/numcore/random.hpp"

namespace tlasa::synth {

// A T x D real sequence, row-major.
struct FeatureSeq {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t d) const { return values[t * dim + d]; }
  std::span<const double> frame(std::size_t t) const { return {values.data() + t * dim, dim}; }
};

struct SynthConfig {
  std::uint64_t seed = 1234;
  std::size_t train_speakers = 200;
  std::size_t test_speakers = 37;
  std::size_t test_utterances = 500;
  std::size_t train_utts_per_speaker = 20;
  std::size_t heldout_utts_per_speaker = 5;
  std::size_t feat_dim = 24;
  std::size_t id_dim = 16;
  std::size_t vocab = 32;
  std::size_t token_dim = 8;
  std::size_t frames_per_token = 4;
  std::size_t min_tokens = 8;
  std::size_t max_tokens = 24;
  double noise_scale = 0.1;
  double min_angle_deg = 5.0;

  void validate() const {
    if (train_speakers < 2) throw ConfigError("synth: need at least 2 training speakers");
    if (test_speakers < 1) throw ConfigError("synth: need at least 1 test speaker");
    if (id_dim < 2) throw ConfigError("synth: id_dim must be >= 2");
    if (feat_dim == 0 || vocab == 0 || token_dim == 0 || frames_per_token == 0) {
      throw ConfigError("synth: dimensions must be positive");
    }
    if (min_tokens == 0 || min_tokens > max_tokens) throw ConfigError("synth: bad token length range");
    if (noise_scale < 0) throw ConfigError("synth: noise_scale must be >= 0");
    if (train_utts_per_speaker == 0) throw ConfigError("synth: train_utts_per_speaker must be >= 1");
  }
};

struct SpeakerSpec {
  int speaker_id = 0;
  std::vector<double> latent;
};

// Fixed per-dataset maps: features = content_map * token_table[tok]
//                                   + identity_map * latent + noise.
struct MixingMaps {
  std::size_t feat_dim = 0, id_dim = 0, token_dim = 0, vocab = 0;
  std::vector<double> content_map;   // feat_dim x token_dim
  std::vector<double> identity_map;  // feat_dim x id_dim
  std::vector<double> token_table;   // vocab x token_dim

  // content_map * token_table[tok]
  std::vector<double> content_vector(int tok) const {
    std::vector<double> out(feat_dim, 0.0);
    for (std::size_t d = 0; d < feat_dim; ++d)
      for (std::size_t k = 0; k < token_dim; ++k)
        out[d] += content_map[d * token_dim + k] * token_table[tok * token_dim + k];
    return out;
  }

  std::vector<double> identity_vector(std::span<const double> latent) const {
    std::vector<double> out(feat_dim, 0.0);
    for (std::size_t d = 0; d < feat_dim; ++d)
      for (std::size_t k = 0; k < id_dim; ++k) out[d] += identity_map[d * id_dim + k] * latent[k];
    return out;
  }
};

struct Utterance {
  int speaker_id = 0;
  std::vector<int> tokens;
  FeatureSeq features;

  std::size_t valid_len() const { return features.frames; }
};

namespace detail {

inline void normalize(std::vector<double>& v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// S unit-norm latents, i.i.d. Gaussian directions, resampling any candidate
// closer than min_angle_deg to an earlier one.
inline std::vector<SpeakerSpec> make_speakers(std::size_t count, std::size_t id_dim,
                                              std::uint64_t seed, double min_angle_deg = 5.0,
                                              int first_id = 0) {
  if (count < 2) throw ConfigError("make_speakers: need at least 2 speakers, got " + std::to_string(count));
  if (id_dim < 2) throw ConfigError("make_speakers: id_dim must be >= 2");
  constexpr int kMaxAttempts = 10000;
  const double max_cos = std::cos(min_angle_deg * std::numbers::pi / 180.0);
  auto rng = make_stream(seed, {kStreamSpeakers});
  std::vector<SpeakerSpec> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      auto v = normal_values(rng, id_dim);
      detail::normalize(v);
      placed = true;
      for (const auto& prev : out) {
        if (detail::dot(v, prev.latent) >= max_cos) {
          placed = false;
          break;
        }
      }
      if (placed) out.push_back({first_id + static_cast<int>(s), std::move(v)});
    }
    if (!placed) {
      throw ConfigError("make_speakers: cannot place " + std::to_string(count) + " speakers " +
                        std::to_string(min_angle_deg) + " degrees apart in dimension " +
                        std::to_string(id_dim));
    }
  }
  return out;
}

inline MixingMaps make_mixing(const SynthConfig& cfg) {
  auto rng = make_stream(cfg.seed, {kStreamMixing});
  MixingMaps m;
  m.feat_dim = cfg.feat_dim;
  m.id_dim = cfg.id_dim;
  m.token_dim = cfg.token_dim;
  m.vocab = cfg.vocab;
  // Unit-variance contributions per feature dimension from each source.
  m.content_map = normal_values(rng, cfg.feat_dim * cfg.token_dim,
                                1.0 / std::sqrt(static_cast<double>(cfg.token_dim)));
  m.identity_map = normal_values(rng, cfg.feat_dim * cfg.id_dim);
  m.token_table = normal_values(rng, cfg.vocab * cfg.token_dim);
  return m;
}

inline Utterance synth_utterance(const MixingMaps& mixing, const SpeakerSpec& spk,
                                 std::span<const int> tokens, std::size_t frames_per_token,
                                 double noise_scale, std::uint64_t seed) {
  if (noise_scale < 0) throw DomainError("synth_utterance: noise_scale must be >= 0");
  if (tokens.empty()) throw DomainError("synth_utterance: empty token sequence");
  if (spk.latent.size() != mixing.id_dim) throw DimensionError("synth_utterance: latent dimension mismatch");
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= mixing.vocab) {
      throw DomainError("synth_utterance: unknown token " + std::to_string(tok));
    }
  }
  const std::size_t D = mixing.feat_dim;
  Utterance u;
  u.speaker_id = spk.speaker_id;
  u.tokens.assign(tokens.begin(), tokens.end());
  u.features.frames = tokens.size() * frames_per_token;
  u.features.dim = D;
  u.features.values.resize(u.features.frames * D);

  const auto identity = mixing.identity_vector(spk.latent);
  auto rng = make_stream(seed, {kStreamUtterance});
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < u.features.frames; ++t) {
    const auto content = mixing.content_vector(tokens[t / frames_per_token]);
    for (std::size_t d = 0; d < D; ++d) {
      double v = content[d] + identity[d];
      if (noise_scale > 0) v += noise_scale * noise(rng);
      u.features.values[t * D + d] = v;
    }
  }
  return u;
}

struct Dataset {
  SynthConfig config;
  MixingMaps mixing;
  std::vector<SpeakerSpec> train_speakers;
  std::vector<SpeakerSpec> test_speakers;
  std::vector<Utterance> train;    // encoder and flow-model training
  std::vector<Utterance> heldout;  // unseen utterances of training speakers
  std::vector<Utterance> test;     // held-out speakers only
};

enum class Split : std::uint64_t { kTrain = 0, kHeldout = 1, kTest = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kHeldout: return "heldout";
    case Split::kTest: return "test";
  }
  return "?";
}

// Draws the token sequence and noise for utterance `index` of a split.
inline Utterance make_item(const SynthConfig& cfg, const MixingMaps& mixing, const SpeakerSpec& spk,
                           Split split, std::size_t index) {
  auto rng = make_stream(cfg.seed, {kStreamTokens, static_cast<std::uint64_t>(split), index});
  const std::size_t span = cfg.max_tokens - cfg.min_tokens + 1;
  const std::size_t len = cfg.min_tokens + rng() % span;
  std::vector<int> tokens(len);
  for (auto& t : tokens) t = static_cast<int>(rng() % cfg.vocab);
  const std::uint64_t noise_seed = rng();
  return synth_utterance(mixing, spk, tokens, cfg.frames_per_token, cfg.noise_scale, noise_seed);
}

inline Dataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.mixing = make_mixing(cfg);
  // Drawn jointly so the angular separation also holds across the split.
  auto all = make_speakers(cfg.train_speakers + cfg.test_speakers, cfg.id_dim, cfg.seed,
                           cfg.min_angle_deg);
  ds.train_speakers.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.train_speakers));
  ds.test_speakers.assign(all.begin() + static_cast<std::ptrdiff_t>(cfg.train_speakers), all.end());

  std::size_t idx = 0;
  for (const auto& spk : ds.train_speakers)
    for (std::size_t j = 0; j < cfg.train_utts_per_speaker; ++j)
      ds.train.push_back(make_item(cfg, ds.mixing, spk, Split::kTrain, idx++));
  idx = 0;
  for (const auto& spk : ds.train_speakers)
    for (std::size_t j = 0; j < cfg.heldout_utts_per_speaker; ++j)
      ds.heldout.push_back(make_item(cfg, ds.mixing, spk, Split::kHeldout, idx++));
  for (std::size_t i = 0; i < cfg.test_utterances; ++i) {
    const auto& spk = ds.test_speakers[i % ds.test_speakers.size()];
    ds.test.push_back(make_item(cfg, ds.mixing, spk, Split::kTest, i));
  }
  return ds;
}

}  // namespace tlasa::synth
