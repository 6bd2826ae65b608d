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

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlasa/numcore/layers.hpp"
#include "tlasa/numcore/serialize.hpp"

namespace tlasa::fm {

struct FieldConfig {
  std::size_t feat_dim = 24;
  std::size_t hidden = 64;
  std::size_t layers = 12;     // supervised (tapped) blocks
  std::size_t cond_dim = 32;
  std::size_t vocab = 32;
  std::size_t frames_per_token = 4;
  std::size_t time_dim = 64;
  double time_freq_max = 100.0;
  bool window_mixing = true;
  std::size_t mix_radius = 2;
  bool sandwich = false;       // 2 extra untapped blocks on each side

  void validate() const {
    if (feat_dim == 0 || hidden == 0 || layers == 0 || cond_dim == 0 || vocab == 0) {
      throw ConfigError("field: dimensions must be positive");
    }
    if (frames_per_token == 0) throw ConfigError("field: frames_per_token must be >= 1");
    if (time_dim < 4 || time_dim % 2 != 0) throw ConfigError("field: time_dim must be even and >= 4");
    if (!(time_freq_max > 1.0)) throw ConfigError("field: time_freq_max must exceed 1");
  }
};

inline nlohmann::json to_json(const FieldConfig& c) {
  return {{"feat_dim", c.feat_dim},           {"hidden", c.hidden},
          {"layers", c.layers},               {"cond_dim", c.cond_dim},
          {"vocab", c.vocab},                 {"frames_per_token", c.frames_per_token},
          {"time_dim", c.time_dim},           {"time_freq_max", c.time_freq_max},
          {"window_mixing", c.window_mixing}, {"mix_radius", c.mix_radius},
          {"sandwich", c.sandwich}};
}

inline FieldConfig field_config_from_json(const nlohmann::json& j) {
  FieldConfig c;
  c.feat_dim = j.at("feat_dim");
  c.hidden = j.at("hidden");
  c.layers = j.at("layers");
  c.cond_dim = j.at("cond_dim");
  c.vocab = j.at("vocab");
  c.frames_per_token = j.at("frames_per_token");
  c.time_dim = j.at("time_dim");
  c.time_freq_max = j.at("time_freq_max");
  c.window_mixing = j.at("window_mixing");
  c.mix_radius = j.at("mix_radius");
  c.sandwich = j.at("sandwich");
  return c;
}

// [sin(f_k t), cos(f_k t)] with f_k geometric from 1 to freq_max: [B] -> [B,dim].
inline num::Tensor sinusoidal_embedding(std::span<const double> t, std::size_t dim, double freq_max) {
  const std::size_t half = dim / 2;
  std::vector<double> out(t.size() * dim);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      const double f = std::exp(std::log(freq_max) * static_cast<double>(k) / static_cast<double>(half - 1));
      out[b * dim + k] = std::sin(f * t[b]);
      out[b * dim + half + k] = std::cos(f * t[b]);
    }
  }
  return num::Tensor({t.size(), dim}, std::move(out));
}

struct FieldInput {
  num::Tensor x;                                  // [B,T,D]: noisy on mask, context elsewhere
  num::Tensor mask;                               // [B,T], 1 = frame to generate
  std::span<const double> t;                      // [B]
  const std::vector<std::vector<int>>* tokens;    // content tokens per item
  num::Tensor cond;                               // [B,D']
  std::span<const std::size_t> valid_len;
};

struct FieldOutput {
  num::Tensor v;                  // [B,T,D]
  std::vector<num::Tensor> taps;  // one [B,T,D_h] per supervised block
};

struct ResidualBlock {
  num::Linear mod;  // per-item bias from the time/condition vector
  num::Linear fc1;
  num::Linear fc2;

  static ResidualBlock init(std::mt19937_64& rng, std::size_t H, double out_gain) {
    ResidualBlock blk;
    blk.mod = num::Linear::init(rng, H, H);
    blk.fc1 = num::Linear::init(rng, H, H);
    blk.fc2 = num::Linear::init(rng, H, H, out_gain);
    return blk;
  }

  void collect(const std::string& prefix, std::vector<num::NamedParam>& out) {
    mod.collect(prefix + ".mod", out);
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

class VectorFieldNet {
 public:
  VectorFieldNet() = default;

  VectorFieldNet(const FieldConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    auto rng = make_stream(seed, {kStreamTrunkInit});
    const std::size_t H = cfg.hidden;
    in_x_ = num::Linear::init(rng, cfg.feat_dim, H);
    in_mask_ = normal_tensor(rng, {1, H}, 1.0, true);
    token_table_ = normal_tensor(rng, {cfg.vocab + 1, H}, 1.0, true);
    time_ = num::Mlp2::init(rng, cfg.time_dim, H, H);
    cond_ = num::Linear::init(rng, cfg.cond_dim, H);
    const double gain = 1.0 / std::sqrt(static_cast<double>(total_blocks()));
    const std::size_t extra = cfg.sandwich ? 2 : 0;
    for (std::size_t i = 0; i < extra; ++i) pre_.push_back(ResidualBlock::init(rng, H, gain));
    for (std::size_t i = 0; i < cfg.layers; ++i) blocks_.push_back(ResidualBlock::init(rng, H, gain));
    for (std::size_t i = 0; i < extra; ++i) post_.push_back(ResidualBlock::init(rng, H, gain));
    out_ = num::Linear::zeros(H, cfg.feat_dim);
  }

  const FieldConfig& config() const { return cfg_; }
  std::size_t layers() const { return cfg_.layers; }
  std::size_t hidden() const { return cfg_.hidden; }
  std::size_t total_blocks() const { return cfg_.layers + (cfg_.sandwich ? 4 : 0); }

  // Per-frame token ids; padding frames use the extra row `vocab`.
  std::vector<int> frame_tokens(const std::vector<std::vector<int>>& tokens,
                                std::span<const std::size_t> valid_len, std::size_t T) const {
    std::vector<int> ids(tokens.size() * T, static_cast<int>(cfg_.vocab));
    for (std::size_t b = 0; b < tokens.size(); ++b) {
      if (tokens[b].empty()) throw DomainError("field: item " + std::to_string(b) + " has no tokens");
      for (std::size_t t = 0; t < valid_len[b]; ++t) {
        const int id = tokens[b][std::min(t / cfg_.frames_per_token, tokens[b].size() - 1)];
        if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab) {
          throw DomainError("field: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(cfg_.vocab));
        }
        ids[b * T + t] = id;
      }
    }
    return ids;
  }

  FieldOutput forward(const FieldInput& in) const {
    const auto& x = in.x;
    if (x.rank() != 3 || x.dim(2) != cfg_.feat_dim) {
      throw DimensionError("field: expected x [B,T," + std::to_string(cfg_.feat_dim) + "], got " +
                           num::shape_str(x.shape()));
    }
    const std::size_t B = x.dim(0), T = x.dim(1);
    if (in.mask.shape() != num::Shape{B, T}) {
      throw DimensionError("field: mask " + num::shape_str(in.mask.shape()) + " vs x " + num::shape_str(x.shape()));
    }
    if (in.t.size() != B || in.valid_len.size() != B || !in.tokens || in.tokens->size() != B) {
      throw DimensionError("field: per-item inputs do not match batch of " + std::to_string(B));
    }
    if (in.cond.shape() != num::Shape{B, cfg_.cond_dim}) {
      throw DimensionError("field: cond " + num::shape_str(in.cond.shape()) + ", expected [" + std::to_string(B) +
                           "x" + std::to_string(cfg_.cond_dim) + "]");
    }
    if (!num::all_finite(x)) throw NumericError("field: non-finite input");

    auto ids = frame_tokens(*in.tokens, in.valid_len, T);
    auto h = in_x_(x) + num::affine(in.mask.reshaped({B, T, 1}), in_mask_) +
             num::embedding_lookup(token_table_, ids, {B, T});
    auto g = time_(sinusoidal_embedding(in.t, cfg_.time_dim, cfg_.time_freq_max)) + cond_(in.cond);
    g = num::silu(g);

    FieldOutput out;
    out.taps.reserve(cfg_.layers);
    std::size_t index = 0;
    auto run = [&](const ResidualBlock& blk, bool tap) {
      auto u = cfg_.window_mixing ? num::window_mean_time(h, in.valid_len, cfg_.mix_radius) : h;
      u = num::add_broadcast_time(blk.fc1(u), blk.mod(g));
      h = h + blk.fc2(num::silu(u));
      if (!num::all_finite(h)) throw NumericError("field: non-finite activation after block " + std::to_string(index));
      if (tap) out.taps.push_back(h);
      ++index;
    };
    for (const auto& blk : pre_) run(blk, false);
    for (const auto& blk : blocks_) run(blk, true);
    for (const auto& blk : post_) run(blk, false);
    out.v = out_(h);
    return out;
  }

  std::vector<num::NamedParam> parameters() {
    std::vector<num::NamedParam> out;
    in_x_.collect("in.x", out);
    out.push_back({"in.mask", &in_mask_});
    out.push_back({"token_table", &token_table_});
    time_.collect("time", out);
    cond_.collect("cond", out);
    for (std::size_t i = 0; i < pre_.size(); ++i) pre_[i].collect("pre" + std::to_string(i), out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), out);
    for (std::size_t i = 0; i < post_.size(); ++i) post_[i].collect("post" + std::to_string(i), out);
    out_.collect("out", out);
    return out;
  }

  num::Linear& output_projection() { return out_; }

 private:
  FieldConfig cfg_;
  num::Linear in_x_;
  num::Tensor in_mask_;
  num::Tensor token_table_;
  num::Mlp2 time_;
  num::Linear cond_;
  std::vector<ResidualBlock> pre_, blocks_, post_;
  num::Linear out_;
};

}  // namespace tlasa::fm
