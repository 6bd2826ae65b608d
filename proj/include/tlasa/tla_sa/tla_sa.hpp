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

// Time- and layer-adaptive speaker alignment: every supervised trunk layer is
// pooled, projected by its own adapter and compared with the frozen speaker
// embedding; per-item time-dependent simplex weights mix the layer losses.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlasa/fm_core/field.hpp"
#include "tlasa/numcore/layers.hpp"

namespace tlasa::tla {

enum class Distance { kCosine, kL2 };
enum class Mode { kBaseline, kLayerOnly, kLayerTime };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kBaseline: return "baseline";
    case Mode::kLayerOnly: return "layer_only";
    case Mode::kLayerTime: return "layer_time";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "baseline") return Mode::kBaseline;
  if (s == "layer_only") return Mode::kLayerOnly;
  if (s == "layer_time") return Mode::kLayerTime;
  throw ConfigError("unknown loss mode '" + s + "' (baseline, layer_only, layer_time)");
}

inline Distance parse_distance(const std::string& s) {
  if (s == "cosine") return Distance::kCosine;
  if (s == "l2") return Distance::kL2;
  throw ConfigError("unknown distance '" + s + "' (cosine, l2)");
}

inline constexpr double kDefaultAlpha = 0.01;
inline constexpr double kDefaultLambda = 0.5;

struct TlaConfig {
  std::size_t layers = 12;
  std::size_t tap_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t adapter_hidden = 64;
  std::size_t time_dim = 64;
  std::size_t time_hidden = 64;
  double time_freq_max = 100.0;
  bool zero_init_time_output = false;
  double alpha = kDefaultAlpha;
  double lambda = kDefaultLambda;
  Distance distance = Distance::kCosine;
  Mode mode = Mode::kLayerTime;

  void validate() const {
    if (layers == 0 || tap_dim == 0 || embed_dim == 0 || adapter_hidden == 0 || time_hidden == 0) {
      throw ConfigError("tla: dimensions must be positive");
    }
    if (alpha < 0) throw ConfigError("tla: alpha must be >= 0");
    if (lambda < 0) throw ConfigError("tla: lambda must be >= 0");
  }
};

// One 2-layer MLP per supervised layer, tap dim -> embedding dim.
class LayerAdapterBank {
 public:
  LayerAdapterBank() = default;
  LayerAdapterBank(const TlaConfig& cfg, std::uint64_t seed) {
    auto rng = make_stream(seed, {kStreamAdapterInit});
    for (std::size_t i = 0; i < cfg.layers; ++i)
      adapters_.push_back(num::Mlp2::init(rng, cfg.tap_dim, cfg.adapter_hidden, cfg.embed_dim));
  }

  std::size_t size() const { return adapters_.size(); }
  const num::Mlp2& operator[](std::size_t i) const { return adapters_.at(i); }

  std::vector<num::NamedParam> parameters() {
    std::vector<num::NamedParam> out;
    for (std::size_t i = 0; i < adapters_.size(); ++i) adapters_[i].collect("adapter" + std::to_string(i), out);
    return out;
  }

 private:
  std::vector<num::Mlp2> adapters_;
};

// t -> N logits via a sinusoidal embedding and a 2-layer MLP.
class TimeAdapter {
 public:
  TimeAdapter() = default;
  TimeAdapter(const TlaConfig& cfg, std::uint64_t seed) : time_dim_(cfg.time_dim), freq_max_(cfg.time_freq_max) {
    auto rng = make_stream(seed, {kStreamTimeAdapterInit});
    mlp_ = num::Mlp2::init(rng, cfg.time_dim, cfg.time_hidden, cfg.layers);
    if (cfg.zero_init_time_output) mlp_.second = num::Linear::zeros(cfg.time_hidden, cfg.layers);
  }

  num::Tensor logits(std::span<const double> t) const {
    for (double ti : t) {
      if (!(ti >= 0.0 && ti <= 1.0)) throw DomainError("time_weights: t=" + std::to_string(ti) + " outside [0,1]");
    }
    return mlp_(fm::sinusoidal_embedding(t, time_dim_, freq_max_));
  }

  std::size_t layers() const { return mlp_.second.out_dim(); }

  std::vector<num::NamedParam> parameters() {
    std::vector<num::NamedParam> out;
    mlp_.collect("time_adapter", out);
    return out;
  }

 private:
  std::size_t time_dim_ = 0;
  double freq_max_ = 1.0;
  num::Mlp2 mlp_;
};

inline num::Tensor pooled_layer_embedding(const num::Tensor& tap, std::span<const std::size_t> valid_len) {
  return num::mean_pool_time(tap, valid_len);
}

// Per-item distance between E_SA [B,D'] and the adapter's projection of the
// pooled tap. E_SA is used as a constant.
inline num::Tensor layer_sa_loss(const num::Tensor& pooled, const num::Mlp2& adapter, const num::Tensor& e_sa,
                                 Distance distance = Distance::kCosine) {
  auto proj = adapter(pooled);
  if (proj.shape() != e_sa.shape()) {
    throw DimensionError("layer_sa_loss: adapter output " + num::shape_str(proj.shape()) + " vs E_SA " +
                         num::shape_str(e_sa.shape()));
  }
  const num::Tensor target = e_sa.detach();
  if (distance == Distance::kCosine) return num::add_scalar(num::scale(num::cosine_similarity(target, proj), -1.0), 1.0);
  auto diff = proj - target;
  return num::row_sum(diff * diff);
}

// Softmax over layers of the time adapter's logits: [B] -> [B,N].
inline num::Tensor time_weights(const TimeAdapter& adapter, std::span<const double> t) {
  return num::softmax(adapter.logits(t));
}

inline num::Tensor uniform_weights(std::size_t B, std::size_t N) {
  return num::Tensor::full({B, N}, 1.0 / static_cast<double>(N));
}

// Batch mean of  sum_i w[b,i] L[b,i] - alpha H(w[b,.]).
inline num::Tensor tla_sa_loss(const num::Tensor& sa, const num::Tensor& w, double alpha) {
  if (sa.rank() != 2 || sa.shape() != w.shape()) {
    throw DimensionError("tla_sa_loss: layer losses " + num::shape_str(sa.shape()) + " vs weights " +
                         num::shape_str(w.shape()));
  }
  if (alpha < 0) throw DomainError("tla_sa_loss: alpha must be >= 0");
  auto per_item = num::row_sum(sa * w) - num::scale(num::entropy(w), alpha);
  return num::mean(per_item);
}

inline num::Tensor total_loss(const num::Tensor& cfm, const num::Tensor& tla, double lambda) {
  if (lambda < 0) throw DomainError("total_loss: lambda must be >= 0");
  return cfm + num::scale(tla, lambda);
}

struct LossBreakdown {
  double cfm = 0;
  std::vector<double> sa_per_layer;  // B x N, row-major
  double reg = 0;                    // batch mean of -H(w)
  double tla_sa = 0;
  double total = 0;
  double alpha = kDefaultAlpha;
  double lambda = kDefaultLambda;
};

// Alignment head: adapters, time adapter and the weighting mode.
struct TlaHead {
  TlaConfig cfg;
  LayerAdapterBank bank;
  TimeAdapter time;

  TlaHead() = default;
  TlaHead(const TlaConfig& c, std::uint64_t seed) : cfg(c), bank(c, seed), time(c, seed) { c.validate(); }

  struct Parts {
    num::Tensor sa;  // [B,N]
    num::Tensor w;   // [B,N]
    num::Tensor loss;
  };

  // Layer-only mode uses frozen uniform weights; the baseline mode shares the
  // layer-time computation (callers evaluate it without gradient).
  Parts evaluate(const std::vector<num::Tensor>& taps, std::span<const std::size_t> valid_len,
                 const num::Tensor& e_sa, std::span<const double> t) const {
    if (taps.size() != bank.size()) {
      throw DimensionError("tla: " + std::to_string(taps.size()) + " taps for " + std::to_string(bank.size()) +
                           " adapters");
    }
    std::vector<num::Tensor> cols;
    cols.reserve(taps.size());
    for (std::size_t i = 0; i < taps.size(); ++i)
      cols.push_back(layer_sa_loss(pooled_layer_embedding(taps[i], valid_len), bank[i], e_sa, cfg.distance));
    Parts p;
    p.sa = num::stack_columns(cols);
    p.w = cfg.mode == Mode::kLayerOnly ? uniform_weights(e_sa.dim(0), bank.size()) : time_weights(time, t);
    p.loss = tla_sa_loss(p.sa, p.w, cfg.alpha);
    return p;
  }

  std::vector<num::NamedParam> adapter_parameters() { return bank.parameters(); }
  std::vector<num::NamedParam> time_parameters() { return time.parameters(); }
};

inline LossBreakdown breakdown(const num::Tensor& cfm, const TlaHead::Parts& parts, const num::Tensor& total,
                               double alpha, double lambda) {
  LossBreakdown out;
  out.cfm = cfm.item();
  out.sa_per_layer.assign(parts.sa.values().begin(), parts.sa.values().end());
  num::NoGradGuard guard;
  auto h = num::entropy(parts.w);
  double reg = 0;
  for (double v : h.values()) reg -= v;
  out.reg = reg / static_cast<double>(h.numel());
  out.tla_sa = parts.loss.item();
  out.total = total.item();
  out.alpha = alpha;
  out.lambda = lambda;
  return out;
}

}  // namespace tlasa::tla
