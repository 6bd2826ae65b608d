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
#include <numbers>
#include <vector>

#include "tlasa/numcore/layers.hpp"

namespace tlasa::num {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Parameters are registered in groups; a step
// touches only the groups passed to it, so idle groups keep their state.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  std::size_t add_group(std::vector<NamedParam> params) {
    Group g;
    for (auto& p : params) {
      g.params.push_back(p);
      g.m.emplace_back(p.tensor->numel(), 0.0);
      g.v.emplace_back(p.tensor->numel(), 0.0);
    }
    groups_.push_back(std::move(g));
    return groups_.size() - 1;
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.tensor->zero_grad();
  }

  void step(double lr, const std::vector<std::size_t>& active) {
    for (auto gi : active) {
      auto& g = groups_.at(gi);
      ++g.t;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(g.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(g.t));
      for (std::size_t k = 0; k < g.params.size(); ++k) {
        auto& t = *g.params[k].tensor;
        auto w = t.mutable_values();
        auto grad = t.grad();
        // Biases and 1-D tensors are not decayed.
        const double wd = t.rank() >= 2 ? cfg_.weight_decay : 0.0;
        auto& m = g.m[k];
        auto& v = g.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi_ = grad.empty() ? 0.0 : grad[i];
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi_;
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi_ * gi_;
          const double mhat = m[i] / bc1, vhat = v[i] / bc2;
          w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * w[i]);
        }
      }
    }
  }

  std::size_t group_count() const { return groups_.size(); }

 private:
  struct Group {
    std::vector<NamedParam> params;
    std::vector<std::vector<double>> m, v;
    long t = 0;
  };
  AdamWConfig cfg_;
  std::vector<Group> groups_;
};

// Linear warm-up to lr_max, then cosine decay to lr_min at total_steps.
struct CosineSchedule {
  double lr_max = 3e-4;
  double lr_min = 3e-5;
  long warmup = 200;
  long total_steps = 8000;

  double operator()(long step) const {
    if (warmup > 0 && step < warmup) return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const long span = std::max(1L, total_steps - warmup);
    const double p = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * p));
  }
};

}  // namespace tlasa::num
