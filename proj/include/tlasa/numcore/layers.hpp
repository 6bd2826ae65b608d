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
#include <random>
#include <string>
#include <vector>

#include "tlasa/numcore/ops.hpp"
#include "tlasa/numcore/random.hpp"

namespace tlasa::num {

// A named trainable leaf, as seen by optimizers and checkpoints.
struct NamedParam {
  std::string name;
  Tensor* tensor;
};

struct Linear {
  Tensor W;
  Tensor b;

  static Linear init(std::mt19937_64& rng, std::size_t in, std::size_t out, double gain = 1.0) {
    Linear l;
    l.W = normal_tensor(rng, {in, out}, gain / std::sqrt(static_cast<double>(in)), true);
    l.b = Tensor::zeros({out}, true);
    return l;
  }

  static Linear zeros(std::size_t in, std::size_t out) {
    return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
  }

  Tensor operator()(const Tensor& x) const { return affine(x, W, b); }

  std::size_t in_dim() const { return W.dim(0); }
  std::size_t out_dim() const { return W.dim(1); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".W", &W});
    out.push_back({prefix + ".b", &b});
  }
};

// in -> hidden -> out with SiLU in between.
struct Mlp2 {
  Linear first;
  Linear second;

  static Mlp2 init(std::mt19937_64& rng, std::size_t in, std::size_t hidden, std::size_t out,
                   double out_gain = 1.0) {
    Mlp2 m;
    m.first = Linear::init(rng, in, hidden);
    m.second = Linear::init(rng, hidden, out, out_gain);
    return m;
  }

  Tensor operator()(const Tensor& x) const { return second(silu(first(x))); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    first.collect(prefix + ".0", out);
    second.collect(prefix + ".1", out);
  }
};

inline void set_requires_grad(std::vector<NamedParam>& params, bool flag) {
  for (auto& p : params) *p.tensor = p.tensor->clone_leaf(flag);
}

}  // namespace tlasa::num
