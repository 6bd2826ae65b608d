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

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tlasa/numcore/tensor.hpp"

namespace tlasa::num {

namespace detail {

inline double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  Tensor y = f();
  if (y.numel() != 1) throw DimensionError("check_gradients: function must return a scalar");
  double v = y.item();
  if (!std::isfinite(v)) throw NumericError("check_gradients: non-finite function value");
  return v;
}

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

inline void check_step(double h) {
  if (!(h >= 1e-6 && h <= 1e-4)) {
    throw DomainError("check_gradients: step " + std::to_string(h) + " outside [1e-6, 1e-4]");
  }
}

}  // namespace detail

// Compares reverse-mode gradients of a scalar function with central
// differences over every coordinate of every leaf in `params`. The leaves are
// perturbed in place and restored. Returns the worst relative error.
inline double check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> params,
                              double h = 1e-5) {
  detail::check_step(h);
  for (auto& p : params) {
    if (!p.requires_grad()) throw DomainError("check_gradients: parameter does not require grad");
    p.zero_grad();
  }
  Tensor y = f();
  if (y.numel() != 1) throw DimensionError("check_gradients: function must return a scalar");
  if (!std::isfinite(y.item())) throw NumericError("check_gradients: non-finite function value");
  y.backward();

  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = detail::eval_scalar(f);
      vals[i] = orig - h;
      const double fm = detail::eval_scalar(f);
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, detail::rel_error(analytic[i], numeric));
    }
  }
  return worst;
}

// Single-input form: f is evaluated on a fresh leaf copy of x.
inline double check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                              double h = 1e-5) {
  Tensor leaf = x.clone_leaf(true);
  return check_gradients([&] { return f(leaf); }, {leaf}, h);
}

}  // namespace tlasa::num
