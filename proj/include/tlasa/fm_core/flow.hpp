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

#include "tlasa/fm_core/field.hpp"
#include "tlasa/synthvoice/batch.hpp"

namespace tlasa::fm {

// x_t = (1 - t) x0 + t x1 with one t per leading-axis item.
inline num::Tensor sample_ot_path(const num::Tensor& x0, const num::Tensor& x1, std::span<const double> t) {
  if (x0.shape() != x1.shape()) {
    throw DimensionError("sample_ot_path: " + num::shape_str(x0.shape()) + " vs " + num::shape_str(x1.shape()));
  }
  const std::size_t B = x0.dim(0);
  if (t.size() != B) throw DimensionError("sample_ot_path: " + std::to_string(t.size()) + " times for batch " + std::to_string(B));
  for (double ti : t) {
    if (!(ti >= 0.0 && ti <= 1.0)) throw DomainError("sample_ot_path: t=" + std::to_string(ti) + " outside [0,1]");
  }
  const std::size_t per = x0.numel() / B;
  std::vector<double> out(x0.numel());
  auto a = x0.values(), b = x1.values();
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t k = i * per; k < (i + 1) * per; ++k) {
      // Exact endpoints.
      out[k] = t[i] == 0.0 ? a[k] : t[i] == 1.0 ? b[k] : (1.0 - t[i]) * a[k] + t[i] * b[k];
    }
  }
  return num::Tensor(x0.shape(), std::move(out));
}

// Per frame: mask ? x : context. Selection, not arithmetic, so context frames
// come through bit-exact.
inline num::Tensor compose_input(const num::Tensor& x, const num::Tensor& context, const num::Tensor& mask) {
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  std::vector<double> out(x.numel());
  auto xv = x.values(), cv = context.values(), mv = mask.values();
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    const auto& src = mv[bt] != 0.0 ? xv : cv;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(bt * D), D, out.begin() + static_cast<std::ptrdiff_t>(bt * D));
  }
  return num::Tensor(x.shape(), std::move(out));
}

// Mean squared error to the target velocity x1 - x0 over masked entries.
inline num::Tensor cfm_loss(const num::Tensor& v_pred, const num::Tensor& x0, const num::Tensor& x1,
                            const num::Tensor& mask) {
  if (v_pred.shape() != x0.shape() || x0.shape() != x1.shape()) {
    throw DimensionError("cfm_loss: shapes " + num::shape_str(v_pred.shape()) + ", " + num::shape_str(x0.shape()) +
                         ", " + num::shape_str(x1.shape()));
  }
  for (double m : mask.values()) {
    if (m != 0.0 && m != 1.0) throw DomainError("cfm_loss: mask entries must be 0 or 1");
  }
  std::vector<double> target(x1.numel());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = x1[i] - x0[i];
  return num::masked_mean_square(v_pred - num::Tensor(x1.shape(), std::move(target)), mask);
}

struct OdeOptions {
  std::size_t steps = 32;
  bool reimpose_each_step = true;
};

// Euler integration of dx/dt = field(x, t) from t=0 to 1 starting at x0.
// field(x, t) receives the batch state [B,T,D] and per-item times, returns a
// velocity of the same shape. Unmasked frames are held at `context`.
template <class Field>
num::Tensor ode_integrate(Field&& field, const num::Tensor& x0, const num::Tensor& context, const num::Tensor& mask,
                          const OdeOptions& opt) {
  if (opt.steps < 1) throw DomainError("ode_sample: steps must be >= 1");
  if (x0.shape() != context.shape()) {
    throw DimensionError("ode_sample: x0 " + num::shape_str(x0.shape()) + " vs context " +
                         num::shape_str(context.shape()));
  }
  num::NoGradGuard guard;
  const std::size_t B = x0.dim(0);
  const double dt = 1.0 / static_cast<double>(opt.steps);
  num::Tensor x = compose_input(x0, context, mask);
  std::vector<double> t(B);
  for (std::size_t k = 0; k < opt.steps; ++k) {
    std::fill(t.begin(), t.end(), static_cast<double>(k) * dt);
    num::Tensor v = field(x, std::span<const double>(t));
    std::vector<double> next(x.values().begin(), x.values().end());
    auto vv = v.values();
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += dt * vv[i];
    x = num::Tensor(x.shape(), std::move(next));
    if (opt.reimpose_each_step || k + 1 == opt.steps) x = compose_input(x, context, mask);
    if (!num::all_finite(x)) throw NumericError("ode_sample: non-finite state at step " + std::to_string(k));
  }
  return x;
}

struct SampleRequest {
  num::Tensor context;  // [B,T,D]; values on masked frames are ignored
  num::Tensor mask;     // [B,T]
  std::vector<std::vector<int>> tokens;
  num::Tensor cond;     // [B,D']
  std::vector<std::size_t> valid_len;
};

inline SampleRequest request_from_batch(const synth::TrainBatch& batch) {
  return {batch.x1, batch.mask, batch.tokens, batch.cond, batch.valid_len};
}

// Full state after integration from a supplied x0.
inline num::Tensor ode_sample(const VectorFieldNet& net, const SampleRequest& req, const num::Tensor& x0,
                              const OdeOptions& opt) {
  auto field = [&](const num::Tensor& x, std::span<const double> t) {
    return net.forward({x, req.mask, t, &req.tokens, req.cond, req.valid_len}).v;
  };
  return ode_integrate(field, x0, req.context, req.mask, opt);
}

// Draws x0 ~ N(0, I) from the (seed, flow-noise) stream.
inline num::Tensor ode_sample(const VectorFieldNet& net, const SampleRequest& req, std::uint64_t seed,
                              const OdeOptions& opt) {
  auto rng = make_stream(seed, {kStreamFlowNoise});
  return ode_sample(net, req, normal_tensor(rng, req.context.shape()), opt);
}

// Generated (masked) frames per item.
inline std::vector<synth::FeatureSeq> generated_frames(const num::Tensor& state, const SampleRequest& req) {
  return synth::select_frames(state, req.mask, req.valid_len, /*masked=*/true);
}

}  // namespace tlasa::fm
