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

// Differentiable primitives. Every op validates shapes, computes its value
// eagerly and, when recording, attaches a closure that accumulates the
// vector-Jacobian product into its parents.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tlasa/numcore/tensor.hpp"

namespace tlasa::num {

inline constexpr double kNormEps = 1e-8;

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(a.shape()));
  }
}

inline void check_valid_len(std::span<const std::size_t> valid_len, std::size_t batch,
                            std::size_t frames, const char* op) {
  if (valid_len.size() != batch) {
    throw DimensionError(std::string(op) + ": valid_len has " + std::to_string(valid_len.size()) +
                         " entries for batch " + std::to_string(batch));
  }
  for (auto l : valid_len) {
    if (l == 0) throw DegenerateInputError(std::string(op) + ": valid_len must be >= 1");
    if (l > frames) {
      throw DimensionError(std::string(op) + ": valid_len " + std::to_string(l) + " exceeds T=" +
                           std::to_string(frames));
    }
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// out = x W + b, applied over the last axis of x (leading axes are batch).
inline Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b = {}) {
  detail::require_rank(W, 2, "affine");
  if (x.rank() < 2 || x.shape().back() != W.dim(0)) {
    throw DimensionError("affine: inner dimensions disagree, x " + shape_str(x.shape()) + " vs W " +
                         shape_str(W.shape()));
  }
  const std::size_t M = W.dim(0), K = W.dim(1), R = x.numel() / M;
  if (b.defined() && (b.rank() != 1 || b.dim(0) != K)) {
    throw DimensionError("affine: bias " + shape_str(b.shape()) + " does not match W " +
                         shape_str(W.shape()));
  }
  std::vector<double> out(R * K);
  detail::MatMap Y(out.data(), R, K);
  Y.noalias() = detail::ConstMatMap(x.data(), R, M) * detail::ConstMatMap(W.data(), M, K);
  if (b.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), K);

  Shape shape = x.shape();
  shape.back() = K;
  std::vector<Tensor> parents{x, W};
  if (b.defined()) parents.push_back(b);
  return Tensor::make_result(std::move(shape), std::move(out), "affine", std::move(parents),
                             [R, M, K](detail::Node& self) {
                               detail::ConstMatMap dY(self.grad.data(), R, K);
                               auto& px = *self.parents[0];
                               auto& pw = *self.parents[1];
                               if (px.requires_grad) {
                                 px.ensure_grad();
                                 detail::MatMap(px.grad.data(), R, M).noalias() +=
                                     dY * detail::ConstMatMap(pw.value.data(), M, K).transpose();
                               }
                               if (pw.requires_grad) {
                                 pw.ensure_grad();
                                 detail::MatMap(pw.grad.data(), M, K).noalias() +=
                                     detail::ConstMatMap(px.value.data(), R, M).transpose() * dY;
                               }
                               if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                                 auto& pb = *self.parents[2];
                                 pb.ensure_grad();
                                 for (std::size_t r = 0; r < R; ++r)
                                   for (std::size_t k = 0; k < K; ++k) pb.grad[k] += self.grad[r * K + k];
                               }
                             });
}

inline Tensor silu(const Tensor& x) {
  std::vector<double> out(x.numel()), sig(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    sig[i] = detail::sigmoid(xv[i]);
    out[i] = xv[i] * sig[i];
  }
  return Tensor::make_result(x.shape(), std::move(out), "silu", {x}, [sig = std::move(sig)](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = sig[i];
      p.grad[i] += self.grad[i] * s * (1.0 + p.value[i] * (1.0 - s));
    }
  });
}

namespace detail {

template <class Fwd, class DA, class DB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, std::string_view op, Fwd fwd, DA da,
                          DB db) {
  require_same_shape(a, b, op.data());
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return Tensor::make_result(a.shape(), std::move(out), op, {a, b}, [da, db](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * da(pa.value[i], pb.value[i]);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i] * db(pa.value[i], pb.value[i]);
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  return Tensor::make_result(a.shape(), std::move(out), "scale", {a}, [s](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += s * self.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v += s;
  return Tensor::make_result(a.shape(), std::move(out), "add_scalar", {a}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// x[B,T,H] + y[B,H], y broadcast over the time axis.
inline Tensor add_broadcast_time(const Tensor& x, const Tensor& y) {
  detail::require_rank(x, 3, "add_broadcast_time");
  detail::require_rank(y, 2, "add_broadcast_time");
  const std::size_t B = x.dim(0), T = x.dim(1), H = x.dim(2);
  if (y.dim(0) != B || y.dim(1) != H) {
    throw DimensionError("add_broadcast_time: " + shape_str(x.shape()) + " vs " +
                         shape_str(y.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto yv = y.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h) out[(b * T + t) * H + h] += yv[b * H + h];
  return Tensor::make_result(x.shape(), std::move(out), "add_broadcast_time", {x, y},
                             [B, T, H](detail::Node& self) {
                               auto& px = *self.parents[0];
                               auto& py = *self.parents[1];
                               if (px.requires_grad) {
                                 px.ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   px.grad[i] += self.grad[i];
                               }
                               if (py.requires_grad) {
                                 py.ensure_grad();
                                 for (std::size_t b = 0; b < B; ++b)
                                   for (std::size_t t = 0; t < T; ++t)
                                     for (std::size_t h = 0; h < H; ++h)
                                       py.grad[b * H + h] += self.grad[(b * T + t) * H + h];
                               }
                             });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::make_result({1}, {s}, "sum", {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// [B,N] -> [B]
inline Tensor row_sum(const Tensor& x) {
  detail::require_rank(x, 2, "row_sum");
  const std::size_t B = x.dim(0), N = x.dim(1);
  std::vector<double> out(B, 0.0);
  auto xv = x.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < N; ++i) out[b] += xv[b * N + i];
  return Tensor::make_result({B}, std::move(out), "row_sum", {x}, [N](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t b = 0; b < self.grad.size(); ++b)
      for (std::size_t i = 0; i < N; ++i) p.grad[b * N + i] += self.grad[b];
  });
}

// Softmax over the last axis, max-subtracted.
inline Tensor softmax(const Tensor& x) {
  const std::size_t N = x.shape().back(), rows = x.numel() / N;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * N;
    double* o = out.data() + r * N;
    double mx = *std::max_element(in, in + N);
    double z = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      o[i] = std::exp(in[i] - mx);
      z += o[i];
    }
    for (std::size_t i = 0; i < N; ++i) o[i] /= z;
  }
  return Tensor::make_result(x.shape(), std::move(out), "softmax", {x},
                             [N, rows](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* y = self.value.data() + r * N;
                                 const double* g = self.grad.data() + r * N;
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < N; ++i) dot += g[i] * y[i];
                                 for (std::size_t i = 0; i < N; ++i)
                                   p.grad[r * N + i] += y[i] * (g[i] - dot);
                               }
                             });
}

inline constexpr double kSimplexTol = 1e-9;

// Shannon entropy of each simplex row of w[B,N], with 0 ln 0 = 0.
inline Tensor entropy(const Tensor& w) {
  detail::require_rank(w, 2, "entropy");
  const std::size_t B = w.dim(0), N = w.dim(1);
  auto wv = w.values();
  std::vector<double> out(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double p = wv[b * N + i];
      if (p < -kSimplexTol) {
        throw DomainError("entropy: negative weight " + std::to_string(p) + " in row " +
                          std::to_string(b));
      }
      total += p;
      if (p > 0) out[b] -= p * std::log(p);
    }
    if (std::abs(total - 1.0) > kSimplexTol) {
      throw DomainError("entropy: row " + std::to_string(b) + " sums to " + std::to_string(total));
    }
  }
  return Tensor::make_result({B}, std::move(out), "entropy", {w}, [N](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t b = 0; b < self.grad.size(); ++b)
      for (std::size_t i = 0; i < N; ++i) {
        double q = p.value[b * N + i];
        // Zero entries contribute nothing; the one-sided derivative diverges.
        if (q > 0) p.grad[b * N + i] -= self.grad[b] * (std::log(q) + 1.0);
      }
  });
}

// Mean over the first valid_len[b] frames: [B,T,D] -> [B,D].
inline Tensor mean_pool_time(const Tensor& x, std::span<const std::size_t> valid_len) {
  detail::require_rank(x, 3, "mean_pool_time");
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  detail::check_valid_len(valid_len, B, T, "mean_pool_time");
  std::vector<std::size_t> lens(valid_len.begin(), valid_len.end());
  std::vector<double> out(B * D, 0.0);
  auto xv = x.values();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < lens[b]; ++t)
      for (std::size_t d = 0; d < D; ++d) out[b * D + d] += xv[(b * T + t) * D + d];
    const double inv = 1.0 / static_cast<double>(lens[b]);
    for (std::size_t d = 0; d < D; ++d) out[b * D + d] *= inv;
  }
  return Tensor::make_result({B, D}, std::move(out), "mean_pool_time", {x},
                             [T, D, lens](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               for (std::size_t b = 0; b < lens.size(); ++b) {
                                 const double inv = 1.0 / static_cast<double>(lens[b]);
                                 for (std::size_t t = 0; t < lens[b]; ++t)
                                   for (std::size_t d = 0; d < D; ++d)
                                     p.grad[(b * T + t) * D + d] += inv * self.grad[b * D + d];
                               }
                             });
}

// Average over the window [t-r, t+r] clipped to the valid frames. Frames past
// valid_len are emitted as zero.
inline Tensor window_mean_time(const Tensor& x, std::span<const std::size_t> valid_len,
                               std::size_t radius) {
  detail::require_rank(x, 3, "window_mean_time");
  const std::size_t B = x.dim(0), T = x.dim(1), H = x.dim(2);
  detail::check_valid_len(valid_len, B, T, "window_mean_time");
  std::vector<std::size_t> lens(valid_len.begin(), valid_len.end());
  std::vector<double> out(x.numel(), 0.0);
  auto xv = x.values();
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t L = lens[b];
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t lo = t >= radius ? t - radius : 0;
      const std::size_t hi = std::min(L - 1, t + radius);
      const double inv = 1.0 / static_cast<double>(hi - lo + 1);
      double* o = out.data() + (b * T + t) * H;
      for (std::size_t s = lo; s <= hi; ++s) {
        const double* in = xv.data() + (b * T + s) * H;
        for (std::size_t h = 0; h < H; ++h) o[h] += in[h];
      }
      for (std::size_t h = 0; h < H; ++h) o[h] *= inv;
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), "window_mean_time", {x}, [T, H, radius, lens](detail::Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t b = 0; b < lens.size(); ++b) {
          const std::size_t L = lens[b];
          for (std::size_t t = 0; t < L; ++t) {
            const std::size_t lo = t >= radius ? t - radius : 0;
            const std::size_t hi = std::min(L - 1, t + radius);
            const double inv = 1.0 / static_cast<double>(hi - lo + 1);
            const double* g = self.grad.data() + (b * T + t) * H;
            for (std::size_t s = lo; s <= hi; ++s) {
              double* pg = p.grad.data() + (b * T + s) * H;
              for (std::size_t h = 0; h < H; ++h) pg[h] += inv * g[h];
            }
          }
        }
      });
}

// Row-wise <a,b> / (max(|a|,eps) max(|b|,eps)): [B,D] x [B,D] -> [B].
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = kNormEps) {
  detail::require_rank(a, 2, "cosine_similarity");
  detail::require_same_shape(a, b, "cosine_similarity");
  if (!(eps > 0)) throw DomainError("cosine_similarity: eps must be positive");
  const std::size_t B = a.dim(0), D = a.dim(1);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(B), na(B), nb(B), dots(B);
  for (std::size_t r = 0; r < B; ++r) {
    double aa = 0, bb = 0, ab = 0;
    for (std::size_t d = 0; d < D; ++d) {
      double x = av[r * D + d], y = bv[r * D + d];
      aa += x * x;
      bb += y * y;
      ab += x * y;
    }
    na[r] = std::sqrt(aa);
    nb[r] = std::sqrt(bb);
    dots[r] = ab;
    out[r] = ab / (std::max(na[r], eps) * std::max(nb[r], eps));
  }
  return Tensor::make_result(
      {B}, std::move(out), "cosine_similarity", {a, b}, [D, eps, na, nb, dots](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (int side = 0; side < 2; ++side) {
          auto& p = side == 0 ? pa : pb;
          auto& q = side == 0 ? pb : pa;
          if (!p.requires_grad) continue;
          p.ensure_grad();
          const auto& np = side == 0 ? na : nb;
          const auto& nq = side == 0 ? nb : na;
          for (std::size_t r = 0; r < self.grad.size(); ++r) {
            const double cp = std::max(np[r], eps), cq = std::max(nq[r], eps);
            const double g = self.grad[r];
            // Once the norm is clamped the denominator is constant.
            const double radial = np[r] > eps ? dots[r] / (cp * cp * cp * cq) : 0.0;
            for (std::size_t d = 0; d < D; ++d) {
              p.grad[r * D + d] +=
                  g * (q.value[r * D + d] / (cp * cq) - radial * p.value[r * D + d]);
            }
          }
        }
      });
}

// x / max(|x|, eps) per row.
inline Tensor l2_normalize(const Tensor& x, double eps = kNormEps) {
  detail::require_rank(x, 2, "l2_normalize");
  const std::size_t B = x.dim(0), D = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(x.numel()), norms(B);
  for (std::size_t r = 0; r < B; ++r) {
    double s = 0;
    for (std::size_t d = 0; d < D; ++d) s += xv[r * D + d] * xv[r * D + d];
    norms[r] = std::sqrt(s);
    const double c = std::max(norms[r], eps);
    for (std::size_t d = 0; d < D; ++d) out[r * D + d] = xv[r * D + d] / c;
  }
  return Tensor::make_result(x.shape(), std::move(out), "l2_normalize", {x},
                             [D, eps, norms](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               for (std::size_t r = 0; r < norms.size(); ++r) {
                                 const double* y = self.value.data() + r * D;
                                 const double* g = self.grad.data() + r * D;
                                 if (norms[r] > eps) {
                                   double yg = 0;
                                   for (std::size_t d = 0; d < D; ++d) yg += y[d] * g[d];
                                   for (std::size_t d = 0; d < D; ++d)
                                     p.grad[r * D + d] += (g[d] - y[d] * yg) / norms[r];
                                 } else {
                                   for (std::size_t d = 0; d < D; ++d) p.grad[r * D + d] += g[d] / eps;
                                 }
                               }
                             });
}

// Gathers rows of table[V,H]; the result has shape out_shape + [H].
inline Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, Shape out_shape) {
  detail::require_rank(table, 2, "embedding_lookup");
  if (numel_of(out_shape) != ids.size()) {
    throw DimensionError("embedding_lookup: " + std::to_string(ids.size()) + " ids for shape " +
                         shape_str(out_shape));
  }
  const std::size_t V = table.dim(0), H = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * H);
  auto tv = table.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= V) {
      throw DomainError("embedding_lookup: id " + std::to_string(idx[i]) + " outside vocabulary of " +
                        std::to_string(V));
    }
    std::copy_n(tv.data() + idx[i] * H, H, out.data() + i * H);
  }
  out_shape.push_back(H);
  return Tensor::make_result(std::move(out_shape), std::move(out), "embedding_lookup", {table},
                             [H, idx](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               for (std::size_t i = 0; i < idx.size(); ++i)
                                 for (std::size_t h = 0; h < H; ++h)
                                   p.grad[idx[i] * H + h] += self.grad[i * H + h];
                             });
}

// Sum of squares over the entries selected by mask[B,T] (broadcast over the
// last axis of x[B,T,D]) divided by the number of selected entries.
inline Tensor masked_mean_square(const Tensor& x, const Tensor& mask) {
  detail::require_rank(x, 3, "masked_mean_square");
  detail::require_rank(mask, 2, "masked_mean_square");
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (mask.dim(0) != B || mask.dim(1) != T) {
    throw DimensionError("masked_mean_square: mask " + shape_str(mask.shape()) + " vs x " +
                         shape_str(x.shape()));
  }
  auto mv = mask.values();
  auto xv = x.values();
  double count = 0, acc = 0;
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    if (mv[bt] != 0.0 && mv[bt] != 1.0) throw DomainError("masked_mean_square: mask must be 0/1");
    if (mv[bt] == 0.0) continue;
    count += static_cast<double>(D);
    for (std::size_t d = 0; d < D; ++d) acc += xv[bt * D + d] * xv[bt * D + d];
  }
  if (count == 0) throw DegenerateInputError("masked_mean_square: no masked entries in batch");
  std::vector<double> m(mv.begin(), mv.end());
  return Tensor::make_result({1}, {acc / count}, "masked_mean_square", {x},
                             [D, count, m](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               const double g = 2.0 * self.grad[0] / count;
                               for (std::size_t bt = 0; bt < m.size(); ++bt) {
                                 if (m[bt] == 0.0) continue;
                                 for (std::size_t d = 0; d < D; ++d)
                                   p.grad[bt * D + d] += g * p.value[bt * D + d];
                               }
                             });
}

// Mean negative log-likelihood of integer labels under softmax(logits).
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) throw DimensionError("cross_entropy: label count does not match batch");
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> probs(B * C);
  auto lv = logits.values();
  double loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (lab[b] < 0 || static_cast<std::size_t>(lab[b]) >= C) {
      throw DomainError("cross_entropy: label " + std::to_string(lab[b]) + " out of range");
    }
    const double* in = lv.data() + b * C;
    double mx = *std::max_element(in, in + C), z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(in[c] - mx);
    const double logz = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] = std::exp(in[c] - logz);
    loss += logz - in[lab[b]];
  }
  loss /= static_cast<double>(B);
  return Tensor::make_result({1}, {loss}, "cross_entropy", {logits},
                             [B, C, lab, probs](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               const double g = self.grad[0] / static_cast<double>(B);
                               for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t c = 0; c < C; ++c) {
                                   double d = probs[b * C + c] - (static_cast<int>(c) == lab[b] ? 1.0 : 0.0);
                                   p.grad[b * C + c] += g * d;
                                 }
                             });
}

// Stacks N tensors of shape [B] into [B,N] (column i = parts[i]).
inline Tensor stack_columns(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack_columns: no inputs");
  const std::size_t B = parts[0].numel(), N = parts.size();
  std::vector<double> out(B * N);
  for (std::size_t i = 0; i < N; ++i) {
    if (parts[i].rank() != 1 || parts[i].numel() != B) {
      throw DimensionError("stack_columns: part " + std::to_string(i) + " has shape " +
                           shape_str(parts[i].shape()));
    }
    for (std::size_t b = 0; b < B; ++b) out[b * N + i] = parts[i][b];
  }
  return Tensor::make_result({B, N}, std::move(out), "stack_columns", parts,
                             [B, N](detail::Node& self) {
                               for (std::size_t i = 0; i < N; ++i) {
                                 auto& p = *self.parents[i];
                                 if (!p.requires_grad) continue;
                                 p.ensure_grad();
                                 for (std::size_t b = 0; b < B; ++b) p.grad[b] += self.grad[b * N + i];
                               }
                             });
}

inline bool all_finite(const Tensor& x) {
  for (double v : x.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace tlasa::num
