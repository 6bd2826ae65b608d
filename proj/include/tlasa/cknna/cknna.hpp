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

// Centered kernel nearest-neighbour alignment between two embedding sets of
// the same items, plus the layer / timestep sweeps built on it.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tlasa/numcore/tensor.hpp"

namespace tlasa::cknna {

struct CknnaConfig {
  std::size_t k = 10;
  bool normalize_rows = true;  // linear kernel on unit-norm rows

  void validate(std::size_t B) const {
    if (k < 1 || k + 2 > B) {
      throw ConfigError("cknna: k=" + std::to_string(k) + " outside [1, B-2] for B=" + std::to_string(B));
    }
  }
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Matrix to_matrix(const num::Tensor& X, bool normalize_rows) {
  if (X.rank() != 2) throw DimensionError("cknna: expected [B,D] embeddings, got " + num::shape_str(X.shape()));
  Matrix m = Eigen::Map<const Matrix>(X.data(), static_cast<Eigen::Index>(X.dim(0)), static_cast<Eigen::Index>(X.dim(1)));
  if (!m.allFinite()) throw NumericError("cknna: non-finite embedding");
  if (normalize_rows) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double n = m.row(i).norm();
      if (n > 0) m.row(i) /= n;
    }
  }
  return m;
}

// H (X X^T) H with H = I - 11^T / B.
inline Matrix centered_gram(const Matrix& X) {
  const Eigen::Index B = X.rows();
  if (B < 2) throw DegenerateInputError("centered_gram: need at least 2 rows, got " + std::to_string(B));
  Matrix Xc = X.rowwise() - X.colwise().mean();
  Matrix K = Xc * Xc.transpose();
  // Exact symmetry regardless of product blocking.
  K = 0.5 * (K + K.transpose()).eval();
  return K;
}

inline num::Tensor centered_gram(const num::Tensor& X, bool normalize_rows = false) {
  auto K = centered_gram(to_matrix(X, normalize_rows));
  const std::size_t B = static_cast<std::size_t>(K.rows());
  return num::Tensor({B, B}, std::vector<double>(K.data(), K.data() + K.size()));
}

// Row i lists the k columns j != i with largest K[i,j]; ties go to lower j.
inline std::vector<std::vector<std::size_t>> knn_sets(const Matrix& K, std::size_t k) {
  const std::size_t B = static_cast<std::size_t>(K.rows());
  std::vector<std::vector<std::size_t>> out(B);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < B; ++i) {
    idx.clear();
    for (std::size_t j = 0; j < B; ++j)
      if (j != i) idx.push_back(j);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double ka = K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
                        const double kb = K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
                        return ka > kb || (ka == kb && a < b);
                      });
    out[i].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

inline Matrix mutual_knn_mask(const Matrix& K, const Matrix& L, std::size_t k) {
  const std::size_t B = static_cast<std::size_t>(K.rows());
  auto nk = knn_sets(K, k), nl = knn_sets(L, k);
  Matrix a = Matrix::Zero(K.rows(), K.cols());
  Matrix in_k = Matrix::Zero(K.rows(), K.cols());
  for (std::size_t i = 0; i < B; ++i)
    for (auto j : nk[i]) in_k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
  for (std::size_t i = 0; i < B; ++i)
    for (auto j : nl[i])
      if (in_k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0.0)
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
  return a;
}

namespace detail {

inline void check_pair(const num::Tensor& X, const num::Tensor& Y) {
  if (X.rank() != 2 || Y.rank() != 2 || X.dim(0) != Y.dim(0)) {
    throw DimensionError("cknna: embedding sets " + num::shape_str(X.shape()) + " and " + num::shape_str(Y.shape()) +
                         " do not cover the same items");
  }
}

inline double alignment(const Matrix& a, const Matrix& K, const Matrix& L) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (i != j && a(i, j) != 0.0) s += K(i, j) * L(i, j);
  return s;
}

}  // namespace detail

inline num::Tensor mutual_knn_mask(const num::Tensor& X, const num::Tensor& Y, const CknnaConfig& cfg) {
  detail::check_pair(X, Y);
  cfg.validate(X.dim(0));
  auto a = mutual_knn_mask(centered_gram(to_matrix(X, cfg.normalize_rows)),
                           centered_gram(to_matrix(Y, cfg.normalize_rows)), cfg.k);
  const std::size_t B = X.dim(0);
  return num::Tensor({B, B}, std::vector<double>(a.data(), a.data() + a.size()));
}

inline constexpr double kSelfAlignmentFloor = 1e-12;

inline double cknna_score(const num::Tensor& X, const num::Tensor& Y, const CknnaConfig& cfg = {}) {
  detail::check_pair(X, Y);
  cfg.validate(X.dim(0));
  const Matrix K = centered_gram(to_matrix(X, cfg.normalize_rows));
  const Matrix L = centered_gram(to_matrix(Y, cfg.normalize_rows));
  const Matrix a = mutual_knn_mask(K, L, cfg.k);
  const double kk = detail::alignment(a, K, K), ll = detail::alignment(a, L, L);
  if (kk < kSelfAlignmentFloor || ll < kSelfAlignmentFloor) return 0.0;
  return detail::alignment(a, K, L) / std::sqrt(kk * ll);
}

struct SweepPoint {
  double axis_value = 0;  // layer index or timestep
  double score = 0;
};

// provider(t) returns one pooled [B,D] embedding per supervised layer at
// denoising time t. The encoder side is fixed.
template <class Provider>
std::vector<SweepPoint> layer_sweep(Provider&& provider, const num::Tensor& e_sa, double t_fixed,
                                    const CknnaConfig& cfg) {
  cfg.validate(e_sa.dim(0));
  std::vector<num::Tensor> layers = provider(t_fixed);
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    out.push_back({static_cast<double>(i), cknna_score(layers[i], e_sa, cfg)});
  return out;
}

template <class Provider>
std::vector<SweepPoint> timestep_sweep(Provider&& provider, const num::Tensor& e_sa, std::size_t layer_fixed,
                                       std::span<const double> t_grid, const CknnaConfig& cfg) {
  cfg.validate(e_sa.dim(0));
  std::vector<SweepPoint> out;
  for (double t : t_grid) {
    std::vector<num::Tensor> layers = provider(t);
    if (layer_fixed >= layers.size()) {
      throw ConfigError("timestep_sweep: layer " + std::to_string(layer_fixed) + " of " +
                        std::to_string(layers.size()));
    }
    out.push_back({t, cknna_score(layers[layer_fixed], e_sa, cfg)});
  }
  return out;
}

// Evenly spaced grid of n points over [lo, hi].
inline std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("pearson: need two equal-length series of >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw DegenerateInputError("pearson: constant series");
  return sxy / std::sqrt(sxx * syy);
}

// Ranks starting at 1, ties averaged.
inline std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  auto rx = ranks(x), ry = ranks(y);
  return pearson(rx, ry);
}

}  // namespace tlasa::cknna
