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

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "tlasa/fm_core/flow.hpp"
#include "tlasa/numcore/gradcheck.hpp"
#include "tlasa/tla_sa/tla_sa.hpp"

using namespace tlasa;
using namespace tlasa::tla;
using num::Tensor;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Adapter whose output is `row` for every input.
num::Mlp2 constant_adapter(std::size_t in, const std::vector<double>& row) {
  auto rng = make_stream(1, {1});
  auto m = num::Mlp2::init(rng, in, 4, row.size());
  m.second.W = Tensor::zeros({4, row.size()}, true);
  m.second.b = Tensor({row.size()}, row, true);
  return m;
}

Tensor repeat_rows(const std::vector<double>& row, std::size_t B) {
  std::vector<double> v;
  for (std::size_t b = 0; b < B; ++b) v.insert(v.end(), row.begin(), row.end());
  return Tensor({B, row.size()}, v);
}

Tensor unit_rows(std::mt19937_64& rng, std::size_t B, std::size_t D) {
  auto x = normal_tensor(rng, {B, D});
  num::NoGradGuard g;
  return num::l2_normalize(x).detach();
}

}  // namespace

TEST_CASE("pooled layer embedding") {
  SECTION("constant tap pools to its value") {
    std::vector<double> v;
    for (std::size_t t = 0; t < 5; ++t) v.insert(v.end(), {0.5, -2.0, 3.0});
    std::vector<std::size_t> len{3};
    auto e = pooled_layer_embedding(Tensor({1, 5, 3}, v), len);
    CHECK(vec(e) == std::vector<double>{0.5, -2.0, 3.0});
  }
  SECTION("garbage padding is ignored and pooling commutes with permutation") {
    auto rng = make_stream(2, {1});
    auto x = normal_tensor(rng, {3, 6, 4});
    std::vector<std::size_t> len{6, 2, 4};
    auto base = pooled_layer_embedding(x, len);
    auto g = vec(x);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = len[b]; t < 6; ++t)
        for (std::size_t d = 0; d < 4; ++d) g[(b * 6 + t) * 4 + d] = 1e9;
    CHECK(vec(pooled_layer_embedding(Tensor({3, 6, 4}, g), len)) == vec(base));

    std::vector<std::size_t> perm{2, 0, 1};
    std::vector<double> px(x.numel());
    std::vector<std::size_t> plen(3);
    for (std::size_t b = 0; b < 3; ++b) {
      std::copy_n(x.values().begin() + perm[b] * 24, 24, px.begin() + b * 24);
      plen[b] = len[perm[b]];
    }
    auto p = pooled_layer_embedding(Tensor({3, 6, 4}, px), plen);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t d = 0; d < 4; ++d) CHECK(p[b * 4 + d] == base[perm[b] * 4 + d]);
  }
}

TEST_CASE("layer SA loss examples") {
  const std::vector<double> e{0.6, 0.0, 0.8};
  auto pooled = Tensor::full({2, 5}, 0.3);
  auto e_sa = repeat_rows(e, 2);
  auto same = layer_sa_loss(pooled, constant_adapter(5, e), e_sa);
  auto anti = layer_sa_loss(pooled, constant_adapter(5, {-0.6, 0.0, -0.8}), e_sa);
  auto orth = layer_sa_loss(pooled, constant_adapter(5, {0.0, 2.0, 0.0}), e_sa);
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(same[b] == Catch::Approx(0.0).margin(1e-15));
    CHECK(anti[b] == Catch::Approx(2.0).epsilon(1e-15));
    CHECK(orth[b] == Catch::Approx(1.0).epsilon(1e-15));
  }
  CHECK(layer_sa_loss(pooled, constant_adapter(5, e), e_sa, Distance::kL2)[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(layer_sa_loss(pooled, constant_adapter(5, {1.0, 0.0}), e_sa), DimensionError);
}

TEST_CASE("E_SA receives no gradient") {
  auto rng = make_stream(3, {1});
  auto e_sa = unit_rows(rng, 2, 3).clone_leaf(true);
  auto pooled = normal_tensor(rng, {2, 5}, 1.0, true);
  auto adapter = num::Mlp2::init(rng, 5, 4, 3);
  num::sum(layer_sa_loss(pooled, adapter, e_sa)).backward();
  for (double g : e_sa.grad()) CHECK(g == 0.0);
  double gp = 0;
  for (double g : pooled.grad()) gp += std::abs(g);
  CHECK(gp > 0);
}

TEST_CASE("time weights") {
  TlaConfig cfg;
  SECTION("zero-initialised output layer gives uniform rows") {
    cfg.zero_init_time_output = true;
    TimeAdapter ta(cfg, 1);
    std::vector<double> t{0.0, 0.3, 1.0};
    auto w = time_weights(ta, t);
    for (double v : w.values()) CHECK(v == Catch::Approx(1.0 / 12.0).epsilon(1e-15));
  }
  SECTION("rows are simplex rows and depend only on t") {
    TimeAdapter ta(cfg, 2);
    auto rng = make_stream(9, {1});
    std::vector<double> t(1000);
    for (auto& ti : t) ti = uniform01(rng);
    t[10] = t[500];
    auto w = time_weights(ta, t);
    for (std::size_t b = 0; b < 1000; ++b) {
      double s = 0;
      for (std::size_t i = 0; i < 12; ++i) {
        CHECK(w[b * 12 + i] >= 0.0);
        s += w[b * 12 + i];
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
    for (std::size_t i = 0; i < 12; ++i) CHECK(w[10 * 12 + i] == w[500 * 12 + i]);
    std::vector<double> one{t[7]};
    auto single = time_weights(ta, one);
    for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(single[i] - w[7 * 12 + i]) < 1e-15);
  }
  SECTION("t outside [0,1] is rejected") {
    TimeAdapter ta(cfg, 2);
    std::vector<double> t{0.5, 1.01};
    CHECK_THROWS_AS(time_weights(ta, t), DomainError);
  }
}

TEST_CASE("TLA-SA composition") {
  SECTION("uniform weights, equal layer losses") {
    const double L = 0.37;
    auto sa = Tensor::full({4, 12}, L);
    auto loss = tla_sa_loss(sa, uniform_weights(4, 12), 0.01);
    CHECK(loss.item() == Catch::Approx(L - 0.01 * std::log(12.0)).epsilon(1e-14));
    CHECK(0.01 * std::log(12.0) == Catch::Approx(0.02485).margin(5e-6));
  }
  SECTION("one-hot weights with alpha 0 select the layer") {
    auto rng = make_stream(4, {1});
    auto sa = normal_tensor(rng, {1, 12});
    for (std::size_t j = 0; j < 12; ++j) {
      std::vector<double> w(12, 0.0);
      w[j] = 1.0;
      CHECK(tla_sa_loss(sa, Tensor({1, 12}, w), 0.0).item() == sa[j]);
    }
  }
  SECTION("random instance against a scalar oracle") {
    auto rng = make_stream(5, {1});
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t B = 1 + trial % 5, N = 2 + trial % 11;
      std::vector<double> sa(B * N), w(B * N);
      for (auto& v : sa) v = 2.0 * uniform01(rng);
      for (std::size_t b = 0; b < B; ++b) {
        double s = 0;
        for (std::size_t i = 0; i < N; ++i) s += (w[b * N + i] = 0.05 + uniform01(rng));
        for (std::size_t i = 0; i < N; ++i) w[b * N + i] /= s;
      }
      const double alpha = 0.01 * (1 + trial);
      double oracle = 0;
      for (std::size_t b = 0; b < B; ++b) {
        double item = 0, h = 0;
        for (std::size_t i = 0; i < N; ++i) {
          item += w[b * N + i] * sa[b * N + i];
          h -= w[b * N + i] * std::log(w[b * N + i]);
        }
        oracle += item + alpha * (-h);
      }
      oracle /= static_cast<double>(B);
      const double got = tla_sa_loss(Tensor({B, N}, sa), Tensor({B, N}, w), alpha).item();
      CHECK(std::abs(got - oracle) < 1e-12);
    }
  }
  SECTION("shape mismatch") {
    CHECK_THROWS_AS(tla_sa_loss(Tensor::zeros({2, 12}), uniform_weights(2, 11), 0.01), DimensionError);
  }
}

TEST_CASE("total loss") {
  CHECK(kDefaultAlpha == 0.01);
  CHECK(kDefaultLambda == 0.5);
  TlaConfig cfg;
  CHECK(cfg.alpha == 0.01);
  CHECK(cfg.lambda == 0.5);
  CHECK(total_loss(Tensor::scalar(1.0), Tensor::scalar(2.0), 0.5).item() == 2.0);
  CHECK(total_loss(Tensor::scalar(0.8125), Tensor::scalar(7.0), 0.0).item() == 0.8125);
  CHECK_THROWS_AS(total_loss(Tensor::scalar(1.0), Tensor::scalar(2.0), -0.1), DomainError);
}

TEST_CASE("entropy penalty gradient pushes weights toward uniform") {
  auto rng = make_stream(6, {1});
  const std::size_t N = 12;
  for (int row = 0; row < 100; ++row) {
    auto z = normal_tensor(rng, {1, N}, 1.5, true);
    auto w = num::softmax(z);
    const double before = *std::max_element(w.values().begin(), w.values().end());
    // Layer losses contribute nothing; only the regulariser remains.
    tla_sa_loss(Tensor::zeros({1, N}), w, 0.01).backward();
    auto zv = vec(z);
    for (std::size_t i = 0; i < N; ++i) zv[i] -= 1.0 * z.grad()[i];
    auto w2 = num::softmax(Tensor({1, N}, zv));
    const double after = *std::max_element(w2.values().begin(), w2.values().end());
    CHECK(after < before);
  }
}

TEST_CASE("TLA-SA head composition and modes") {
  TlaConfig cfg;
  cfg.layers = 3;
  cfg.tap_dim = 5;
  cfg.embed_dim = 4;
  auto rng = make_stream(7, {1});
  std::vector<Tensor> taps;
  for (int i = 0; i < 3; ++i) taps.push_back(normal_tensor(rng, {2, 6, 5}));
  std::vector<std::size_t> len{6, 4};
  auto e_sa = unit_rows(rng, 2, 4);
  std::vector<double> t{0.2, 0.9};

  cfg.mode = Mode::kLayerOnly;
  TlaHead only(cfg, 3);
  auto p = only.evaluate(taps, len, e_sa, t);
  for (double v : p.w.values()) CHECK(v == 1.0 / 3.0);
  for (std::size_t i = 0; i < 3; ++i) {
    auto li = layer_sa_loss(pooled_layer_embedding(taps[i], len), only.bank[i], e_sa);
    CHECK(p.sa[i] == li[0]);
    CHECK(p.sa[3 + i] == li[1]);
  }

  cfg.mode = Mode::kLayerTime;
  TlaHead full(cfg, 3);
  auto q = full.evaluate(taps, len, e_sa, t);
  CHECK(vec(q.w) == vec(time_weights(full.time, t)));
  auto total = total_loss(Tensor::scalar(0.7), q.loss, 0.5);
  auto bd = breakdown(Tensor::scalar(0.7), q, total, 0.01, 0.5);
  CHECK(std::abs(bd.total - (bd.cfm + 0.5 * bd.tla_sa)) < 1e-12);
  double weighted = 0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i) weighted += q.w[b * 3 + i] * bd.sa_per_layer[b * 3 + i];
  CHECK(std::abs(bd.tla_sa - (weighted / 2.0 + 0.01 * bd.reg)) < 1e-12);

  std::vector<Tensor> two(taps.begin(), taps.begin() + 2);
  CHECK_THROWS_AS(full.evaluate(two, len, e_sa, t), DimensionError);
  CHECK(parse_mode("layer_time") == Mode::kLayerTime);
  CHECK_THROWS_AS(parse_mode("time_only"), ConfigError);
}

TEST_CASE("total loss gradient matches central differences for every parameter group") {
  fm::FieldConfig fc;
  fc.feat_dim = 4;
  fc.hidden = 8;
  fc.layers = 3;
  fc.cond_dim = 3;
  fc.vocab = 5;
  fc.frames_per_token = 2;
  fc.time_dim = 8;
  fm::VectorFieldNet net(fc, 31);
  {
    auto rng = make_stream(8, {1});
    auto& out = net.output_projection();
    out.W = normal_tensor(rng, out.W.shape(), 0.3, true);
    out.b = normal_tensor(rng, out.b.shape(), 0.3, true);
  }
  TlaConfig tc;
  tc.layers = 3;
  tc.tap_dim = 8;
  tc.embed_dim = 3;
  tc.adapter_hidden = 6;
  tc.time_dim = 8;
  tc.time_hidden = 6;
  TlaHead head(tc, 32);

  auto rng = make_stream(9, {1});
  const std::size_t B = 2, T = 8;
  auto x1 = normal_tensor(rng, {B, T, 4});
  auto x0 = normal_tensor(rng, {B, T, 4});
  auto cond = unit_rows(rng, B, 3);
  std::vector<double> m(B * T, 0.0);
  for (std::size_t t = 2; t < 6; ++t) m[t] = m[T + t] = 1.0;
  auto mask = Tensor({B, T}, m);
  std::vector<std::vector<int>> tokens{{0, 1, 2, 3}, {4, 3, 2, 1}};
  std::vector<std::size_t> len{8, 7};
  std::vector<double> t{0.35, 0.8};
  auto xt = fm::compose_input(fm::sample_ot_path(x0, x1, t), x1, mask);

  auto f = [&] {
    auto out = net.forward({xt, mask, t, &tokens, cond, len});
    auto cfm = fm::cfm_loss(out.v, x0, x1, mask);
    return total_loss(cfm, head.evaluate(out.taps, len, cond, t).loss, 0.5);
  };
  auto group = [](std::vector<num::NamedParam> ps) {
    std::vector<Tensor> out;
    for (auto& p : ps) out.push_back(*p.tensor);
    return out;
  };
  const double trunk = num::check_gradients(f, group(net.parameters()), 1e-5);
  const double adapters = num::check_gradients(f, group(head.adapter_parameters()), 1e-5);
  const double time = num::check_gradients(f, group(head.time_parameters()), 1e-5);
  INFO("trunk " << trunk << " adapters " << adapters << " time " << time);
  CHECK(trunk < 1e-4);
  CHECK(adapters < 1e-4);
  CHECK(time < 1e-4);
}
