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

#include <cmath>

#include "tlasa/fm_core/flow.hpp"
#include "tlasa/numcore/gradcheck.hpp"

using namespace tlasa;
using namespace tlasa::fm;
using num::Tensor;

namespace {

struct Toy {
  Tensor x1, x0, mask, cond;
  std::vector<std::vector<int>> tokens;
  std::vector<std::size_t> valid_len;
  std::vector<double> t;
};

Toy make_toy(const FieldConfig& cfg, std::size_t B, std::size_t T, std::uint64_t seed) {
  auto rng = make_stream(seed, {1234});
  Toy toy;
  toy.x1 = normal_tensor(rng, {B, T, cfg.feat_dim});
  toy.x0 = normal_tensor(rng, {B, T, cfg.feat_dim});
  toy.cond = normal_tensor(rng, {B, cfg.cond_dim});
  std::vector<double> m(B * T, 0.0);
  std::uniform_int_distribution<int> tok(0, static_cast<int>(cfg.vocab) - 1);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t L = T - (b % 2);  // odd items carry one padding frame
    toy.valid_len.push_back(L);
    for (std::size_t t = L / 3; t < L / 3 + L / 2; ++t) m[b * T + t] = 1.0;
    std::vector<int> ids;
    for (std::size_t k = 0; k < (T + cfg.frames_per_token - 1) / cfg.frames_per_token; ++k) ids.push_back(tok(rng));
    toy.tokens.push_back(ids);
    toy.t.push_back(uniform01(rng));
  }
  toy.mask = Tensor({B, T}, m);
  return toy;
}

FieldConfig tiny_config() {
  FieldConfig c;
  c.feat_dim = 4;
  c.hidden = 8;
  c.layers = 3;
  c.cond_dim = 3;
  c.vocab = 5;
  c.frames_per_token = 2;
  c.time_dim = 8;
  return c;
}

void randomize_output(VectorFieldNet& net, std::uint64_t seed) {
  auto rng = make_stream(seed, {77});
  auto& out = net.output_projection();
  out.W = normal_tensor(rng, out.W.shape(), 0.3, true);
  out.b = normal_tensor(rng, out.b.shape(), 0.3, true);
}

FieldOutput run(const VectorFieldNet& net, const Toy& toy, const Tensor& x) {
  return net.forward({x, toy.mask, toy.t, &toy.tokens, toy.cond, toy.valid_len});
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("OT path endpoints and midpoint") {
  auto rng = make_stream(1, {1});
  auto x0 = normal_tensor(rng, {3, 4, 2});
  auto x1 = normal_tensor(rng, {3, 4, 2});
  std::vector<double> t{0.0, 1.0, 0.25};
  auto xt = sample_ot_path(x0, x1, t);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(xt[k] == x0[k]);
    CHECK(xt[8 + k] == x1[8 + k]);
    CHECK(xt[16 + k] == Catch::Approx(0.75 * x0[16 + k] + 0.25 * x1[16 + k]).epsilon(1e-15));
  }
  std::vector<double> half{0.5};
  CHECK(sample_ot_path(Tensor({1}, {0.0}), Tensor({1}, {2.0}), half).item() == 1.0);

  std::vector<double> bad{0.0, 1.5, 0.5};
  CHECK_THROWS_AS(sample_ot_path(x0, x1, bad), DomainError);
  std::vector<double> neg{-0.1, 0.5, 0.5};
  CHECK_THROWS_AS(sample_ot_path(x0, x1, neg), DomainError);
}

TEST_CASE("CFM loss examples") {
  SECTION("perfect prediction") {
    auto rng = make_stream(2, {1});
    auto x0 = normal_tensor(rng, {2, 3, 2});
    auto x1 = normal_tensor(rng, {2, 3, 2});
    auto v = x1 - x0;
    CHECK(cfm_loss(v, x0, x1, Tensor::full({2, 3}, 1.0)).item() == 0.0);
  }
  SECTION("scalar hand arithmetic") {
    CHECK(cfm_loss(Tensor({1, 1, 1}, {1.0}), Tensor({1, 1, 1}, {0.0}), Tensor({1, 1, 1}, {2.0}),
                   Tensor({1, 1}, {1.0}))
              .item() == 1.0);
  }
  SECTION("garbage on unmasked frames does not count") {
    auto rng = make_stream(3, {1});
    auto x0 = normal_tensor(rng, {2, 4, 3});
    auto x1 = normal_tensor(rng, {2, 4, 3});
    auto v = normal_tensor(rng, {2, 4, 3});
    std::vector<double> m{1, 0, 1, 0, 0, 1, 0, 1};
    auto garbage = vec(v);
    for (std::size_t bt = 0; bt < 8; ++bt)
      if (m[bt] == 0.0)
        for (std::size_t d = 0; d < 3; ++d) garbage[bt * 3 + d] = 1e6 * (d + 1.0);
    auto mask = Tensor({2, 4}, m);
    const double a = cfm_loss(v, x0, x1, mask).item();
    const double b = cfm_loss(Tensor({2, 4, 3}, garbage), x0, x1, mask).item();
    CHECK(a == b);
    double oracle = 0;
    for (std::size_t bt = 0; bt < 8; ++bt)
      if (m[bt] == 1.0)
        for (std::size_t d = 0; d < 3; ++d) {
          const double e = v[bt * 3 + d] - (x1[bt * 3 + d] - x0[bt * 3 + d]);
          oracle += e * e;
        }
    CHECK(a == Catch::Approx(oracle / 12.0).epsilon(1e-14));
  }
  SECTION("errors") {
    auto z = Tensor::zeros({1, 2, 2});
    CHECK_THROWS_AS(cfm_loss(z, z, z, Tensor::zeros({1, 2})), DegenerateInputError);
    CHECK_THROWS_AS(cfm_loss(z, z, z, Tensor::full({1, 2}, 0.5)), DomainError);
    CHECK_THROWS_AS(cfm_loss(z, Tensor::zeros({1, 2, 3}), z, Tensor::full({1, 2}, 1.0)), DimensionError);
  }
}

TEST_CASE("vector field forward structure") {
  FieldConfig cfg;
  VectorFieldNet net(cfg, 7);
  auto toy = make_toy(cfg, 3, 10, 4);
  auto xin = compose_input(toy.x0, toy.x1, toy.mask);

  auto out = run(net, toy, xin);
  REQUIRE(out.taps.size() == 12);
  for (double v : out.v.values()) CHECK(v == 0.0);
  for (const auto& tap : out.taps) {
    CHECK(tap.shape() == num::Shape{3, 10, 64});
    CHECK(num::all_finite(tap));
  }

  auto again = run(net, toy, xin);
  CHECK(vec(again.v) == vec(out.v));
  for (std::size_t i = 0; i < 12; ++i) CHECK(vec(again.taps[i]) == vec(out.taps[i]));

  // The last tap feeds the output projection directly.
  randomize_output(net, 1);
  auto out2 = run(net, toy, xin);
  auto direct = net.output_projection()(out2.taps.back());
  CHECK(vec(direct) == vec(out2.v));

  FieldConfig sw = cfg;
  sw.sandwich = true;
  VectorFieldNet wide(sw, 7);
  CHECK(wide.total_blocks() == 16);
  CHECK(run(wide, toy, xin).taps.size() == 12);
}

TEST_CASE("vector field input validation") {
  FieldConfig cfg = tiny_config();
  VectorFieldNet net(cfg, 3);
  auto toy = make_toy(cfg, 2, 6, 1);
  auto xin = compose_input(toy.x0, toy.x1, toy.mask);
  auto bad = vec(xin);
  bad[5] = std::nan("");
  CHECK_THROWS_AS(run(net, toy, Tensor(xin.shape(), bad)), NumericError);
  CHECK_THROWS_AS(run(net, toy, Tensor::zeros({2, 6, 5})), DimensionError);
  auto toks = toy;
  toks.tokens[0][0] = 99;
  CHECK_THROWS_AS(run(net, toks, xin), DomainError);
  auto c = toy;
  c.cond = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(run(net, c, xin), DimensionError);
}

TEST_CASE("permuting batch items permutes outputs") {
  FieldConfig cfg;
  VectorFieldNet net(cfg, 9);
  randomize_output(net, 2);
  const std::size_t B = 4, T = 9, D = cfg.feat_dim;
  auto toy = make_toy(cfg, B, T, 5);
  auto xin = compose_input(toy.x0, toy.x1, toy.mask);
  auto base = run(net, toy, xin);

  std::vector<std::size_t> perm{2, 0, 3, 1};
  Toy p = toy;
  std::vector<double> px(xin.numel()), pm(B * T), pc(B * cfg.cond_dim);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t s = perm[b];
    std::copy_n(xin.values().begin() + s * T * D, T * D, px.begin() + b * T * D);
    std::copy_n(toy.mask.values().begin() + s * T, T, pm.begin() + b * T);
    std::copy_n(toy.cond.values().begin() + s * cfg.cond_dim, cfg.cond_dim, pc.begin() + b * cfg.cond_dim);
    p.tokens[b] = toy.tokens[s];
    p.valid_len[b] = toy.valid_len[s];
    p.t[b] = toy.t[s];
  }
  p.mask = Tensor({B, T}, pm);
  p.cond = Tensor({B, cfg.cond_dim}, pc);
  auto permuted = run(net, p, Tensor(xin.shape(), px));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < T * D; ++i)
      CHECK(std::abs(permuted.v[b * T * D + i] - base.v[perm[b] * T * D + i]) < 1e-12);
}

TEST_CASE("CFM gradient matches central differences on a 2x8x4 toy") {
  FieldConfig cfg = tiny_config();
  for (bool mixing : {true, false}) {
    cfg.window_mixing = mixing;
    VectorFieldNet net(cfg, 21);
    randomize_output(net, 3);
    auto toy = make_toy(cfg, 2, 8, 6);
    auto xt = compose_input(sample_ot_path(toy.x0, toy.x1, toy.t), toy.x1, toy.mask);
    auto params = net.parameters();
    std::vector<Tensor> leaves;
    for (auto& p : params) leaves.push_back(*p.tensor);
    auto f = [&] { return cfm_loss(run(net, toy, xt).v, toy.x0, toy.x1, toy.mask); };
    const double err = num::check_gradients(f, leaves, 1e-5);
    INFO("mixing=" << mixing << " worst relative error " << err);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("Euler sampler closed forms") {
  const std::size_t B = 2, T = 3, D = 2;
  auto ones = Tensor::full({B, T}, 1.0);
  auto zero = Tensor::zeros({B, T, D});
  SECTION("constant field integrates to the constant") {
    auto rng = make_stream(4, {1});
    auto g = normal_tensor(rng, {B, T, D});
    for (std::size_t steps : {1u, 7u, 32u}) {
      auto x = ode_integrate([&](const Tensor&, std::span<const double>) { return g; }, zero, zero, ones,
                             {steps, true});
      for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x[i] == Catch::Approx(g[i]).epsilon(1e-12));
    }
  }
  SECTION("linear field follows the Euler recurrence") {
    auto rng = make_stream(5, {1});
    auto x0 = normal_tensor(rng, {B, T, D});
    for (std::size_t n : {1u, 4u, 32u}) {
      auto x = ode_integrate([](const Tensor& s, std::span<const double>) { return s; }, x0, zero, ones, {n, true});
      const double f = std::pow(1.0 + 1.0 / static_cast<double>(n), static_cast<double>(n));
      for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x[i] == Catch::Approx(x0[i] * f).epsilon(1e-12));
    }
  }
  SECTION("zero steps and divergence are rejected") {
    auto id = [](const Tensor& s, std::span<const double>) { return s; };
    CHECK_THROWS_AS(ode_integrate(id, zero, zero, ones, {0, true}), DomainError);
    auto blow = [](const Tensor& s, std::span<const double> t) {
      return Tensor::full(s.shape(), t[0] > 0 ? std::nan("") : 1.0);
    };
    try {
      ode_integrate(blow, zero, zero, ones, {4, true});
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
  }
}

TEST_CASE("sampling keeps prompt frames bit-exact and is deterministic") {
  FieldConfig cfg;
  VectorFieldNet net(cfg, 11);
  randomize_output(net, 4);
  auto toy = make_toy(cfg, 3, 12, 8);
  SampleRequest req{toy.x1, toy.mask, toy.tokens, toy.cond, toy.valid_len};
  for (bool each : {true, false}) {
    auto a = ode_sample(net, req, 42, {8, each});
    auto b = ode_sample(net, req, 42, {8, each});
    CHECK(vec(a) == vec(b));
    const std::size_t T = 12, D = cfg.feat_dim;
    for (std::size_t bt = 0; bt < 3 * T; ++bt) {
      if (toy.mask[bt] != 0.0) continue;
      for (std::size_t d = 0; d < D; ++d) CHECK(a[bt * D + d] == toy.x1[bt * D + d]);
    }
    auto gen = generated_frames(a, req);
    REQUIRE(gen.size() == 3);
    std::size_t masked = 0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = 0; t < toy.valid_len[b]; ++t) masked += toy.mask[b * T + t] != 0.0;
    CHECK(gen[0].frames + gen[1].frames + gen[2].frames == masked);
  }
}
