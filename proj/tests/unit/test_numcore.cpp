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
#include <numbers>
#include <random>
#include <cstring>
#include <sstream>

#include "tlasa/numcore/gradcheck.hpp"
#include "tlasa/numcore/ops.hpp"
#include "tlasa/numcore/random.hpp"
#include "tlasa/numcore/serialize.hpp"

using namespace tlasa;
using namespace tlasa::num;
using Catch::Approx;

namespace {

Tensor T2(std::size_t r, std::size_t c, std::vector<double> v, bool rg = false) {
  return Tensor({r, c}, std::move(v), rg);
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("affine computes xW + b", "[numcore][affine]") {
  auto x = T2(1, 2, {1, 2});
  CHECK(vals(affine(x, T2(2, 2, {1, 0, 0, 1}), Tensor({2}, {0, 0}))) == std::vector<double>{1, 2});
  CHECK(vals(affine(x, T2(2, 2, {0, 0, 0, 0}), Tensor({2}, {3, 4}))) == std::vector<double>{3, 4});
  CHECK(vals(affine(x, T2(2, 2, {1, 2, 3, 4}), Tensor({2}, {1, 1}))) == std::vector<double>{8, 11});
}

TEST_CASE("affine rejects mismatched shapes naming both", "[numcore][affine]") {
  auto x = T2(1, 3, {1, 2, 3});
  try {
    affine(x, T2(2, 2, {1, 0, 0, 1}));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[1x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("softmax examples", "[numcore][softmax]") {
  auto u = softmax(Tensor({3}, {0, 0, 0}));
  for (double v : u.values()) CHECK(v == Approx(1.0 / 3).epsilon(1e-15));
  auto big = softmax(Tensor({2}, {1000, 1000}));
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);
  auto s = softmax(Tensor({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  CHECK(std::abs(s[0] - 1.0 / 6) < 1e-15);
  CHECK(std::abs(s[1] - 2.0 / 6) < 1e-15);
  CHECK(std::abs(s[2] - 3.0 / 6) < 1e-15);
}

TEST_CASE("softmax rows sum to one and ignore constant shifts", "[numcore][softmax][property]") {
  auto rng = make_stream(3, {1});
  for (int trial = 0; trial < 100; ++trial) {
    auto z = normal_tensor(rng, {4, 7}, 5.0);
    const double shift = 50.0 * (uniform01(rng) - 0.5);
    auto w = softmax(z);
    auto w2 = softmax(add_scalar(z, shift));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t i = 0; i < 7; ++i) {
        total += w[r * 7 + i];
        CHECK(w[r * 7 + i] >= 0);
        CHECK(std::abs(w[r * 7 + i] - w2[r * 7 + i]) < 1e-12);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("mean_pool_time examples and masking", "[numcore][pool]") {
  auto c = Tensor::full({1, 5, 3}, 2.5);
  auto pooled = mean_pool_time(c, std::vector<std::size_t>{5});
  for (double v : pooled.values()) CHECK(v == 2.5);
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  CHECK(vals(mean_pool_time(x, std::vector<std::size_t>{2})) == std::vector<double>{2, 3});
  Tensor y({1, 2, 2}, {1, 2, 9, 9});
  CHECK(vals(mean_pool_time(y, std::vector<std::size_t>{1})) == std::vector<double>{1, 2});
  CHECK_THROWS_AS(mean_pool_time(y, std::vector<std::size_t>{0}), DegenerateInputError);
}

TEST_CASE("mean_pool_time ignores frames beyond valid_len", "[numcore][pool][property]") {
  auto rng = make_stream(5, {2});
  for (int trial = 0; trial < 50; ++trial) {
    auto x = normal_tensor(rng, {3, 6, 4});
    std::vector<std::size_t> len{1 + rng() % 6, 1 + rng() % 6, 1 + rng() % 6};
    std::vector<double> garbage = vals(x);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = len[b]; t < 6; ++t)
        for (std::size_t d = 0; d < 4; ++d) garbage[(b * 6 + t) * 4 + d] = 1e6 * (uniform01(rng) - 0.5);
    CHECK(vals(mean_pool_time(x, len)) == vals(mean_pool_time(Tensor({3, 6, 4}, garbage), len)));
  }
}

TEST_CASE("cosine_similarity examples", "[numcore][cosine]") {
  auto a = T2(1, 3, {0.3, -1.2, 2.0});
  CHECK(cosine_similarity(a, a)[0] == Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(T2(1, 2, {1, 0}), T2(1, 2, {0, 1}))[0] == 0.0);
  CHECK(cosine_similarity(T2(1, 2, {1, 0}), T2(1, 2, {1, 1}))[0] ==
        Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  // Zero vectors are clamped rather than dividing by zero.
  CHECK(cosine_similarity(T2(1, 2, {0, 0}), T2(1, 2, {1, 1}))[0] == 0.0);
}

TEST_CASE("entropy examples and domain errors", "[numcore][entropy]") {
  auto u = Tensor::full({1, 12}, 1.0 / 12);
  CHECK(entropy(u)[0] == Approx(std::log(12.0)).epsilon(1e-14));
  CHECK(entropy(T2(1, 3, {0, 1, 0}))[0] == 0.0);
  CHECK(entropy(T2(1, 2, {0.5, 0.5}))[0] == Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK_THROWS_AS(entropy(T2(1, 2, {-0.1, 1.1})), DomainError);
  CHECK_THROWS_AS(entropy(T2(1, 2, {0.4, 0.4})), DomainError);
}

TEST_CASE("entropy of softmax is bounded by ln N", "[numcore][entropy][property]") {
  auto rng = make_stream(9, {3});
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t N = 2 + rng() % 14;
    auto z = normal_tensor(rng, {1, N}, 3.0);
    CHECK(entropy(softmax(z))[0] <= std::log(static_cast<double>(N)) + 1e-12);
  }
  for (std::size_t N : {2u, 5u, 12u}) {
    auto z = Tensor::full({1, N}, 0.37);
    CHECK(std::abs(entropy(softmax(z))[0] - std::log(static_cast<double>(N))) < 1e-9);
  }
}

TEST_CASE("check_gradients on a quadratic", "[numcore][gradcheck]") {
  Tensor x({3}, {1, 2, 3}, true);
  auto f = [](const Tensor& v) { return sum(v * v); };
  f(x).backward();
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
  CHECK(check_gradients(f, x, 1e-5) < 1e-6);
  CHECK_THROWS_AS(check_gradients(f, x, 1e-2), DomainError);
  CHECK_THROWS_AS(check_gradients([](const Tensor& v) { return scale(sum(v), std::nan("")); }, x),
                  NumericError);
}

// Every primitive against central differences on random small inputs.
TEST_CASE("primitive gradients match central differences", "[numcore][gradcheck][property]") {
  auto rng = make_stream(17, {4});
  constexpr double h = 1e-5, tol = 1e-5;
  double worst = 0;
  auto rec = [&](double e) { worst = std::max(worst, e); };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng() % 3, T = 1 + rng() % 4, D = 1 + rng() % 4, K = 1 + rng() % 3;
    auto x3 = normal_tensor(rng, {B, T, D}, 1.0, true);
    auto W = normal_tensor(rng, {D, K}, 1.0, true);
    auto b = normal_tensor(rng, {K}, 1.0, true);
    auto probe3 = normal_tensor(rng, {B, T, K});
    rec(check_gradients([&] { return sum(affine(x3, W, b) * probe3); }, {x3, W, b}, h));

    auto x2 = normal_tensor(rng, {B, D}, 1.0, true);
    auto y2 = normal_tensor(rng, {B, D}, 1.0, true);
    auto p2 = normal_tensor(rng, {B, D});
    auto pB = normal_tensor(rng, {B});
    rec(check_gradients([&] { return sum(silu(x2) * p2); }, {x2}, h));
    rec(check_gradients([&] { return sum((x2 * y2 - y2 + x2) * p2); }, {x2, y2}, h));
    rec(check_gradients([&] { return sum(softmax(x2) * p2); }, {x2}, h));
    // Direction ops need D >= 2; in one dimension their gradient vanishes identically.
    auto u2 = normal_tensor(rng, {B, D + 1}, 1.0, true);
    auto v2 = normal_tensor(rng, {B, D + 1}, 1.0, true);
    auto q2 = normal_tensor(rng, {B, D + 1});
    rec(check_gradients([&] { return sum(cosine_similarity(u2, v2) * pB); }, {u2, v2}, h));
    rec(check_gradients([&] { return sum(l2_normalize(u2) * q2); }, {u2}, h));
    rec(check_gradients([&] { return sum(row_sum(x2) * pB); }, {x2}, h));
    rec(check_gradients([&] { return sum(entropy(softmax(x2)) * pB); }, {x2}, h));

    std::vector<std::size_t> len(B);
    for (auto& l : len) l = 1 + rng() % T;
    auto pD = normal_tensor(rng, {B, D});
    auto p3 = normal_tensor(rng, {B, T, D});
    rec(check_gradients([&] { return sum(mean_pool_time(x3, len) * pD); }, {x3}, h));
    rec(check_gradients([&] { return sum(window_mean_time(x3, len, 1) * p3); }, {x3}, h));
    rec(check_gradients([&] { return sum(add_broadcast_time(x3, y2) * p3); }, {x3, y2}, h));

    std::vector<double> m(B * T);
    for (auto& v : m) v = rng() % 2;
    m[0] = 1;
    Tensor mask({B, T}, m);
    rec(check_gradients([&] { return masked_mean_square(x3, mask); }, {x3}, h));

    std::vector<int> labels(B);
    for (auto& l : labels) l = static_cast<int>(rng() % D);
    rec(check_gradients([&] { return cross_entropy(x2, labels); }, {x2}, h));

    auto table = normal_tensor(rng, {5, D}, 1.0, true);
    std::vector<int> ids(B * T);
    for (auto& i : ids) i = static_cast<int>(rng() % 5);
    rec(check_gradients([&] { return sum(embedding_lookup(table, ids, {B, T}) * p3); }, {table}, h));

    auto c0 = normal_tensor(rng, {B}, 1.0, true), c1 = normal_tensor(rng, {B}, 1.0, true);
    auto pBN = normal_tensor(rng, {B, 2});
    rec(check_gradients([&] { return sum(stack_columns({c0, c1}) * pBN); }, {c0, c1}, h));
    rec(check_gradients([&] { return mean(scale(x2.reshaped({B * D}), 0.7)); }, {x2}, h));
  }
  INFO("worst relative error " << worst);
  CHECK(worst < tol);
}

TEST_CASE("backward visits a shared subexpression once", "[numcore][graph]") {
  Tensor x({1}, {3.0}, true);
  auto y = x * x;        // 9
  auto z = sum(y + y);   // 2x^2
  z.backward();
  CHECK(x.grad()[0] == 12.0);
  // A second backward accumulates into the leaf.
  sum(y + y).backward();
  CHECK(x.grad()[0] == 24.0);
}

TEST_CASE("no-grad mode records nothing", "[numcore][graph]") {
  Tensor x({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = sum(x * x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("tensor serialization round-trips bit-exactly", "[numcore][serialize]") {
  auto rng = make_stream(21, {5});
  for (int trial = 0; trial < 20; ++trial) {
    auto t = normal_tensor(rng, {2, 1 + rng() % 4, 3}, std::pow(10.0, static_cast<double>(rng() % 20) - 10));
    auto j = to_json(t);
    auto back = tensor_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.shape() == t.shape());
    CHECK(std::memcmp(back.data(), t.data(), t.numel() * sizeof(double)) == 0);

    std::stringstream ss;
    write_binary(ss, t);
    auto bin = read_binary(ss);
    CHECK(bin.shape() == t.shape());
    CHECK(std::memcmp(bin.data(), t.data(), t.numel() * sizeof(double)) == 0);
  }
  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_binary(bad), IoError);
}
