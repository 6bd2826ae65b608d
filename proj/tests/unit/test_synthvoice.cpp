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

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <thread>

#include "tlasa/numcore/ops.hpp"
#include "tlasa/synthvoice/batch.hpp"
#include "tlasa/synthvoice/dataset.hpp"
#include "tlasa/synthvoice/manifest.hpp"

using namespace tlasa;
using namespace tlasa::synth;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.train_speakers = 12;
  c.test_speakers = 4;
  c.test_utterances = 20;
  c.train_utts_per_speaker = 3;
  c.heldout_utts_per_speaker = 1;
  return c;
}

std::vector<double> pooled(const Utterance& u) {
  std::vector<double> m(u.features.dim, 0.0);
  for (std::size_t t = 0; t < u.features.frames; ++t)
    for (std::size_t d = 0; d < u.features.dim; ++d) m[d] += u.features.at(t, d);
  for (auto& v : m) v /= static_cast<double>(u.features.frames);
  return m;
}

PromptEmbedder mean_embedder() {
  return [](const num::Tensor& x, std::span<const std::size_t> len) {
    return num::mean_pool_time(x, len);
  };
}

}  // namespace

TEST_CASE("make_speakers boundaries and separation", "[synthvoice][speakers]") {
  CHECK_THROWS_AS(make_speakers(1, 16, 7), ConfigError);
  auto spk = make_speakers(37, 16, 7);
  REQUIRE(spk.size() == 37);
  const double max_cos = std::cos(5.0 * std::numbers::pi / 180.0);
  for (std::size_t i = 0; i < spk.size(); ++i) {
    double n = 0;
    for (double v : spk[i].latent) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-9);
    for (std::size_t j = i + 1; j < spk.size(); ++j) {
      double c = 0;
      for (std::size_t k = 0; k < 16; ++k) c += spk[i].latent[k] * spk[j].latent[k];
      CHECK(c < max_cos);
    }
  }
  auto again = make_speakers(37, 16, 7);
  for (std::size_t i = 0; i < spk.size(); ++i) CHECK(spk[i].latent == again[i].latent);
  // At most 72 directions fit 5 degrees apart on a circle.
  CHECK_THROWS_AS(make_speakers(100, 2, 7), ConfigError);
}

TEST_CASE("synth_utterance is linear in the speaker latent", "[synthvoice][utterance]") {
  auto cfg = small_config();
  auto mixing = make_mixing(cfg);
  auto spk = make_speakers(2, cfg.id_dim, 3);
  std::vector<int> tokens{1, 5, 9, 2, 31};
  auto a = synth_utterance(mixing, spk[0], tokens, 4, 0.0, 11);
  auto b = synth_utterance(mixing, spk[0], tokens, 4, 0.0, 99);
  CHECK(a.features.frames == 20);
  CHECK(a.features.values == b.features.values);

  auto c = synth_utterance(mixing, spk[1], tokens, 4, 0.0, 11);
  std::vector<double> dl(cfg.id_dim);
  for (std::size_t k = 0; k < cfg.id_dim; ++k) dl[k] = spk[0].latent[k] - spk[1].latent[k];
  auto expected = mixing.identity_vector(dl);
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t d = 0; d < cfg.feat_dim; ++d)
      CHECK(std::abs(a.features.at(t, d) - c.features.at(t, d) - expected[d]) < 1e-12);

  std::vector<int> bad{1, 32};
  CHECK_THROWS_AS(synth_utterance(mixing, spk[0], bad, 4, 0.0, 1), DomainError);
  CHECK_THROWS_AS(synth_utterance(mixing, spk[0], tokens, 4, -1.0, 1), DomainError);
}

// Independent oracle: ridge regression from pooled features to the latent.
TEST_CASE("speaker identity is linearly decodable", "[synthvoice][oracle]") {
  SynthConfig cfg;  // defaults, sigma = 0.1
  cfg.train_utts_per_speaker = 5;  // 200 speakers x 5 = 1000 fitting utterances
  cfg.heldout_utts_per_speaker = 0;
  cfg.test_utterances = 200;
  auto ds = generate_dataset(cfg);
  REQUIRE(ds.train.size() == 1000);

  auto latent_of = [&](int id) -> const std::vector<double>& {
    for (const auto& s : ds.train_speakers) if (s.speaker_id == id) return s.latent;
    for (const auto& s : ds.test_speakers) if (s.speaker_id == id) return s.latent;
    throw std::runtime_error("unknown speaker");
  };
  auto design = [&](const std::vector<Utterance>& utts, Eigen::MatrixXd& X, Eigen::MatrixXd& Y) {
    X.resize(static_cast<Eigen::Index>(utts.size()), static_cast<Eigen::Index>(cfg.feat_dim + 1));
    Y.resize(static_cast<Eigen::Index>(utts.size()), static_cast<Eigen::Index>(cfg.id_dim));
    for (std::size_t i = 0; i < utts.size(); ++i) {
      auto p = pooled(utts[i]);
      for (std::size_t d = 0; d < cfg.feat_dim; ++d) X(i, d) = p[d];
      X(i, cfg.feat_dim) = 1.0;
      const auto& l = latent_of(utts[i].speaker_id);
      for (std::size_t k = 0; k < cfg.id_dim; ++k) Y(i, k) = l[k];
    }
  };
  Eigen::MatrixXd X, Y;
  design(ds.train, X, Y);
  const double ridge = 1e-3;
  Eigen::MatrixXd A = X.transpose() * X + ridge * Eigen::MatrixXd::Identity(X.cols(), X.cols());
  Eigen::MatrixXd P = A.ldlt().solve(X.transpose() * Y);

  Eigen::MatrixXd Xt, Yt;
  design(ds.test, Xt, Yt);  // unseen speakers
  Eigen::MatrixXd pred = Xt * P;
  double mean_cos = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    mean_cos += pred.row(i).dot(Yt.row(i)) / (pred.row(i).norm() * Yt.row(i).norm());
  mean_cos /= static_cast<double>(pred.rows());
  INFO("mean decoded cosine " << mean_cos);
  CHECK(mean_cos > 0.95);
}

TEST_CASE("content tokens are recoverable at zero noise", "[synthvoice][oracle]") {
  auto cfg = small_config();
  cfg.noise_scale = 0.0;
  auto ds = generate_dataset(cfg);
  std::vector<std::vector<double>> table;
  for (std::size_t v = 0; v < cfg.vocab; ++v) table.push_back(ds.mixing.content_vector(static_cast<int>(v)));
  for (const auto& u : ds.test) {
    const SpeakerSpec* spk = nullptr;
    for (const auto& s : ds.test_speakers) if (s.speaker_id == u.speaker_id) spk = &s;
    REQUIRE(spk);
    auto id = ds.mixing.identity_vector(spk->latent);
    for (std::size_t t = 0; t < u.features.frames; ++t) {
      int best = -1;
      double best_d = 1e300;
      for (std::size_t v = 0; v < cfg.vocab; ++v) {
        double dist = 0;
        for (std::size_t d = 0; d < cfg.feat_dim; ++d) {
          double r = u.features.at(t, d) - id[d] - table[v][d];
          dist += r * r;
        }
        if (dist < best_d) { best_d = dist; best = static_cast<int>(v); }
      }
      CHECK(best == u.tokens[t / cfg.frames_per_token]);
    }
  }
}

TEST_CASE("dataset generation is deterministic and order independent", "[synthvoice][determinism]") {
  auto cfg = small_config();
  auto a = generate_dataset(cfg);
  auto b = generate_dataset(cfg);
  CHECK(dataset_hash(a) == dataset_hash(b));
  CHECK(a.train.size() == 36);
  CHECK(a.test.size() == 20);
  for (const auto& u : a.test) CHECK(u.speaker_id >= 12);

  // Produce the test split concurrently, in reverse order.
  std::vector<Utterance> par(cfg.test_utterances);
  std::vector<std::thread> workers;
  for (std::size_t i = cfg.test_utterances; i-- > 0;) {
    workers.emplace_back([&, i] {
      par[i] = make_item(cfg, a.mixing, a.test_speakers[i % a.test_speakers.size()], Split::kTest, i);
    });
  }
  for (auto& w : workers) w.join();
  for (std::size_t i = 0; i < par.size(); ++i) CHECK(par[i].features.values == a.test[i].features.values);

  cfg.seed += 1;
  CHECK(dataset_hash(generate_dataset(cfg)) != dataset_hash(a));
}

TEST_CASE("manifest round-trips the dataset", "[synthvoice][manifest]") {
  auto ds = generate_dataset(small_config());
  auto dir = std::filesystem::temp_directory_path() / "tlasa_test_manifest";
  std::filesystem::remove_all(dir);
  auto hash = write_dataset(dir, ds);
  auto loaded = read_dataset(dir);
  CHECK(loaded.hash == hash);
  CHECK(dataset_hash(loaded.dataset) == hash);
  REQUIRE(loaded.dataset.test.size() == ds.test.size());
  CHECK(loaded.dataset.test[3].features.values == ds.test[3].features.values);
  CHECK(loaded.dataset.train_speakers[2].latent == ds.train_speakers[2].latent);
  CHECK_THROWS_AS(read_dataset(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("make_batch masking contract", "[synthvoice][batch]") {
  auto cfg = small_config();
  auto ds = generate_dataset(cfg);
  std::vector<const Utterance*> items;
  for (std::size_t i = 0; i < 8; ++i) items.push_back(&ds.train[i * 3]);

  CHECK_THROWS_AS(make_batch(items, MaskRange{1.0, 1.0}, 5, mean_embedder()), ConfigError);

  auto b1 = make_batch(items, MaskRange{0.3, 0.9}, 5, mean_embedder());
  auto b2 = make_batch(items, MaskRange{0.3, 0.9}, 5, mean_embedder());
  for (std::size_t b = 0; b < b1.batch(); ++b) {
    CHECK(b1.spans[b].start == b2.spans[b].start);
    CHECK(b1.spans[b].length == b2.spans[b].length);
    const double frac = static_cast<double>(b1.spans[b].length) / static_cast<double>(b1.valid_len[b]);
    CHECK(frac >= 0.3 - 0.5 / static_cast<double>(b1.valid_len[b]));
    CHECK(frac <= 0.9 + 0.5 / static_cast<double>(b1.valid_len[b]));
    for (std::size_t t = b1.valid_len[b]; t < b1.frames(); ++t) CHECK(b1.mask[b * b1.frames() + t] == 0.0);
  }
  // c is the embedding of the unmasked (prompt) frames only.
  auto prompts = select_frames(b1.x1, b1.mask, b1.valid_len, false);
  for (std::size_t b = 0; b < b1.batch(); ++b) {
    std::vector<double> m(cfg.feat_dim, 0.0);
    for (std::size_t t = 0; t < prompts[b].frames; ++t)
      for (std::size_t d = 0; d < cfg.feat_dim; ++d) m[d] += prompts[b].at(t, d) / static_cast<double>(prompts[b].frames);
    for (std::size_t d = 0; d < cfg.feat_dim; ++d) CHECK(std::abs(b1.cond[b * cfg.feat_dim + d] - m[d]) < 1e-12);
    CHECK(prompts[b].frames + b1.spans[b].length == b1.valid_len[b]);
  }
}

TEST_CASE("forced mask fraction gives exact span lengths", "[synthvoice][batch]") {
  auto cfg = small_config();
  auto mixing = make_mixing(cfg);
  auto spk = make_speakers(2, cfg.id_dim, 1);
  std::vector<Utterance> utts;
  for (int i = 0; i < 6; ++i) {
    std::vector<int> tokens(25);
    for (std::size_t k = 0; k < tokens.size(); ++k) tokens[k] = static_cast<int>((k * 7 + i) % 32);
    utts.push_back(synth_utterance(mixing, spk[i % 2], tokens, 4, 0.1, i));
  }
  auto batch = make_batch(utts, MaskRange{0.5, 0.5}, 9, mean_embedder());
  for (std::size_t b = 0; b < batch.batch(); ++b) {
    CHECK(batch.valid_len[b] == 100);
    double masked = 0;
    for (std::size_t t = 0; t < 100; ++t) masked += batch.mask[b * 100 + t];
    CHECK(masked == 50.0);
  }
}
