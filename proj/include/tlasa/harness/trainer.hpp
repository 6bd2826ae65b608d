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

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "tlasa/harness/config.hpp"

namespace tlasa::harness {

struct LossRow {
  std::size_t step = 0;
  double cfm = 0, tla_sa = 0, total = 0;
};

// Fits the trunk (and, depending on the mode, the alignment head) one batch
// at a time. Data order, trunk init and flow noise depend only on the run
// seed, so runs that differ only in loss mode see identical inputs.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, const synth::Dataset& ds, const spk::SpeakerEncoder& enc_a)
      : cfg_(cfg),
        ds_(ds),
        enc_a_(enc_a),
        net_(cfg.model, cfg.train.seed),
        head_(cfg.tla, cfg.train.seed),
        opt_(cfg.adamw) {
    if (!enc_a.frozen()) throw DomainError("trainer: supervising encoder must be frozen");
    if (ds.train.empty()) throw ConfigError("trainer: empty training split");
    trunk_group_ = opt_.add_group(net_.parameters());
    adapter_group_ = opt_.add_group(head_.adapter_parameters());
    time_group_ = opt_.add_group(head_.time_parameters());
  }

  // True when the alignment loss contributes gradient.
  bool alignment_active() const { return cfg_.tla.mode != tla::Mode::kBaseline && cfg_.tla.lambda > 0; }

  synth::TrainBatch draw_batch(std::size_t step) const {
    auto rng = make_stream(cfg_.train.seed, {kStreamBatch, step});
    std::uniform_int_distribution<std::size_t> pick(0, ds_.train.size() - 1);
    std::vector<const synth::Utterance*> utts;
    for (std::size_t i = 0; i < cfg_.train.batch; ++i) utts.push_back(&ds_.train[pick(rng)]);
    const std::uint64_t span_seed = rng();
    return synth::make_batch(std::span<const synth::Utterance* const>(utts), cfg_.mask, span_seed,
                             enc_a_.as_embedder());
  }

  num::Tensor esa_for(const synth::TrainBatch& batch) const {
    if (cfg_.esa_source == EsaSource::kPrompt) return batch.cond;
    auto target = synth::select_frames(batch.x1, batch.mask, batch.valid_len, /*masked=*/true);
    num::NoGradGuard guard;
    return enc_a_.embed(target);
  }

  LossRow step() {
    const std::size_t s = step_;
    auto batch = draw_batch(s);
    auto rng = make_stream(cfg_.train.seed, {kStreamFlowNoise, s});
    auto x0 = normal_tensor(rng, batch.x1.shape());
    std::vector<double> t(batch.batch());
    for (auto& ti : t) ti = uniform01(rng);
    auto xin = fm::compose_input(fm::sample_ot_path(x0, batch.x1, t), batch.x1, batch.mask);

    auto out = net_.forward({xin, batch.mask, t, &batch.tokens, batch.cond, batch.valid_len});
    auto cfm = fm::cfm_loss(out.v, x0, batch.x1, batch.mask);
    auto e_sa = esa_for(batch);

    LossRow row;
    row.step = s;
    std::vector<std::size_t> groups{trunk_group_};
    num::Tensor total;
    if (alignment_active()) {
      auto parts = head_.evaluate(out.taps, batch.valid_len, e_sa, t);
      total = tla::total_loss(cfm, parts.loss, cfg_.tla.lambda);
      row.tla_sa = parts.loss.item();
      groups.push_back(adapter_group_);
      if (cfg_.tla.mode == tla::Mode::kLayerTime) groups.push_back(time_group_);
    } else {
      {
        // Logged only; the head is never updated on this path.
        num::NoGradGuard guard;
        row.tla_sa = head_.evaluate(out.taps, batch.valid_len, e_sa, t).loss.item();
      }
      total = cfm;
    }
    row.cfm = cfm.item();
    row.total = total.item();
    if (!std::isfinite(row.total)) throw NumericError("trainer: non-finite loss at step " + std::to_string(s));

    opt_.zero_grad();
    total.backward();
    opt_.step(cfg_.schedule(static_cast<long>(s)), groups);
    ++step_;
    return row;
  }

  std::size_t steps_done() const { return step_; }
  const fm::VectorFieldNet& net() const { return net_; }
  fm::VectorFieldNet& net() { return net_; }
  const tla::TlaHead& head() const { return head_; }
  tla::TlaHead& head() { return head_; }

  nlohmann::json checkpoint_json() {
    nlohmann::json j{{"kind", "tlasa_fm"},
                     {"step", step_},
                     {"config", cfg_.flat.to_text()},
                     {"trunk", num::params_to_json(net_.parameters())},
                     {"head", num::params_to_json(all_head_params())}};
    j["content_sha256"] = checkpoint_hash();
    return j;
  }

  std::string checkpoint_hash() {
    auto p = net_.parameters();
    auto h = all_head_params();
    p.insert(p.end(), h.begin(), h.end());
    return num::params_hash(p);
  }

  // Restores trunk and head parameters (no optimizer state).
  void load_checkpoint(const nlohmann::json& j) {
    if (j.value("kind", "") != "tlasa_fm") throw IoError("not a model checkpoint");
    auto trunk = net_.parameters();
    num::params_from_json(j.at("trunk"), trunk, true);
    auto head = all_head_params();
    num::params_from_json(j.at("head"), head, true);
    step_ = j.at("step").get<std::size_t>();
    if (checkpoint_hash() != j.at("content_sha256").get<std::string>()) {
      throw IntegrityError("model checkpoint hash mismatch");
    }
  }

 private:
  std::vector<num::NamedParam> all_head_params() {
    auto a = head_.adapter_parameters();
    auto t = head_.time_parameters();
    a.insert(a.end(), t.begin(), t.end());
    return a;
  }

  const ExperimentConfig& cfg_;
  const synth::Dataset& ds_;
  const spk::SpeakerEncoder& enc_a_;
  fm::VectorFieldNet net_;
  tla::TlaHead head_;
  num::AdamW opt_;
  std::size_t trunk_group_ = 0, adapter_group_ = 0, time_group_ = 0;
  std::size_t step_ = 0;
};

}  // namespace tlasa::harness
