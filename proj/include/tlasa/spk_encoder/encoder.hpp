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

// Frozen identity encoder: mean-pool the valid frames, run a small MLP and
// L2-normalise. It is trained once by speaker classification (the head is
// discarded afterwards) and then only ever read.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlasa/numcore/layers.hpp"
#include "tlasa/numcore/optim.hpp"
#include "tlasa/numcore/serialize.hpp"
#include "tlasa/synthvoice/batch.hpp"

namespace tlasa::spk {

struct EncoderConfig {
  std::size_t feat_dim = 24;
  std::size_t hidden = 64;
  std::size_t embed_dim = 32;
  double logit_scale = 16.0;
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 3e-3;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"feat_dim", c.feat_dim}, {"hidden", c.hidden},   {"embed_dim", c.embed_dim},
          {"logit_scale", c.logit_scale}, {"epochs", c.epochs}, {"batch", c.batch},
          {"lr", c.lr}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.feat_dim = j.at("feat_dim");
  c.hidden = j.at("hidden");
  c.embed_dim = j.at("embed_dim");
  c.logit_scale = j.at("logit_scale");
  c.epochs = j.at("epochs");
  c.batch = j.at("batch");
  c.lr = j.at("lr");
  return c;
}

class SpeakerEncoder {
 public:
  SpeakerEncoder() = default;

  SpeakerEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    auto rng = make_stream(seed, {kStreamEncoderInit});
    block1_ = num::Linear::init(rng, cfg.feat_dim, cfg.hidden);
    block2_ = num::Linear::init(rng, cfg.hidden, cfg.hidden);
    out_ = num::Linear::init(rng, cfg.hidden, cfg.embed_dim);
  }

  const EncoderConfig& config() const { return cfg_; }
  bool frozen() const { return frozen_; }
  std::size_t embed_dim() const { return cfg_.embed_dim; }

  // Unnormalised-to-normalised map from pooled features [B,D] to [B,D'].
  num::Tensor embed_pooled(const num::Tensor& pooled) const {
    auto h = num::silu(block1_(pooled));
    h = num::silu(block2_(h));
    return num::l2_normalize(out_(h));
  }

  // Features [B,T,D] -> unit-norm embeddings [B,D']. Parameters never receive
  // gradients; the features may, if they require them.
  num::Tensor embed(const num::Tensor& features, std::span<const std::size_t> valid_len) const {
    if (!frozen_) throw DomainError("SpeakerEncoder::embed: encoder is not frozen");
    if (features.rank() != 3 || features.dim(2) != cfg_.feat_dim) {
      throw DimensionError("SpeakerEncoder::embed: expected [B,T," + std::to_string(cfg_.feat_dim) +
                           "], got " + num::shape_str(features.shape()));
    }
    return embed_pooled(num::mean_pool_time(features, valid_len));
  }

  num::Tensor embed(std::span<const synth::FeatureSeq> seqs) const {
    auto padded = synth::pad_sequences(seqs);
    return embed(padded.features, padded.valid_len);
  }

  synth::PromptEmbedder as_embedder() const {
    return [this](const num::Tensor& x, std::span<const std::size_t> len) {
      num::NoGradGuard guard;
      return embed(x, len);
    };
  }

  std::vector<num::NamedParam> parameters() {
    std::vector<num::NamedParam> out;
    block1_.collect("block1", out);
    block2_.collect("block2", out);
    out_.collect("out", out);
    return out;
  }

  std::string hash() const {
    return num::params_hash(const_cast<SpeakerEncoder*>(this)->parameters());
  }

  void freeze() {
    auto params = parameters();
    num::set_requires_grad(params, false);
    frozen_ = true;
  }

  nlohmann::json to_json() const {
    nlohmann::json payload{{"kind", "speaker_encoder"},
                           {"config", spk::to_json(cfg_)},
                           {"frozen", frozen_},
                           {"params", num::params_to_json(const_cast<SpeakerEncoder*>(this)->parameters())}};
    payload["content_sha256"] = hash();
    return payload;
  }

  static SpeakerEncoder from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "speaker_encoder") throw IoError("not a speaker encoder checkpoint");
    SpeakerEncoder enc(encoder_config_from_json(j.at("config")), 0);
    auto params = enc.parameters();
    num::params_from_json(j.at("params"), params, false);
    enc.frozen_ = j.at("frozen").get<bool>();
    if (enc.hash() != j.at("content_sha256").get<std::string>()) {
      throw IntegrityError("speaker encoder checkpoint hash mismatch");
    }
    return enc;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << to_json().dump() << '\n';
  }

  static SpeakerEncoder load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read encoder checkpoint " + path.string());
    try {
      return from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed encoder checkpoint " + path.string() + ": " + e.what());
    }
  }

 private:
  EncoderConfig cfg_;
  num::Linear block1_, block2_, out_;
  bool frozen_ = false;
};

struct PretrainResult {
  SpeakerEncoder model;
  double heldout_accuracy = 0.0;
  std::vector<double> loss_trace;  // per mini-batch
};

namespace detail {

inline num::Tensor pooled_matrix(std::span<const synth::Utterance> utts, std::size_t D) {
  std::vector<double> data(utts.size() * D, 0.0);
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const auto& f = utts[i].features;
    for (std::size_t t = 0; t < f.frames; ++t)
      for (std::size_t d = 0; d < D; ++d) data[i * D + d] += f.at(t, d);
    for (std::size_t d = 0; d < D; ++d) data[i * D + d] /= static_cast<double>(f.frames);
  }
  return num::Tensor({utts.size(), D}, std::move(data));
}

inline num::Tensor gather_rows(const num::Tensor& X, std::span<const std::size_t> rows) {
  const std::size_t D = X.dim(1);
  std::vector<double> out(rows.size() * D);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(X.values().begin() + static_cast<std::ptrdiff_t>(rows[i] * D), D, out.begin() + static_cast<std::ptrdiff_t>(i * D));
  return num::Tensor({rows.size(), D}, std::move(out));
}

inline std::string format_trace(const std::vector<double>& trace) {
  std::ostringstream os;
  for (std::size_t i = 0; i < trace.size(); ++i) os << (i ? ", " : "") << trace[i];
  return os.str();
}

}  // namespace detail

// Identity classification on mean-pooled features with a cosine-softmax head.
// Pooling has no parameters, so it is done once up front.
inline PretrainResult pretrain_encoder(std::span<const synth::Utterance> train,
                                       std::span<const synth::Utterance> heldout,
                                       const EncoderConfig& cfg, std::uint64_t seed) {
  std::map<int, int> label_of;
  for (const auto& u : train) label_of.emplace(u.speaker_id, 0);
  if (label_of.size() < 2) throw ConfigError("pretrain_encoder: need at least 2 speakers");
  int next = 0;
  for (auto& [id, lab] : label_of) lab = next++;
  const std::size_t S = label_of.size();

  PretrainResult result{SpeakerEncoder(cfg, seed), 0.0, {}};
  auto& enc = result.model;
  auto init_rng = make_stream(seed, {kStreamEncoderInit, 1});
  num::Linear head = num::Linear::init(init_rng, cfg.embed_dim, S);

  auto X = detail::pooled_matrix(train, cfg.feat_dim);
  std::vector<int> labels;
  for (const auto& u : train) labels.push_back(label_of.at(u.speaker_id));

  num::AdamW opt(num::AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  auto params = enc.parameters();
  head.collect("head", params);
  const auto group = opt.add_group(params);

  auto shuffle_rng = make_stream(seed, {kStreamEncoderShuffle});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> y;
      for (auto r : rows) y.push_back(labels[r]);
      opt.zero_grad();
      auto emb = enc.embed_pooled(detail::gather_rows(X, rows));
      auto loss = num::cross_entropy(head(num::scale(emb, cfg.logit_scale)), y);
      loss.backward();
      opt.step(cfg.lr, {group});
      result.loss_trace.push_back(loss.item());
    }
    if (epoch == 0) {
      const auto& tr = result.loss_trace;
      const std::size_t k = std::max<std::size_t>(1, tr.size() / 10);
      const double head_mean = std::accumulate(tr.begin(), tr.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / static_cast<double>(k);
      const double tail_mean = std::accumulate(tr.end() - static_cast<std::ptrdiff_t>(k), tr.end(), 0.0) / static_cast<double>(k);
      if (tr.size() >= 2 && !(tail_mean < head_mean)) {
        throw DiagnosticsError("pretrain_encoder: loss did not decrease over the first epoch: [" +
                               detail::format_trace(tr) + "]");
      }
    }
  }

  if (!heldout.empty()) {
    num::NoGradGuard guard;
    auto logits = head(num::scale(enc.embed_pooled(detail::pooled_matrix(heldout, cfg.feat_dim)), cfg.logit_scale));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < heldout.size(); ++i) {
      auto row = logits.values().subspan(i * S, S);
      const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      auto it = label_of.find(heldout[i].speaker_id);
      if (it != label_of.end() && it->second == pred) ++correct;
    }
    result.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(heldout.size());
  }
  enc.freeze();
  return result;
}

// Mean cosine between embeddings of aligned generated/prompt pairs.
inline double similarity_score(const SpeakerEncoder& model, std::span<const synth::FeatureSeq> generated,
                               std::span<const synth::FeatureSeq> prompts) {
  if (generated.size() != prompts.size()) {
    throw DimensionError("similarity_score: " + std::to_string(generated.size()) + " generated vs " +
                         std::to_string(prompts.size()) + " prompts");
  }
  if (generated.empty()) throw DimensionError("similarity_score: empty batch");
  num::NoGradGuard guard;
  auto cos = num::cosine_similarity(model.embed(generated), model.embed(prompts));
  double s = 0;
  for (double v : cos.values()) s += v;
  return s / static_cast<double>(generated.size());
}

}  // namespace tlasa::spk
