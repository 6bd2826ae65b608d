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

#include <string>
#include <vector>

#include "tlasa/harness/config.hpp"

namespace tlasa::harness {

// Fixed evaluation material: test utterances split into chunks, each with
// deterministic masks, prompt embeddings from both encoders, and the noise
// used by sampling and by the CKNNA sweeps.
struct EvalSet {
  std::vector<synth::TrainBatch> chunks;  // cond = encoder-A prompt embedding
  std::vector<num::Tensor> cond_b;        // encoder-B prompt embedding per chunk
  std::vector<std::uint64_t> sample_seeds;
  std::vector<num::Tensor> sweep_noise;
  num::Tensor e_sa;                       // all encoder-A prompt embeddings [U,D']
  std::size_t items = 0;
};

inline num::Tensor concat_rows(const std::vector<num::Tensor>& parts) {
  std::vector<double> v;
  std::size_t rows = 0;
  const std::size_t D = parts.at(0).dim(1);
  for (const auto& p : parts) {
    v.insert(v.end(), p.values().begin(), p.values().end());
    rows += p.dim(0);
  }
  return num::Tensor({rows, D}, std::move(v));
}

inline EvalSet build_eval_set(const ExperimentConfig& cfg, const synth::Dataset& ds, const spk::SpeakerEncoder& enc_a,
                              const spk::SpeakerEncoder& enc_b) {
  EvalSet es;
  const std::size_t U = std::min(cfg.eval.utterances, ds.test.size());
  for (std::size_t start = 0, c = 0; start < U; start += cfg.eval.batch, ++c) {
    const std::size_t end = std::min(U, start + cfg.eval.batch);
    std::span<const synth::Utterance> utts(ds.test.data() + start, end - start);
    auto rng = make_stream(cfg.eval.seed, {kStreamEval, c});
    const std::uint64_t span_seed = rng();
    auto batch = synth::make_batch(utts, cfg.mask, span_seed, enc_a.as_embedder());
    auto prompts = synth::select_frames(batch.x1, batch.mask, batch.valid_len, /*masked=*/false);
    {
      num::NoGradGuard guard;
      es.cond_b.push_back(enc_b.embed(prompts));
    }
    es.sample_seeds.push_back(rng());
    auto noise_rng = make_stream(cfg.eval.seed, {kStreamSweep, c});
    es.sweep_noise.push_back(normal_tensor(noise_rng, batch.x1.shape()));
    es.chunks.push_back(std::move(batch));
  }
  std::vector<num::Tensor> conds;
  for (const auto& b : es.chunks) conds.push_back(b.cond);
  es.e_sa = concat_rows(conds);
  es.items = U;
  return es;
}

struct SimilarityResult {
  double sim_a = 0, sim_b = 0;
};

// Generates every masked region with the Euler sampler and scores it against
// its prompt with both encoders (mean cosine over items).
inline SimilarityResult generation_similarity(const fm::VectorFieldNet& net, const EvalSet& es,
                                              const spk::SpeakerEncoder& enc_a, const spk::SpeakerEncoder& enc_b,
                                              const fm::OdeOptions& ode) {
  num::NoGradGuard guard;
  double sa = 0, sb = 0;
  for (std::size_t c = 0; c < es.chunks.size(); ++c) {
    const auto& batch = es.chunks[c];
    auto req = fm::request_from_batch(batch);
    auto state = fm::ode_sample(net, req, es.sample_seeds[c], ode);
    auto gen = fm::generated_frames(state, req);
    auto prompts = synth::select_frames(batch.x1, batch.mask, batch.valid_len, /*masked=*/false);
    const double n = static_cast<double>(batch.batch());
    sa += n * spk::similarity_score(enc_a, gen, prompts);
    sb += n * spk::similarity_score(enc_b, gen, prompts);
  }
  return {sa / static_cast<double>(es.items), sb / static_cast<double>(es.items)};
}

// Pooled taps of every supervised layer at denoising time t, over all items.
inline std::vector<num::Tensor> pooled_layers_at(const fm::VectorFieldNet& net, const EvalSet& es, double t) {
  num::NoGradGuard guard;
  std::vector<std::vector<num::Tensor>> per_layer(net.layers());
  for (std::size_t c = 0; c < es.chunks.size(); ++c) {
    const auto& batch = es.chunks[c];
    std::vector<double> tv(batch.batch(), t);
    auto xin = fm::compose_input(fm::sample_ot_path(es.sweep_noise[c], batch.x1, tv), batch.x1, batch.mask);
    auto out = net.forward({xin, batch.mask, tv, &batch.tokens, batch.cond, batch.valid_len});
    for (std::size_t i = 0; i < out.taps.size(); ++i)
      per_layer[i].push_back(tla::pooled_layer_embedding(out.taps[i], batch.valid_len));
  }
  std::vector<num::Tensor> out;
  for (auto& parts : per_layer) out.push_back(concat_rows(parts));
  return out;
}

struct CknnaSummary {
  std::vector<cknna::SweepPoint> layers;  // at t_fixed
  double mean = 0;
};

inline CknnaSummary cknna_summary(const fm::VectorFieldNet& net, const EvalSet& es, const EvalSettings& ev) {
  auto provider = [&](double t) { return pooled_layers_at(net, es, t); };
  CknnaSummary s;
  s.layers = cknna::layer_sweep(provider, es.e_sa, ev.t_fixed, ev.cknna);
  for (const auto& p : s.layers) s.mean += p.score;
  s.mean /= static_cast<double>(s.layers.size());
  return s;
}

inline std::vector<cknna::SweepPoint> timestep_curve(const fm::VectorFieldNet& net, const EvalSet& es,
                                                     const EvalSettings& ev) {
  auto provider = [&](double t) { return pooled_layers_at(net, es, t); };
  auto grid = cknna::linear_grid(0.0, 1.0, ev.t_points);
  return cknna::timestep_sweep(provider, es.e_sa, ev.layer_fixed, grid, ev.cknna);
}

// Mean time weights over 64 equal t-bins (4 samples per bin): 64 x N.
inline constexpr std::size_t kHeatmapBins = 64;

inline std::vector<double> weight_heatmap(const tla::TlaHead& head, bool uniform = false) {
  constexpr std::size_t kSub = 4;
  const std::size_t N = head.bank.size();
  std::vector<double> grid(kHeatmapBins * N, 0.0);
  if (uniform || head.cfg.mode == tla::Mode::kLayerOnly) {
    std::fill(grid.begin(), grid.end(), 1.0 / static_cast<double>(N));
    return grid;
  }
  std::vector<double> t;
  for (std::size_t b = 0; b < kHeatmapBins; ++b)
    for (std::size_t s = 0; s < kSub; ++s)
      t.push_back((static_cast<double>(b) + (static_cast<double>(s) + 0.5) / kSub) / kHeatmapBins);
  num::NoGradGuard guard;
  auto w = tla::time_weights(head.time, t);
  for (std::size_t b = 0; b < kHeatmapBins; ++b)
    for (std::size_t s = 0; s < kSub; ++s)
      for (std::size_t i = 0; i < N; ++i) grid[b * N + i] += w[(b * kSub + s) * N + i] / kSub;
  return grid;
}

// Mean over bins of the total variation distance between two heatmaps.
inline double heatmap_tv(const std::vector<double>& a, const std::vector<double>& b, std::size_t N) {
  if (a.size() != b.size() || a.size() % N != 0) throw DimensionError("heatmap_tv: grid shapes differ");
  const std::size_t bins = a.size() / N;
  double total = 0;
  for (std::size_t r = 0; r < bins; ++r) {
    double tv = 0;
    for (std::size_t i = 0; i < N; ++i) tv += std::abs(a[r * N + i] - b[r * N + i]);
    total += 0.5 * tv;
  }
  return total / static_cast<double>(bins);
}

inline std::string heatmap_csv(const std::vector<double>& grid, std::size_t N) {
  std::string out = "t_bin,layer_index,mean_weight\n";
  for (std::size_t b = 0; b < grid.size() / N; ++b)
    for (std::size_t i = 0; i < N; ++i)
      out += std::to_string(b) + "," + std::to_string(i) + "," + fmt_real(grid[b * N + i]) + "\n";
  return out;
}

}  // namespace tlasa::harness
