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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "tlasa/numcore/tensor.hpp"
#include "tlasa/synthvoice/dataset.hpp"

namespace tlasa::synth {

struct MaskRange {
  double lo = 0.3;
  double hi = 0.9;

  void validate() const {
    if (!(lo > 0 && lo <= hi && hi <= 1.0)) {
      throw ConfigError("mask fraction range must satisfy 0 < lo <= hi <= 1");
    }
  }
};

// Contiguous masked span [start, start + length) within the valid frames.
struct MaskSpan {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Padded sequences plus their valid lengths.
struct PaddedFeatures {
  num::Tensor features;  // [B, T, D]
  std::vector<std::size_t> valid_len;
};

// Maps frame features [B,T,D] + valid lengths to one embedding row per item.
using PromptEmbedder =
    std::function<num::Tensor(const num::Tensor&, std::span<const std::size_t>)>;

struct TrainBatch {
  num::Tensor x1;                       // [B, T, D], zero past valid_len
  std::vector<std::vector<int>> tokens; // content tokens per item
  num::Tensor cond;                     // c: [B, D'] prompt embedding
  num::Tensor mask;                     // [B, T], 1 = frame to generate
  std::vector<std::size_t> valid_len;
  std::vector<MaskSpan> spans;
  std::vector<int> speaker_ids;

  std::size_t batch() const { return valid_len.size(); }
  std::size_t frames() const { return x1.dim(1); }
  std::size_t dim() const { return x1.dim(2); }
};

inline PaddedFeatures pad_sequences(std::span<const FeatureSeq* const> seqs) {
  if (seqs.empty()) throw DimensionError("pad_sequences: empty batch");
  const std::size_t D = seqs[0]->dim;
  std::size_t T = 0;
  for (const auto* s : seqs) {
    if (s->dim != D) throw DimensionError("pad_sequences: feature dimensions differ");
    if (s->frames == 0) throw DegenerateInputError("pad_sequences: empty sequence");
    T = std::max(T, s->frames);
  }
  std::vector<double> data(seqs.size() * T * D, 0.0);
  PaddedFeatures out;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    std::copy(seqs[b]->values.begin(), seqs[b]->values.end(), data.begin() + b * T * D);
    out.valid_len.push_back(seqs[b]->frames);
  }
  out.features = num::Tensor({seqs.size(), T, D}, std::move(data));
  return out;
}

inline PaddedFeatures pad_sequences(std::span<const FeatureSeq> seqs) {
  std::vector<const FeatureSeq*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  return pad_sequences(std::span<const FeatureSeq* const>(ptrs));
}

// Frames of item b whose mask value equals `masked`, compacted in order.
inline FeatureSeq select_frames(const num::Tensor& x, const num::Tensor& mask, std::size_t b,
                                std::size_t valid_len, bool masked) {
  const std::size_t T = x.dim(1), D = x.dim(2);
  FeatureSeq out;
  out.dim = D;
  for (std::size_t t = 0; t < valid_len; ++t) {
    if ((mask[b * T + t] != 0.0) != masked) continue;
    auto first = x.values().begin() + static_cast<std::ptrdiff_t>((b * T + t) * D);
    out.values.insert(out.values.end(), first, first + static_cast<std::ptrdiff_t>(D));
    ++out.frames;
  }
  return out;
}

inline std::vector<FeatureSeq> select_frames(const num::Tensor& x, const num::Tensor& mask,
                                             std::span<const std::size_t> valid_len, bool masked) {
  std::vector<FeatureSeq> out;
  for (std::size_t b = 0; b < valid_len.size(); ++b)
    out.push_back(select_frames(x, mask, b, valid_len[b], masked));
  return out;
}

// One contiguous span per item covering a fraction drawn from `range` of its
// valid frames. Spans that would cover every valid frame are redrawn.
inline std::vector<MaskSpan> draw_spans(std::span<const std::size_t> valid_len, MaskRange range,
                                        std::mt19937_64& rng) {
  range.validate();
  constexpr int kMaxRedraws = 64;
  std::vector<MaskSpan> spans;
  for (std::size_t L : valid_len) {
    bool ok = false;
    for (int attempt = 0; attempt < kMaxRedraws && !ok; ++attempt) {
      const double frac = range.lo + (range.hi - range.lo) * uniform01(rng);
      const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(L))));
      if (len >= L) continue;
      const std::size_t start = rng() % (L - len + 1);
      spans.push_back({start, len});
      ok = true;
    }
    if (!ok) {
      throw ConfigError("make_batch: mask range [" + std::to_string(range.lo) + ", " +
                        std::to_string(range.hi) + "] leaves no prompt frames for length " +
                        std::to_string(L));
    }
  }
  return spans;
}

inline num::Tensor spans_to_mask(std::span<const MaskSpan> spans, std::size_t T) {
  std::vector<double> m(spans.size() * T, 0.0);
  for (std::size_t b = 0; b < spans.size(); ++b)
    for (std::size_t t = spans[b].start; t < spans[b].start + spans[b].length; ++t) m[b * T + t] = 1.0;
  return num::Tensor({spans.size(), T}, std::move(m));
}

inline TrainBatch make_batch(std::span<const Utterance* const> utts, MaskRange range,
                             std::uint64_t seed, const PromptEmbedder& embed) {
  if (utts.empty()) throw DimensionError("make_batch: empty batch");
  std::vector<const FeatureSeq*> seqs;
  for (const auto* u : utts) seqs.push_back(&u->features);
  auto padded = pad_sequences(std::span<const FeatureSeq* const>(seqs));

  TrainBatch batch;
  batch.x1 = std::move(padded.features);
  batch.valid_len = std::move(padded.valid_len);
  for (const auto* u : utts) {
    batch.tokens.push_back(u->tokens);
    batch.speaker_ids.push_back(u->speaker_id);
  }
  auto rng = make_stream(seed, {kStreamBatch});
  batch.spans = draw_spans(batch.valid_len, range, rng);
  batch.mask = spans_to_mask(batch.spans, batch.frames());

  auto prompts = select_frames(batch.x1, batch.mask, batch.valid_len, /*masked=*/false);
  auto prompt_pad = pad_sequences(std::span<const FeatureSeq>(prompts));
  batch.cond = embed(prompt_pad.features, prompt_pad.valid_len);
  return batch;
}

inline TrainBatch make_batch(std::span<const Utterance> utts, MaskRange range, std::uint64_t seed,
                             const PromptEmbedder& embed) {
  std::vector<const Utterance*> ptrs;
  for (const auto& u : utts) ptrs.push_back(&u);
  return make_batch(std::span<const Utterance* const>(ptrs), range, seed, embed);
}

}  // namespace tlasa::synth
