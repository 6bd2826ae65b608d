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

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "tlasa/numcore/tensor.hpp"

namespace tlasa {

// Independent deterministic stream keyed by (seed, stream ids...). Streams
// with different keys never share state, so consumers can be added or
// reordered without perturbing each other.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

// Stable stream tags.
enum Stream : std::uint64_t {
  kStreamSpeakers = 1,
  kStreamMixing = 2,
  kStreamUtterance = 3,
  kStreamTokens = 4,
  kStreamBatch = 5,
  kStreamTrunkInit = 6,
  kStreamAdapterInit = 7,
  kStreamTimeAdapterInit = 8,
  kStreamFlowNoise = 9,
  kStreamEncoderInit = 10,
  kStreamEncoderShuffle = 11,
  kStreamEval = 12,
  kStreamSweep = 13,
};

inline std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

inline num::Tensor normal_tensor(std::mt19937_64& rng, num::Shape shape, double stddev = 1.0,
                                 bool requires_grad = false) {
  auto n = num::numel_of(shape);
  return num::Tensor(std::move(shape), normal_values(rng, n, stddev), requires_grad);
}

inline double uniform01(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace tlasa
