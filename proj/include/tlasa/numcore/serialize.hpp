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

// Tensor interchange: JSON {"shape": [...], "data": [...]} and a binary dump
//   magic "TLT1" | u32 rank | u64 extents[rank] | f64 data[numel]
// all little-endian. Both formats round-trip bit-exactly.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlasa/numcore/layers.hpp"
#include "tlasa/numcore/sha256.hpp"
#include "tlasa/numcore/tensor.hpp"

namespace tlasa::num {

static_assert(std::endian::native == std::endian::little,
              "binary tensor dumps assume a little-endian host");

inline nlohmann::json to_json(const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError("to_json: tensor holds a non-finite value");
  }
  return {{"shape", t.shape()},
          {"data", std::vector<double>(t.values().begin(), t.values().end())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j, bool requires_grad = false) {
  try {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>(),
                  requires_grad);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("tensor_from_json: ") + e.what());
  }
}

inline void write_binary(std::ostream& os, const Tensor& t) {
  const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
  os.write("TLT1", 4);
  os.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (auto e : t.shape()) {
    const std::uint64_t e64 = e;
    os.write(reinterpret_cast<const char*>(&e64), sizeof e64);
  }
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!os) throw IoError("write_binary: stream failure");
}

inline Tensor read_binary(std::istream& is, bool requires_grad = false) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "TLT1") throw IoError("read_binary: bad magic");
  std::uint32_t rank = 0;
  if (!is.read(reinterpret_cast<char*>(&rank), sizeof rank) || rank == 0 || rank > 16) {
    throw IoError("read_binary: bad rank");
  }
  Shape shape(rank);
  for (auto& e : shape) {
    std::uint64_t e64 = 0;
    if (!is.read(reinterpret_cast<char*>(&e64), sizeof e64)) throw IoError("read_binary: truncated header");
    e = static_cast<std::size_t>(e64);
  }
  std::vector<double> data(numel_of(shape));
  if (!is.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)))) {
    throw IoError("read_binary: truncated data");
  }
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

inline nlohmann::json params_to_json(const std::vector<NamedParam>& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& p : params) j[p.name] = to_json(*p.tensor);
  return j;
}

// Loads into existing leaves; names and shapes must match exactly.
inline void params_from_json(const nlohmann::json& j, std::vector<NamedParam>& params,
                             bool requires_grad) {
  if (j.size() != params.size()) {
    throw IoError("params_from_json: expected " + std::to_string(params.size()) +
                  " tensors, found " + std::to_string(j.size()));
  }
  for (auto& p : params) {
    if (!j.contains(p.name)) throw IoError("params_from_json: missing " + p.name);
    Tensor t = tensor_from_json(j.at(p.name), requires_grad);
    if (t.shape() != p.tensor->shape()) {
      throw IoError("params_from_json: " + p.name + " has shape " + shape_str(t.shape()) +
                    ", expected " + shape_str(p.tensor->shape()));
    }
    *p.tensor = std::move(t);
  }
}

// Content hash over parameter names, shapes and raw value bytes.
inline std::string params_hash(const std::vector<NamedParam>& params) {
  Sha256 h;
  for (const auto& p : params) {
    h.update(p.name);
    h.update(shape_str(p.tensor->shape()));
    h.update(p.tensor->values());
  }
  return h.hex();
}

}  // namespace tlasa::num
