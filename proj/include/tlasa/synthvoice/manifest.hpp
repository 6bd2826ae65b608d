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

// On-disk dataset: `manifest.jsonl` (a header line with the generating
// config, one line per speaker, one line per utterance) and `features.bin`
// holding every utterance's frames as little-endian doubles. Utterance lines
// reference their frames by byte offset into the blob.

#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "tlasa/numcore/sha256.hpp"
#include "tlasa/synthvoice/dataset.hpp"

namespace tlasa::synth {

inline constexpr const char* kManifestFormat = "tlasa-synthvoice/1";
inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kBlobName = "features.bin";

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"train_speakers", c.train_speakers},
          {"test_speakers", c.test_speakers},
          {"test_utterances", c.test_utterances},
          {"train_utts_per_speaker", c.train_utts_per_speaker},
          {"heldout_utts_per_speaker", c.heldout_utts_per_speaker},
          {"feat_dim", c.feat_dim},
          {"id_dim", c.id_dim},
          {"vocab", c.vocab},
          {"token_dim", c.token_dim},
          {"frames_per_token", c.frames_per_token},
          {"min_tokens", c.min_tokens},
          {"max_tokens", c.max_tokens},
          {"noise_scale", c.noise_scale},
          {"min_angle_deg", c.min_angle_deg}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.train_speakers = j.at("train_speakers");
  c.test_speakers = j.at("test_speakers");
  c.test_utterances = j.at("test_utterances");
  c.train_utts_per_speaker = j.at("train_utts_per_speaker");
  c.heldout_utts_per_speaker = j.at("heldout_utts_per_speaker");
  c.feat_dim = j.at("feat_dim");
  c.id_dim = j.at("id_dim");
  c.vocab = j.at("vocab");
  c.token_dim = j.at("token_dim");
  c.frames_per_token = j.at("frames_per_token");
  c.min_tokens = j.at("min_tokens");
  c.max_tokens = j.at("max_tokens");
  c.noise_scale = j.at("noise_scale");
  c.min_angle_deg = j.at("min_angle_deg");
  return c;
}

struct SerializedDataset {
  std::string manifest;
  std::string blob;
  std::string hash;
};

inline SerializedDataset serialize_dataset(const Dataset& ds) {
  SerializedDataset out;
  std::ostringstream man;
  man << nlohmann::json{{"type", "header"},
                        {"format", kManifestFormat},
                        {"blob", kBlobName},
                        {"config", to_json(ds.config)}}
             .dump()
      << '\n';
  auto speakers = [&](const std::vector<SpeakerSpec>& v, const char* split) {
    for (const auto& s : v) {
      man << nlohmann::json{{"type", "speaker"}, {"split", split}, {"speaker_id", s.speaker_id},
                            {"latent", s.latent}}
                 .dump()
          << '\n';
    }
  };
  speakers(ds.train_speakers, "train");
  speakers(ds.test_speakers, "test");
  auto utterances = [&](const std::vector<Utterance>& v, Split split) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& u = v[i];
      man << nlohmann::json{{"type", "utterance"},
                            {"split", split_name(split)},
                            {"index", i},
                            {"speaker_id", u.speaker_id},
                            {"tokens", u.tokens},
                            {"frames", u.features.frames},
                            {"dim", u.features.dim},
                            {"offset", out.blob.size()}}
                 .dump()
          << '\n';
      out.blob.append(reinterpret_cast<const char*>(u.features.values.data()),
                      u.features.values.size() * sizeof(double));
    }
  };
  utterances(ds.train, Split::kTrain);
  utterances(ds.heldout, Split::kHeldout);
  utterances(ds.test, Split::kTest);
  out.manifest = man.str();
  out.hash = Sha256().update(out.manifest).update(out.blob).hex();
  return out;
}

inline std::string dataset_hash(const Dataset& ds) { return serialize_dataset(ds).hash; }

// Writes the dataset under `dir` and returns its content hash.
inline std::string write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("write_dataset: cannot create " + dir.string() + ": " + ec.message());
  auto ser = serialize_dataset(ds);
  std::ofstream man(dir / kManifestName, std::ios::binary);
  std::ofstream blob(dir / kBlobName, std::ios::binary);
  if (!man || !blob) throw IoError("write_dataset: cannot open output files in " + dir.string());
  man << ser.manifest;
  blob.write(ser.blob.data(), static_cast<std::streamsize>(ser.blob.size()));
  if (!man || !blob) throw IoError("write_dataset: write failed in " + dir.string());
  return ser.hash;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct LoadedDataset {
  Dataset dataset;
  std::string hash;
};

inline LoadedDataset read_dataset(const std::filesystem::path& dir) {
  const std::string manifest = read_file(dir / kManifestName);
  const std::string blob = read_file(dir / kBlobName);
  LoadedDataset out;
  out.hash = Sha256().update(manifest).update(blob).hex();
  auto& ds = out.dataset;
  std::istringstream lines(manifest);
  std::string line;
  bool header = false;
  try {
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        if (j.at("format") != kManifestFormat) throw IoError("read_dataset: unsupported format");
        ds.config = synth_config_from_json(j.at("config"));
        ds.mixing = make_mixing(ds.config);
        header = true;
      } else if (type == "speaker") {
        SpeakerSpec s{j.at("speaker_id").get<int>(), j.at("latent").get<std::vector<double>>()};
        (j.at("split") == "train" ? ds.train_speakers : ds.test_speakers).push_back(std::move(s));
      } else if (type == "utterance") {
        Utterance u;
        u.speaker_id = j.at("speaker_id");
        u.tokens = j.at("tokens").get<std::vector<int>>();
        u.features.frames = j.at("frames");
        u.features.dim = j.at("dim");
        const std::size_t offset = j.at("offset");
        const std::size_t bytes = u.features.frames * u.features.dim * sizeof(double);
        if (offset + bytes > blob.size()) throw IoError("read_dataset: utterance exceeds blob");
        u.features.values.resize(u.features.frames * u.features.dim);
        std::memcpy(u.features.values.data(), blob.data() + offset, bytes);
        const auto split = j.at("split").get<std::string>();
        if (split == "train") ds.train.push_back(std::move(u));
        else if (split == "heldout") ds.heldout.push_back(std::move(u));
        else if (split == "test") ds.test.push_back(std::move(u));
        else throw IoError("read_dataset: unknown split " + split);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("read_dataset: malformed manifest: ") + e.what());
  }
  if (!header) throw IoError("read_dataset: manifest has no header line");
  return out;
}

}  // namespace tlasa::synth
