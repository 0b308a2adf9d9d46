#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "duomodal/audio_features.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/jsonutil.hpp"
#include "duomodal/tokenizer.hpp"

#include "json.hpp"

namespace duomodal {

struct Example {
  std::uint64_t id = 0;
  TokenSequence tokens;         // empty when the text side is absent
  AudioFeatureMatrix features;  // frames == 0 when the audio side is absent
  double label = 0.0;
  bool has_label = false;
};

// On-disk layout: text/{split}.txt, audio/{split}/{id}.dmf, manifest.json.
// Feature normalization stats live in the manifest and are applied on load.
struct Corpus {
  std::string root;
  Tokenizer tokenizer;
  std::string label_rule;
  std::vector<Example> paired;
  std::vector<Example> unpaired_text;
  std::vector<Example> unpaired_audio;
  std::vector<Example> test;
  std::vector<float> feature_mean;  // 160, empty if no stats
  std::vector<float> feature_std;
  nlohmann::json manifest;

  void normalize(AudioFeatureMatrix& m) const {
    if (feature_mean.empty()) return;
    constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;
    for (std::size_t t = 0; t < m.frames; ++t)
      for (std::size_t j = 0; j < W; ++j)
        m.at(t, j) = (m.at(t, j) - feature_mean[j]) / feature_std[j];
  }

  static Corpus load(const std::string& dir);

  // Hidden ground truths, read only by evaluation oracles.
  AudioFeatureMatrix hidden_audio_for_text(std::uint64_t text_example_id) const;
  TokenSequence hidden_text_for_audio(std::uint64_t audio_example_id) const;
};

namespace corpus_detail {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_data("cannot open text file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_data("cannot open: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_data(path + ": invalid JSON: " + e.what());
  }
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw_data("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

}  // namespace corpus_detail

inline Corpus Corpus::load(const std::string& dir) {
  namespace fs = std::filesystem;
  Corpus c;
  c.root = dir;
  c.manifest = corpus_detail::read_json_file(
      (fs::path(dir) / "manifest.json").string());
  check_data(c.manifest.value("format", "") == "duomodal-corpus-v1",
             dir + "/manifest.json: unknown corpus format");
  c.tokenizer =
      Tokenizer(c.manifest.at("vocab").get<std::vector<std::string>>());
  c.label_rule = c.manifest.value("label_rule", "");
  if (c.manifest.contains("feature_stats")) {
    c.feature_mean =
        c.manifest["feature_stats"]["mean"].get<std::vector<float>>();
    c.feature_std =
        c.manifest["feature_stats"]["std"].get<std::vector<float>>();
    check_data(c.feature_mean.size() == AudioFeatureMatrix::kFeatureDim &&
                   c.feature_std.size() == AudioFeatureMatrix::kFeatureDim,
               dir + ": feature stats must have 160 entries");
  }

  const auto& splits = c.manifest.at("splits");
  const auto& labels = c.manifest.contains("labels")
                           ? c.manifest["labels"]
                           : nlohmann::json::object();

  auto load_split = [&](const std::string& name, bool text, bool audio) {
    std::vector<Example> out;
    if (!splits.contains(name)) return out;
    const auto ids = splits[name].at("ids").get<std::vector<std::uint64_t>>();
    std::vector<std::string> lines;
    if (text)
      lines = corpus_detail::read_lines(
          (fs::path(dir) / "text" / (name + ".txt")).string());
    if (text && lines.size() != ids.size())
      throw_data(dir + "/text/" + name + ".txt: " +
                 std::to_string(lines.size()) + " lines for " +
                 std::to_string(ids.size()) + " ids");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Example ex;
      ex.id = ids[i];
      if (text) ex.tokens = c.tokenizer.encode(lines[i]);
      if (audio) {
        ex.features = read_dmf((fs::path(dir) / "audio" / name /
                                (std::to_string(ids[i]) + ".dmf"))
                                   .string());
        c.normalize(ex.features);
      }
      const std::string key = std::to_string(ids[i]);
      if (labels.contains(key)) {
        ex.label = labels[key].get<double>();
        ex.has_label = true;
      }
      out.push_back(std::move(ex));
    }
    return out;
  };

  c.paired = load_split("paired", true, true);
  c.unpaired_text = load_split("unpaired_text", true, false);
  c.unpaired_audio = load_split("unpaired_audio", false, true);
  c.test = load_split("test", true, true);
  return c;
}

inline AudioFeatureMatrix Corpus::hidden_audio_for_text(
    std::uint64_t text_example_id) const {
  namespace fs = std::filesystem;
  auto m = read_dmf((fs::path(root) / "audio" / "hidden" /
                     (std::to_string(text_example_id) + ".dmf"))
                        .string());
  normalize(m);
  return m;
}

inline TokenSequence Corpus::hidden_text_for_audio(
    std::uint64_t audio_example_id) const {
  const auto& hidden = manifest.at("hidden").at("unpaired_audio_text");
  const std::string key = std::to_string(audio_example_id);
  check_data(hidden.contains(key),
             "no hidden transcript for example " + key);
  return tokenizer.encode(hidden[key].get<std::string>());
}

}  // namespace duomodal
