#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "duomodal/audio_features.hpp"
#include "duomodal/corpus.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/rng.hpp"

#include "json.hpp"

namespace duomodal {

// Deterministic paired audio-text world. Every content token owns a fixed
// 160-dim signature; an utterance's features are its token signatures, each
// repeated frames_per_token times, plus Gaussian noise. Ground-truth pairing
// for the unpaired halves is written under a manifest key the trainer never
// reads.
struct SynthSpec {
  std::size_t content_vocab = 32;  // V_s
  std::size_t frames_per_token = 4;
  double noise_sigma = 0.05;
  std::size_t min_utterance_len = 5;
  std::size_t max_utterance_len = 12;
  std::size_t n_paired = 200;
  std::size_t n_unpaired_text = 1000;
  std::size_t n_unpaired_audio = 1000;
  std::size_t n_test = 200;
  std::string label_rule = "parity";  // parity | mean-id | speaker
  std::size_t n_speakers = 8;
  double speaker_offset_scale = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    check_contract(content_vocab >= 2, "synth spec: content vocab too small");
    check_contract(frames_per_token >= 1, "synth spec: frames_per_token >= 1");
    check_contract(min_utterance_len >= 1 &&
                       min_utterance_len <= max_utterance_len,
                   "synth spec: bad utterance length range");
    check_contract(noise_sigma >= 0.0, "synth spec: negative noise sigma");
    check_contract(label_rule == "parity" || label_rule == "mean-id" ||
                       label_rule == "speaker",
                   "synth spec: unknown label rule \"" + label_rule + "\"");
    check_contract(n_speakers >= 2, "synth spec: need at least 2 speakers");
  }

  nlohmann::json to_json() const {
    return {{"content_vocab", content_vocab},
            {"frames_per_token", frames_per_token},
            {"noise_sigma", noise_sigma},
            {"min_utterance_len", min_utterance_len},
            {"max_utterance_len", max_utterance_len},
            {"n_paired", n_paired},
            {"n_unpaired_text", n_unpaired_text},
            {"n_unpaired_audio", n_unpaired_audio},
            {"n_test", n_test},
            {"label_rule", label_rule},
            {"n_speakers", n_speakers},
            {"speaker_offset_scale", speaker_offset_scale},
            {"seed", seed}};
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    require_known_keys(
        j,
        {"content_vocab", "frames_per_token", "noise_sigma",
         "min_utterance_len", "max_utterance_len", "n_paired",
         "n_unpaired_text", "n_unpaired_audio", "n_test", "label_rule",
         "n_speakers", "speaker_offset_scale", "seed"},
        "synth spec");
    SynthSpec s;
    s.content_vocab = j.value("content_vocab", s.content_vocab);
    s.frames_per_token = j.value("frames_per_token", s.frames_per_token);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.min_utterance_len = j.value("min_utterance_len", s.min_utterance_len);
    s.max_utterance_len = j.value("max_utterance_len", s.max_utterance_len);
    s.n_paired = j.value("n_paired", s.n_paired);
    s.n_unpaired_text = j.value("n_unpaired_text", s.n_unpaired_text);
    s.n_unpaired_audio = j.value("n_unpaired_audio", s.n_unpaired_audio);
    s.n_test = j.value("n_test", s.n_test);
    s.label_rule = j.value("label_rule", s.label_rule);
    s.n_speakers = j.value("n_speakers", s.n_speakers);
    s.speaker_offset_scale =
        j.value("speaker_offset_scale", s.speaker_offset_scale);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
  }
};

// Deterministic task labels over content ids (0-based, before the special
// token offset).
inline double label_rule_value(const std::string& rule,
                               const std::vector<std::size_t>& content_ids,
                               std::size_t content_vocab,
                               std::size_t speaker_id = 0) {
  check_contract(!content_ids.empty(), "label rule: empty utterance");
  if (rule == "parity") {
    std::size_t s = 0;
    for (auto id : content_ids) s += id;
    return static_cast<double>(s % 2);
  }
  if (rule == "mean-id") {
    double s = 0;
    for (auto id : content_ids) s += static_cast<double>(id);
    return s / content_ids.size() / static_cast<double>(content_vocab);
  }
  if (rule == "speaker") return static_cast<double>(speaker_id);
  throw_contract("label rule: unknown tag \"" + rule + "\"");
}

namespace synth_detail {

// Token signatures: injective with min pairwise L2 > 1.0 so audio -> text is
// information-theoretically recoverable.
inline std::vector<std::vector<float>> make_signatures(const SynthSpec& spec) {
  constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;
  Rng rng = derive_rng(spec.seed, "synth.signatures");
  std::vector<std::vector<float>> sigs;
  while (sigs.size() < spec.content_vocab) {
    std::vector<float> s(W);
    for (auto& x : s) x = static_cast<float>(-1.0 + 2.0 * rng.uniform01());
    bool ok = true;
    for (const auto& prev : sigs) {
      double d2 = 0;
      for (std::size_t j = 0; j < W; ++j) {
        const double diff = s[j] - prev[j];
        d2 += diff * diff;
      }
      if (d2 <= 1.0) {
        ok = false;
        break;
      }
    }
    if (ok) sigs.push_back(std::move(s));
  }
  return sigs;
}

inline std::vector<std::vector<float>> make_speaker_offsets(
    const SynthSpec& spec) {
  constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;
  Rng rng = derive_rng(spec.seed, "synth.speaker_offsets");
  std::vector<std::vector<float>> offs(spec.n_speakers,
                                       std::vector<float>(W, 0.f));
  if (spec.label_rule == "speaker")
    for (auto& o : offs)
      for (auto& x : o)
        x = static_cast<float>(spec.speaker_offset_scale * rng.normal());
  return offs;
}

struct Utterance {
  std::vector<std::size_t> content_ids;
  std::size_t speaker = 0;
  std::string text;
};

inline std::string symbol_name(std::size_t content_id) {
  return "t" + std::to_string(content_id);
}

inline AudioFeatureMatrix render_features(
    const SynthSpec& spec, const Utterance& u,
    const std::vector<std::vector<float>>& signatures,
    const std::vector<std::vector<float>>& speaker_offsets, Rng& rng) {
  constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;
  auto m = AudioFeatureMatrix::zeros(u.content_ids.size() *
                                     spec.frames_per_token);
  std::size_t t = 0;
  for (auto id : u.content_ids)
    for (std::size_t f = 0; f < spec.frames_per_token; ++f, ++t)
      for (std::size_t j = 0; j < W; ++j)
        m.at(t, j) = signatures[id][j] + speaker_offsets[u.speaker][j] +
                     static_cast<float>(spec.noise_sigma * rng.normal());
  return m;
}

}  // namespace synth_detail

// Writes the corpus directory: text/{split}.txt, audio/{split}/{id}.dmf,
// manifest.json (vocab, splits, labels, feature stats, hidden pairings).
inline void generate_corpus(const SynthSpec& spec, const std::string& out_dir) {
  namespace fs = std::filesystem;
  spec.validate();
  constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;

  const auto signatures = synth_detail::make_signatures(spec);
  const auto speaker_offsets = synth_detail::make_speaker_offsets(spec);

  // distinct utterances across the whole universe; the paired split and the
  // two unpaired halves therefore never share a string
  const std::size_t total =
      spec.n_paired + spec.n_unpaired_text + spec.n_unpaired_audio +
      spec.n_test;
  Rng urng = derive_rng(spec.seed, "synth.utterances");
  std::set<std::string> seen;
  std::vector<synth_detail::Utterance> utt;
  utt.reserve(total);
  while (utt.size() < total) {
    synth_detail::Utterance u;
    const std::size_t len =
        urng.uniform_int(spec.min_utterance_len, spec.max_utterance_len);
    for (std::size_t i = 0; i < len; ++i)
      u.content_ids.push_back(urng.uniform_int(0, spec.content_vocab - 1));
    u.speaker = urng.uniform_int(0, spec.n_speakers - 1);
    for (std::size_t i = 0; i < len; ++i) {
      if (i) u.text += ' ';
      u.text += synth_detail::symbol_name(u.content_ids[i]);
    }
    if (seen.insert(u.text).second) utt.push_back(std::move(u));
  }

  struct SplitDef {
    std::string name;
    std::size_t count;
    bool text, audio;
  };
  const std::vector<SplitDef> split_defs{
      {"paired", spec.n_paired, true, true},
      {"unpaired_text", spec.n_unpaired_text, true, false},
      {"unpaired_audio", spec.n_unpaired_audio, false, true},
      {"test", spec.n_test, true, true},
  };

  fs::create_directories(fs::path(out_dir) / "text");
  for (const auto& sd : split_defs)
    fs::create_directories(fs::path(out_dir) / "audio" / sd.name);
  fs::create_directories(fs::path(out_dir) / "audio" / "hidden");

  nlohmann::json manifest;
  manifest["format"] = "duomodal-corpus-v1";
  manifest["spec"] = spec.to_json();
  manifest["label_rule"] = spec.label_rule;
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < spec.content_vocab; ++i)
    vocab.push_back(synth_detail::symbol_name(i));
  manifest["vocab"] = vocab;

  nlohmann::json splits = nlohmann::json::object();
  nlohmann::json labels = nlohmann::json::object();
  nlohmann::json hidden_text = nlohmann::json::object();

  // running feature stats over the audio the trainer sees (paired +
  // unpaired audio)
  std::vector<double> stat_sum(W, 0.0), stat_sq(W, 0.0);
  std::size_t stat_frames = 0;

  std::uint64_t next_id = 0;
  std::size_t cursor = 0;
  for (const auto& sd : split_defs) {
    std::vector<std::uint64_t> ids;
    std::ofstream text_out;
    if (sd.text) {
      text_out.open((fs::path(out_dir) / "text" / (sd.name + ".txt")).string(),
                    std::ios::trunc);
      check_data(static_cast<bool>(text_out),
                 "cannot write text split " + sd.name);
    }
    for (std::size_t i = 0; i < sd.count; ++i) {
      const auto& u = utt[cursor++];
      const std::uint64_t id = next_id++;
      ids.push_back(id);
      if (sd.text) text_out << u.text << "\n";
      Rng frng = derive_rng(spec.seed, "synth.features", {id});
      auto feats = synth_detail::render_features(spec, u, signatures,
                                                 speaker_offsets, frng);
      const std::string audio_dir = sd.audio ? sd.name : "hidden";
      write_dmf((fs::path(out_dir) / "audio" / audio_dir /
                 (std::to_string(id) + ".dmf"))
                    .string(),
                feats);
      if (sd.name == "paired" || sd.name == "unpaired_audio") {
        for (std::size_t t = 0; t < feats.frames; ++t)
          for (std::size_t j = 0; j < W; ++j) {
            stat_sum[j] += feats.at(t, j);
            stat_sq[j] += static_cast<double>(feats.at(t, j)) * feats.at(t, j);
          }
        stat_frames += feats.frames;
      }
      if (!sd.text) hidden_text[std::to_string(id)] = u.text;
      if (sd.name == "paired" || sd.name == "test")
        labels[std::to_string(id)] = label_rule_value(
            spec.label_rule, u.content_ids, spec.content_vocab, u.speaker);
    }
    splits[sd.name] = {{"ids", ids}, {"count", sd.count}};
  }

  std::vector<float> mean(W), stdev(W);
  for (std::size_t j = 0; j < W; ++j) {
    const double m = stat_sum[j] / stat_frames;
    const double var = std::max(stat_sq[j] / stat_frames - m * m, 0.0);
    mean[j] = static_cast<float>(m);
    stdev[j] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  manifest["feature_stats"] = {{"mean", mean}, {"std", stdev}};
  manifest["splits"] = splits;
  manifest["labels"] = labels;
  manifest["hidden"] = {{"unpaired_text_audio_dir", "audio/hidden"},
                        {"unpaired_audio_text", hidden_text}};

  corpus_detail::write_json_file(
      (fs::path(out_dir) / "manifest.json").string(), manifest);
}

}  // namespace duomodal
