#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "duomodal/audio_features.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/rng.hpp"
#include "duomodal/tokenizer.hpp"

namespace duomodal {

// Corruption strengths. IDAE selects 15% with 80/10/10 mask/random/keep;
// CDAE raises selection to 30% and lowers the mask share to 60, with the
// remainder split 20/20 to keep random:keep at 1:1.
struct CorruptionPolicy {
  double select_prob = 0.15;
  double mask_share = 0.8;
  double random_share = 0.1;
  double keep_share = 0.1;
  std::size_t segment_len_min = 20;
  std::size_t segment_len_max = 50;

  static CorruptionPolicy idae() { return CorruptionPolicy{}; }

  static CorruptionPolicy cdae() {
    CorruptionPolicy p;
    p.select_prob = 0.30;
    p.mask_share = 0.6;
    p.random_share = 0.2;
    p.keep_share = 0.2;
    return p;
  }

  void validate() const {
    check_contract(select_prob >= 0.0 && select_prob <= 1.0,
                   "corruption policy: select_prob outside [0, 1]");
    const double s = mask_share + random_share + keep_share;
    check_contract(std::abs(s - 1.0) < 1e-9,
                   "corruption policy: action shares must sum to 1");
    check_contract(mask_share >= 0 && random_share >= 0 && keep_share >= 0,
                   "corruption policy: negative action share");
    check_contract(segment_len_min >= 1 && segment_len_min <= segment_len_max,
                   "corruption policy: empty segment length range");
  }
};

enum class CorruptAction { mask, random, keep };

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t length() const { return end - begin; }
};

struct TextCorruptionRecord {
  struct Entry {
    std::size_t pos;
    CorruptAction action;
    std::int64_t original;
  };
  std::vector<Entry> entries;

  std::vector<std::uint8_t> selected_mask(std::size_t len) const {
    std::vector<std::uint8_t> m(len, 0);
    for (const auto& e : entries) m[e.pos] = 1;
    return m;
  }
};

struct AudioCorruptionRecord {
  struct Entry {
    Segment segment;
    CorruptAction action;
    bool fell_back_to_mask = false;  // no disjoint replacement span existed
    std::vector<float> original;     // rows of the segment before corruption
  };
  std::vector<Segment> segments;  // the full partition of [0, T_a)
  std::vector<Entry> entries;     // selected segments only

  std::vector<std::uint8_t> selected_rows(std::size_t frames) const {
    std::vector<std::uint8_t> m(frames, 0);
    for (const auto& e : entries)
      for (std::size_t t = e.segment.begin; t < e.segment.end; ++t) m[t] = 1;
    return m;
  }
};

namespace corruption_detail {

inline CorruptAction draw_action(const CorruptionPolicy& policy, Rng& rng) {
  const double v = rng.uniform01();
  if (v < policy.mask_share) return CorruptAction::mask;
  if (v < policy.mask_share + policy.random_share) return CorruptAction::random;
  return CorruptAction::keep;
}

}  // namespace corruption_detail

// Each non-special position is independently selected with select_prob and
// then masked, replaced by a random non-special token, or kept.
inline std::pair<TokenSequence, TextCorruptionRecord> corrupt_text(
    const TokenSequence& w, const CorruptionPolicy& policy, Rng& rng,
    std::size_t vocab_size) {
  policy.validate();
  check_contract(vocab_size > static_cast<std::size_t>(kNumSpecialTokens),
                 "corrupt_text: vocabulary has no non-special tokens");
  TokenSequence out = w;
  TextCorruptionRecord record;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] < kNumSpecialTokens) continue;  // specials are never corrupted
    if (rng.uniform01() >= policy.select_prob) continue;
    const CorruptAction action = corruption_detail::draw_action(policy, rng);
    record.entries.push_back({i, action, w[i]});
    switch (action) {
      case CorruptAction::mask:
        out[i] = kMaskId;
        break;
      case CorruptAction::random:
        out[i] = static_cast<std::int64_t>(rng.uniform_int(
            kNumSpecialTokens, static_cast<std::uint64_t>(vocab_size) - 1));
        break;
      case CorruptAction::keep:
        break;
    }
  }
  return {std::move(out), std::move(record)};
}

// Greedy left-to-right partition of [0, T_a); each length is drawn uniformly
// from [min, max] and the final segment is truncated at the boundary.
inline std::vector<Segment> segment_audio(std::size_t frames, Rng& rng,
                                          std::size_t len_min = 20,
                                          std::size_t len_max = 50) {
  check_contract(frames >= 1, "segment_audio: need at least one frame");
  check_contract(len_min >= 1 && len_min <= len_max,
                 "segment_audio: empty length range");
  std::vector<Segment> segments;
  std::size_t pos = 0;
  while (pos < frames) {
    const std::size_t len = rng.uniform_int(len_min, len_max);
    segments.push_back({pos, std::min(pos + len, frames)});
    pos = segments.back().end;
  }
  return segments;
}

// Segment the utterance, select policy.select_prob of the segments, then per
// action: zero-fill, copy a random disjoint same-length span from the same
// utterance, or keep. When no disjoint span exists the segment falls back to
// the zero mask and the record says so.
inline std::pair<AudioFeatureMatrix, AudioCorruptionRecord> corrupt_audio(
    const AudioFeatureMatrix& a, const CorruptionPolicy& policy, Rng& rng) {
  policy.validate();
  check_contract(a.frames >= 1, "corrupt_audio: empty feature matrix");
  constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;
  AudioFeatureMatrix out = a;
  AudioCorruptionRecord record;
  record.segments =
      segment_audio(a.frames, rng, policy.segment_len_min,
                    policy.segment_len_max);
  for (const Segment& seg : record.segments) {
    if (rng.uniform01() >= policy.select_prob) continue;
    CorruptAction action = corruption_detail::draw_action(policy, rng);
    AudioCorruptionRecord::Entry entry{seg, action, false, {}};
    entry.original.assign(a.row(seg.begin), a.row(seg.begin) + seg.length() * W);
    if (action == CorruptAction::random) {
      // candidate starts of a disjoint span of the same length
      const std::size_t len = seg.length();
      const std::size_t left =
          seg.begin >= len ? seg.begin - len + 1 : 0;
      const std::size_t right =
          a.frames - seg.end >= len ? a.frames - seg.end - len + 1 : 0;
      if (left + right == 0) {
        entry.fell_back_to_mask = true;
        action = CorruptAction::mask;
      } else {
        const std::size_t pick = rng.uniform_int(0, left + right - 1);
        const std::size_t src = pick < left ? pick : seg.end + (pick - left);
        // copy from the pristine input, not the partially corrupted output
        std::copy(a.row(src), a.row(src) + len * W, out.row(seg.begin));
      }
    }
    if (action == CorruptAction::mask)
      std::fill(out.row(seg.begin), out.row(seg.begin) + seg.length() * W,
                0.f);
    record.entries.push_back(std::move(entry));
  }
  return {std::move(out), std::move(record)};
}

// Restore helpers: applying the recorded originals at the recorded indices
// must reproduce the pristine input exactly.
inline void restore_text(TokenSequence& corrupted,
                         const TextCorruptionRecord& record) {
  for (const auto& e : record.entries) corrupted[e.pos] = e.original;
}

inline void restore_audio(AudioFeatureMatrix& corrupted,
                          const AudioCorruptionRecord& record) {
  constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;
  for (const auto& e : record.entries)
    std::copy(e.original.begin(), e.original.end(),
              corrupted.row(e.segment.begin));
}

// Warm-up query sequences: all <mask> tokens for text, all-zero segments for
// audio, with the length of the translation target (capped by the model).
inline TokenSequence make_masked_text(std::size_t length, std::size_t cap) {
  check_contract(length >= 1, "make_masked_text: length must be >= 1");
  check_contract(length <= cap,
                 "make_masked_text: length " + std::to_string(length) +
                     " exceeds cap " + std::to_string(cap));
  return TokenSequence(length, kMaskId);
}

inline AudioFeatureMatrix make_masked_audio(std::size_t length,
                                            std::size_t cap) {
  check_contract(length >= 1, "make_masked_audio: length must be >= 1");
  check_contract(length <= cap,
                 "make_masked_audio: length " + std::to_string(length) +
                     " exceeds cap " + std::to_string(cap));
  return AudioFeatureMatrix::zeros(length);
}

// Position-selection mask for the translation-noise imitator: each token
// position independently replaced with replace_prob.
inline std::vector<std::uint8_t> translation_replacement_mask(
    std::size_t length, double replace_prob, Rng& rng) {
  std::vector<std::uint8_t> m(length, 0);
  for (auto& b : m) b = rng.uniform01() < replace_prob ? 1 : 0;
  return m;
}

// Audio-side translation-noise imitator: segments of the clean features are
// replaced by the translated features at identical positions.
inline AudioFeatureMatrix imitate_translation_noise_audio(
    const AudioFeatureMatrix& clean, const AudioFeatureMatrix& translated,
    double replace_prob, Rng& rng, std::size_t len_min = 20,
    std::size_t len_max = 50) {
  check_contract(clean.frames == translated.frames,
                 "imitate_translation_noise: clean has " +
                     std::to_string(clean.frames) + " frames, translation " +
                     std::to_string(translated.frames));
  constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;
  AudioFeatureMatrix out = clean;
  for (const Segment& seg : segment_audio(clean.frames, rng, len_min, len_max))
    if (rng.uniform01() < replace_prob)
      std::copy(translated.row(seg.begin),
                translated.row(seg.begin) + seg.length() * W,
                out.row(seg.begin));
  return out;
}

}  // namespace duomodal
