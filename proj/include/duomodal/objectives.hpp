#pragma once

#include <optional>
#include <string>

#include "duomodal/corruption.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/idp.hpp"
#include "duomodal/model.hpp"
#include "duomodal/rng.hpp"
#include "duomodal/tensor.hpp"

namespace duomodal {

// Per-phase scalar components of one step; total is their unweighted sum
// (the text and audio losses are deliberately left unbalanced).
struct LossBundle {
  double idae_text = 0, idae_audio = 0;
  double cdae_unpaired_text = 0, cdae_unpaired_audio = 0;
  double cdae_paired_text = 0, cdae_paired_audio = 0;
  double warm_text = 0, warm_audio = 0;

  double total() const {
    return idae_text + idae_audio + cdae_unpaired_text + cdae_unpaired_audio +
           cdae_paired_text + cdae_paired_audio + warm_text + warm_audio;
  }

  LossBundle& operator+=(const LossBundle& o) {
    idae_text += o.idae_text;
    idae_audio += o.idae_audio;
    cdae_unpaired_text += o.cdae_unpaired_text;
    cdae_unpaired_audio += o.cdae_unpaired_audio;
    cdae_paired_text += o.cdae_paired_text;
    cdae_paired_audio += o.cdae_paired_audio;
    warm_text += o.warm_text;
    warm_audio += o.warm_audio;
    return *this;
  }

  LossBundle& operator*=(double s) {
    idae_text *= s;
    idae_audio *= s;
    cdae_unpaired_text *= s;
    cdae_unpaired_audio *= s;
    cdae_paired_text *= s;
    cdae_paired_audio *= s;
    warm_text *= s;
    warm_audio *= s;
    return *this;
  }
};

namespace objectives_detail {

inline Tensor store_entry_tensor(const StoreEntry& e) {
  return Tensor::from_vector({e.rows, e.cols}, std::vector<float>(e.data));
}

inline AudioFeatureMatrix store_entry_features(const StoreEntry& e) {
  check_contract(e.cols == AudioFeatureMatrix::kFeatureDim,
                 "store entry for example " + std::to_string(e.example_id) +
                     " is not an audio translation");
  AudioFeatureMatrix m = AudioFeatureMatrix::zeros(e.rows);
  m.data = e.data;
  return m;
}

inline void check_text_translation(const StoreEntry& e, std::size_t d) {
  check_contract(e.cols == d,
                 "store entry for example " + std::to_string(e.example_id) +
                     " has width " + std::to_string(e.cols) + ", expected " +
                     std::to_string(d));
}

}  // namespace objectives_detail

// ---------------------------------------------------------------------------
// IDAE: reconstruct the corrupted input within one modality. Only the
// unimodal encoders (plus embeddings and heads) ever see gradients here.

// Returns nothing when corruption selected no position for this example.
inline std::optional<Tensor> idae_text_example_loss(
    ModelParams& p, const TokenSequence& w, const CorruptionPolicy& policy,
    Rng& rng, bool loss_on_selected_only = true) {
  auto [corrupted, record] = corrupt_text(w, policy, rng,
                                          p.config().vocab_size);
  if (loss_on_selected_only && record.entries.empty()) return std::nullopt;
  auto H = unimodal_encode(p, Modality::text, embed_text(p, corrupted));
  auto logits = text_head_logits(p, H);
  return cross_entropy(logits, w,
                       loss_on_selected_only
                           ? record.selected_mask(w.size())
                           : std::vector<std::uint8_t>{});
}

inline std::optional<Tensor> idae_audio_example_loss(
    ModelParams& p, const AudioFeatureMatrix& a, const CorruptionPolicy& policy,
    Rng& rng, bool loss_on_selected_only = true) {
  auto [corrupted, record] = corrupt_audio(a, policy, rng);
  if (loss_on_selected_only && record.entries.empty()) return std::nullopt;
  auto H =
      unimodal_encode(p, Modality::audio, embed_audio(p, features_tensor(corrupted)));
  auto pred = audio_head(p, H);
  return l1_loss(pred, features_tensor(a),
                 loss_on_selected_only ? record.selected_rows(a.frames)
                                       : std::vector<std::uint8_t>{});
}

// ---------------------------------------------------------------------------
// Warm-up: pure modality translation from a fully masked query conditioned
// on the clean source modality; loss over all positions.

inline Tensor warm_text_example_loss(ModelParams& p, const TokenSequence& w,
                                     const AudioFeatureMatrix& a) {
  auto memory =
      unimodal_encode(p, Modality::audio, embed_audio(p, features_tensor(a)));
  auto query = embed_text(
      p, make_masked_text(w.size(), p.config().max_text_len));
  auto H = cross_modal_encode(p, Modality::text, query, memory);
  return cross_entropy(text_head_logits(p, H), w);
}

inline Tensor warm_audio_example_loss(ModelParams& p, const TokenSequence& w,
                                      const AudioFeatureMatrix& a) {
  auto memory = unimodal_encode(p, Modality::text, embed_text(p, w));
  auto query = embed_audio(
      p, features_tensor(make_masked_audio(a.frames, p.config().max_audio_len)));
  auto H = cross_modal_encode(p, Modality::audio, query, memory);
  return l1_loss(audio_head(p, H), features_tensor(a));
}

// ---------------------------------------------------------------------------
// CDAE on the non-parallel corpora: reconstruct the corrupted input given
// the stored pseudo-parallel translation as cross-modal memory.

inline std::optional<Tensor> cdae_unpaired_text_example_loss(
    ModelParams& p, const TokenSequence& w, const StoreEntry& a_tilde,
    const CorruptionPolicy& policy, Rng& rng,
    bool loss_on_selected_only = true) {
  auto translated = objectives_detail::store_entry_features(a_tilde);
  auto [corrupted, record] =
      corrupt_text(w, policy, rng, p.config().vocab_size);
  if (loss_on_selected_only && record.entries.empty()) return std::nullopt;
  auto memory = unimodal_encode(
      p, Modality::audio, embed_audio(p, features_tensor(translated)));
  auto query = embed_text(p, corrupted);
  auto H = cross_modal_encode(p, Modality::text, query, memory);
  return cross_entropy(text_head_logits(p, H), w,
                       loss_on_selected_only
                           ? record.selected_mask(w.size())
                           : std::vector<std::uint8_t>{});
}

inline std::optional<Tensor> cdae_unpaired_audio_example_loss(
    ModelParams& p, const AudioFeatureMatrix& a, const StoreEntry& w_tilde,
    const CorruptionPolicy& policy, Rng& rng,
    bool loss_on_selected_only = true) {
  objectives_detail::check_text_translation(w_tilde, p.config().d);
  auto [corrupted, record] = corrupt_audio(a, policy, rng);
  if (loss_on_selected_only && record.entries.empty()) return std::nullopt;
  auto memory = unimodal_encode(
      p, Modality::text,
      embed_text(p, objectives_detail::store_entry_tensor(w_tilde)));
  auto query = embed_audio(p, features_tensor(corrupted));
  auto H = cross_modal_encode(p, Modality::audio, query, memory);
  return l1_loss(audio_head(p, H), features_tensor(a),
                 loss_on_selected_only ? record.selected_rows(a.frames)
                                       : std::vector<std::uint8_t>{});
}

// ---------------------------------------------------------------------------
// CDAE on the parallel corpus. The memory side passes through the
// translation-noise imitator: a fraction of clean tokens (segments) is
// replaced by the IDP translation at the same positions, so the paired
// conditioning looks like the pseudo-parallel one.

inline std::optional<Tensor> cdae_paired_text_example_loss(
    ModelParams& p, const TokenSequence& w, const AudioFeatureMatrix& a,
    const StoreEntry& a_tilde, double replace_prob,
    const CorruptionPolicy& policy, Rng& noise_rng, Rng& corrupt_rng,
    bool loss_on_selected_only = true) {
  check_contract(a_tilde.rows == a.frames,
                 "paired translation for example " +
                     std::to_string(a_tilde.example_id) + " has " +
                     std::to_string(a_tilde.rows) + " frames, ground truth " +
                     std::to_string(a.frames));
  auto mixed = imitate_translation_noise_audio(
      a, objectives_detail::store_entry_features(a_tilde), replace_prob,
      noise_rng, policy.segment_len_min, policy.segment_len_max);
  auto [corrupted, record] =
      corrupt_text(w, policy, corrupt_rng, p.config().vocab_size);
  if (loss_on_selected_only && record.entries.empty()) return std::nullopt;
  auto memory =
      unimodal_encode(p, Modality::audio, embed_audio(p, features_tensor(mixed)));
  auto query = embed_text(p, corrupted);
  auto H = cross_modal_encode(p, Modality::text, query, memory);
  return cross_entropy(text_head_logits(p, H), w,
                       loss_on_selected_only
                           ? record.selected_mask(w.size())
                           : std::vector<std::uint8_t>{});
}

inline std::optional<Tensor> cdae_paired_audio_example_loss(
    ModelParams& p, const TokenSequence& w, const AudioFeatureMatrix& a,
    const StoreEntry& w_tilde, double replace_prob,
    const CorruptionPolicy& policy, Rng& noise_rng, Rng& corrupt_rng,
    bool loss_on_selected_only = true) {
  objectives_detail::check_text_translation(w_tilde, p.config().d);
  check_contract(w_tilde.rows == w.size(),
                 "paired translation for example " +
                     std::to_string(w_tilde.example_id) + " has " +
                     std::to_string(w_tilde.rows) + " rows, ground truth " +
                     std::to_string(w.size()));
  // clean rows are table embeddings (gradients flow into the table), replaced
  // rows are the translated soft embeddings
  auto clean_rows = embedding_lookup(p.get("embed.token_table"), w);
  auto translated = objectives_detail::store_entry_tensor(w_tilde);
  auto mask = translation_replacement_mask(w.size(), replace_prob, noise_rng);
  auto mixed = blend_rows(clean_rows, translated, mask);
  auto [corrupted, record] = corrupt_audio(a, policy, corrupt_rng);
  if (loss_on_selected_only && record.entries.empty()) return std::nullopt;
  auto memory = unimodal_encode(p, Modality::text, embed_text(p, mixed));
  auto query = embed_audio(p, features_tensor(corrupted));
  auto H = cross_modal_encode(p, Modality::audio, query, memory);
  return l1_loss(audio_head(p, H), features_tensor(a),
                 loss_on_selected_only ? record.selected_rows(a.frames)
                                       : std::vector<std::uint8_t>{});
}

// Fully paired pre-training keeps the clean source as memory (no stored
// translation exists because IDP is off in that mode).
inline std::optional<Tensor> cdae_paired_clean_text_example_loss(
    ModelParams& p, const TokenSequence& w, const AudioFeatureMatrix& a,
    const CorruptionPolicy& policy, Rng& rng,
    bool loss_on_selected_only = true) {
  auto [corrupted, record] = corrupt_text(w, policy, rng,
                                          p.config().vocab_size);
  if (loss_on_selected_only && record.entries.empty()) return std::nullopt;
  auto memory =
      unimodal_encode(p, Modality::audio, embed_audio(p, features_tensor(a)));
  auto query = embed_text(p, corrupted);
  auto H = cross_modal_encode(p, Modality::text, query, memory);
  return cross_entropy(text_head_logits(p, H), w,
                       loss_on_selected_only
                           ? record.selected_mask(w.size())
                           : std::vector<std::uint8_t>{});
}

inline std::optional<Tensor> cdae_paired_clean_audio_example_loss(
    ModelParams& p, const TokenSequence& w, const AudioFeatureMatrix& a,
    const CorruptionPolicy& policy, Rng& rng,
    bool loss_on_selected_only = true) {
  auto [corrupted, record] = corrupt_audio(a, policy, rng);
  if (loss_on_selected_only && record.entries.empty()) return std::nullopt;
  auto memory = unimodal_encode(p, Modality::text, embed_text(p, w));
  auto query = embed_audio(p, features_tensor(corrupted));
  auto H = cross_modal_encode(p, Modality::audio, query, memory);
  return l1_loss(audio_head(p, H), features_tensor(a),
                 loss_on_selected_only ? record.selected_rows(a.frames)
                                       : std::vector<std::uint8_t>{});
}

}  // namespace duomodal
