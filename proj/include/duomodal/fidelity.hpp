#pragma once

#include <cmath>
#include <cstdint>

#include "duomodal/corpus.hpp"
#include "duomodal/idp.hpp"
#include "duomodal/model.hpp"

namespace duomodal {

struct FidelityReport {
  // mean per-element |a_tilde - truth| over the overlapping frames, in the
  // normalized feature space the model trains in
  double audio_l1 = 0;
  std::size_t audio_entries = 0;
  // mean cosine between w_tilde rows and the true tokens' table embeddings
  double text_cosine = 0;
  std::size_t text_entries = 0;
};

// Scores stored translations against the corpus's hidden ground-truth
// pairings. Evaluation-only: training code never touches the hidden keys.
inline FidelityReport fidelity_oracle(const PseudoParallelStore& store,
                                      const Corpus& corpus,
                                      ModelParams* params = nullptr) {
  constexpr std::size_t W = AudioFeatureMatrix::kFeatureDim;
  FidelityReport report;

  double l1_sum = 0;
  for (const auto& ex : corpus.unpaired_text) {
    if (!store.contains(StoreKind::audio_for_unpaired_text, ex.id)) continue;
    const StoreEntry& e =
        store.get(StoreKind::audio_for_unpaired_text, ex.id, store.iteration());
    const auto truth = corpus.hidden_audio_for_text(ex.id);
    const std::size_t overlap = std::min<std::size_t>(e.rows, truth.frames);
    check_data(overlap > 0, "fidelity oracle: empty overlap for example " +
                                std::to_string(ex.id));
    double s = 0;
    for (std::size_t t = 0; t < overlap; ++t)
      for (std::size_t j = 0; j < W; ++j)
        s += std::abs(e.data[t * W + j] - truth.at(t, j));
    l1_sum += s / (static_cast<double>(overlap) * W);
    ++report.audio_entries;
  }
  if (report.audio_entries) l1_sum /= report.audio_entries;
  report.audio_l1 = l1_sum;

  if (params) {
    const auto& table = params->get("embed.token_table");
    const std::size_t d = params->config().d;
    double cos_sum = 0;
    for (const auto& ex : corpus.unpaired_audio) {
      if (!store.contains(StoreKind::text_for_unpaired_audio, ex.id)) continue;
      const StoreEntry& e = store.get(StoreKind::text_for_unpaired_audio,
                                      ex.id, store.iteration());
      const TokenSequence truth = corpus.hidden_text_for_audio(ex.id);
      const std::size_t overlap = std::min<std::size_t>(e.rows, truth.size());
      check_data(overlap > 0, "fidelity oracle: empty overlap for example " +
                                  std::to_string(ex.id));
      double s = 0;
      for (std::size_t t = 0; t < overlap; ++t) {
        double dot = 0, na = 0, nb = 0;
        const float* row = e.data.data() + t * d;
        for (std::size_t j = 0; j < d; ++j) {
          const double a = row[j];
          const double b = table.at(truth[t], j);
          dot += a * b;
          na += a * a;
          nb += b * b;
        }
        s += dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
      }
      cos_sum += s / overlap;
      ++report.text_entries;
    }
    if (report.text_entries) cos_sum /= report.text_entries;
    report.text_cosine = cos_sum;
  }
  return report;
}

// Fraction of hidden true tokens recovered in order by nearest-cosine
// decoding of stored w_tilde rows against the token table.
inline double decode_recovery_rate(const PseudoParallelStore& store,
                                   const Corpus& corpus, ModelParams& params) {
  const auto& table = params.get("embed.token_table");
  const std::size_t d = params.config().d;
  const std::size_t V = params.config().vocab_size;
  std::size_t hits = 0, total = 0;
  for (const auto& ex : corpus.unpaired_audio) {
    if (!store.contains(StoreKind::text_for_unpaired_audio, ex.id)) continue;
    const StoreEntry& e = store.get(StoreKind::text_for_unpaired_audio, ex.id,
                                    store.iteration());
    const TokenSequence truth = corpus.hidden_text_for_audio(ex.id);
    const std::size_t overlap = std::min<std::size_t>(e.rows, truth.size());
    for (std::size_t t = 0; t < overlap; ++t) {
      const float* row = e.data.data() + t * d;
      double best = -2;
      std::int64_t best_id = 0;
      for (std::size_t v = 0; v < V; ++v) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += static_cast<double>(row[j]) * table.at(v, j);
          na += static_cast<double>(row[j]) * row[j];
          nb += static_cast<double>(table.at(v, j)) * table.at(v, j);
        }
        const double c = dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
        if (c > best) {
          best = c;
          best_id = static_cast<std::int64_t>(v);
        }
      }
      hits += best_id == truth[t];
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / total : 0.0;
}

}  // namespace duomodal
