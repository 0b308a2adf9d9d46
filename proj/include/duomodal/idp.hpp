#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "duomodal/corpus.hpp"
#include "duomodal/corruption.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/model.hpp"
#include "duomodal/serial.hpp"

namespace duomodal {

enum class StoreKind : std::uint8_t {
  text_for_unpaired_audio = 0,  // w_tilde: [text_cap x d]
  audio_for_unpaired_text = 1,  // a_tilde: [audio_cap x 160]
  text_for_paired = 2,          // w_tilde at ground-truth length
  audio_for_paired = 3,         // a_tilde at ground-truth length
};

struct StoreEntry {
  std::uint64_t example_id = 0;
  StoreKind kind{};
  std::uint32_t iteration = 0;
  std::size_t rows = 0, cols = 0;
  std::vector<float> data;

  std::uint64_t checksum() const {
    return hash_bytes(data.data(), data.size() * sizeof(float));
  }
};

// Per-example translations carried across training iterations. Entry shapes
// are fixed at init; refresh rewrites values in place and the iteration
// counter moves in lockstep for every entry.
class PseudoParallelStore {
 public:
  using Key = std::pair<std::uint8_t, std::uint64_t>;

  std::uint32_t iteration() const { return iteration_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  void insert(StoreEntry entry) {
    check_contract(!refreshing_, "store: insert during refresh");
    entry.iteration = iteration_;
    const Key key{static_cast<std::uint8_t>(entry.kind), entry.example_id};
    const bool inserted = entries_.emplace(key, std::move(entry)).second;
    check_contract(inserted, "store: duplicate entry for example " +
                                 std::to_string(key.second));
  }

  bool contains(StoreKind kind, std::uint64_t id) const {
    return entries_.count({static_cast<std::uint8_t>(kind), id}) > 0;
  }

  // Reads are checked against the iteration the caller expects, so a
  // desynchronized pipeline fails loudly instead of training on stale data.
  const StoreEntry& get(StoreKind kind, std::uint64_t id,
                        std::uint32_t expected_iteration) const {
    auto it = entries_.find({static_cast<std::uint8_t>(kind), id});
    if (it == entries_.end())
      throw_contract("store: no translation for example " +
                     std::to_string(id) +
                     " (init_translations must run first)");
    if (it->second.iteration != expected_iteration)
      throw_contract("store: entry for example " + std::to_string(id) +
                     " has iteration " +
                     std::to_string(it->second.iteration) + ", expected " +
                     std::to_string(expected_iteration));
    return it->second;
  }

  void begin_refresh() {
    check_contract(!refreshing_, "store: refresh already in progress");
    refreshing_ = true;
  }

  // Thread-safe across distinct entries: each worker owns a disjoint id set.
  void update(StoreKind kind, std::uint64_t id, std::vector<float> data) {
    auto it = entries_.find({static_cast<std::uint8_t>(kind), id});
    check_contract(it != entries_.end(),
                   "store: update for unknown example " + std::to_string(id));
    StoreEntry& e = it->second;
    check_contract(refreshing_, "store: update outside a refresh");
    check_contract(data.size() == e.rows * e.cols,
                   "store: entry for example " + std::to_string(id) +
                       " has wrong length " + std::to_string(data.size()) +
                       " (expected " + std::to_string(e.rows * e.cols) + ")");
    e.data = std::move(data);
    e.iteration = iteration_ + 1;
  }

  void commit_refresh() {
    check_contract(refreshing_, "store: commit without begin_refresh");
    for (const auto& [key, e] : entries_)
      check_contract(e.iteration == iteration_ + 1,
                     "store: example " + std::to_string(key.second) +
                         " was not refreshed this iteration");
    ++iteration_;
    refreshing_ = false;
  }

  std::map<Key, StoreEntry>& entries() { return entries_; }
  const std::map<Key, StoreEntry>& entries() const { return entries_; }

  std::size_t total_floats(bool unpaired_only = false) const {
    std::size_t n = 0;
    for (const auto& [key, e] : entries_) {
      if (unpaired_only && (e.kind == StoreKind::text_for_paired ||
                            e.kind == StoreKind::audio_for_paired))
        continue;
      n += e.data.size();
    }
    return n;
  }

  // DMS1: magic, u32 iteration, u32 entry count, per entry: u64 example id,
  // u8 kind tag, u32 rows, u32 cols, f32 LE payload, u64 checksum.
  void save(const std::string& path) const {
    check_contract(!refreshing_, "store: save during refresh");
    auto os = open_out(path);
    write_bytes(os, "DMS1", 4);
    write_le<std::uint32_t>(os, iteration_);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [key, e] : entries_) {
      write_le<std::uint64_t>(os, e.example_id);
      write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.kind));
      write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.rows));
      write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.cols));
      write_f32_array(os, e.data.data(), e.data.size());
      write_le<std::uint64_t>(os, e.checksum());
    }
  }

  static PseudoParallelStore load(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, "DMS1", path);
    PseudoParallelStore store;
    store.iteration_ = read_le<std::uint32_t>(is, path + " iteration");
    const auto count = read_le<std::uint32_t>(is, path + " entry count");
    for (std::uint32_t i = 0; i < count; ++i) {
      StoreEntry e;
      e.example_id = read_le<std::uint64_t>(is, path + " example id");
      e.kind = static_cast<StoreKind>(read_le<std::uint8_t>(is, path + " tag"));
      e.rows = read_le<std::uint32_t>(is, path + " rows");
      e.cols = read_le<std::uint32_t>(is, path + " cols");
      e.data.resize(e.rows * e.cols);
      read_f32_array(is, e.data.data(), e.data.size(), path + " payload");
      const auto stored_sum = read_le<std::uint64_t>(is, path + " checksum");
      if (stored_sum != e.checksum())
        throw_data(path + ": checksum mismatch for example " +
                   std::to_string(e.example_id));
      e.iteration = store.iteration_;
      store.entries_.emplace(
          Key{static_cast<std::uint8_t>(e.kind), e.example_id}, std::move(e));
    }
    return store;
  }

 private:
  std::uint32_t iteration_ = 0;
  bool refreshing_ = false;
  std::map<Key, StoreEntry> entries_;
};

namespace idp_detail {

// w_tilde = f(query, f(a; theta_uni_audio); theta_cross_text); one forward
// pass, no gradients.
inline std::vector<float> audio_to_text(ModelParams& p,
                                        const AudioFeatureMatrix& a,
                                        const TokenSequence* masked_query,
                                        const StoreEntry* prev) {
  NoGradGuard ng;
  auto memory =
      unimodal_encode(p, Modality::audio, embed_audio(p, features_tensor(a)));
  Tensor query_emb =
      masked_query
          ? embed_text(p, *masked_query)
          : embed_text(p, Tensor::from_vector(
                              {prev->rows, prev->cols},
                              std::vector<float>(prev->data)));
  auto H = cross_modal_encode(p, Modality::text, query_emb, memory);
  return text_translation_state(p, H).vec();
}

// a_tilde = f(query, f(w; theta_uni_text); theta_cross_audio).
inline std::vector<float> text_to_audio(ModelParams& p, const TokenSequence& w,
                                        std::size_t query_len,
                                        const StoreEntry* prev) {
  NoGradGuard ng;
  auto memory = unimodal_encode(p, Modality::text, embed_text(p, w));
  Tensor query_emb =
      prev ? embed_audio(p, Tensor::from_vector(
                                {prev->rows, prev->cols},
                                std::vector<float>(prev->data)))
           : embed_audio(
                 p, Tensor::zeros({query_len,
                                   AudioFeatureMatrix::kFeatureDim}));
  auto H = cross_modal_encode(p, Modality::audio, query_emb, memory);
  return audio_head(p, H).vec();
}

struct WorkItem {
  StoreKind kind;
  const Example* example;
};

inline std::vector<WorkItem> work_items(const Corpus& corpus,
                                        bool include_paired) {
  std::vector<WorkItem> items;
  for (const auto& ex : corpus.unpaired_audio)
    items.push_back({StoreKind::text_for_unpaired_audio, &ex});
  for (const auto& ex : corpus.unpaired_text)
    items.push_back({StoreKind::audio_for_unpaired_text, &ex});
  if (include_paired)
    for (const auto& ex : corpus.paired) {
      items.push_back({StoreKind::text_for_paired, &ex});
      items.push_back({StoreKind::audio_for_paired, &ex});
    }
  return items;
}

// Translation for one work item; from_masked selects the init/regenerate
// behavior (conditioning only on the source modality).
inline std::vector<float> translate(ModelParams& p, const WorkItem& item,
                                    const StoreEntry* prev, bool from_masked) {
  const auto& cfg = p.config();
  switch (item.kind) {
    case StoreKind::text_for_unpaired_audio: {
      const auto masked =
          make_masked_text(cfg.max_text_len, cfg.max_text_len);
      return audio_to_text(p, item.example->features,
                           from_masked ? &masked : nullptr, prev);
    }
    case StoreKind::audio_for_unpaired_text:
      return text_to_audio(p, item.example->tokens, cfg.max_audio_len,
                           from_masked ? nullptr : prev);
    case StoreKind::text_for_paired: {
      const auto masked =
          make_masked_text(item.example->tokens.size(), cfg.max_text_len);
      return audio_to_text(p, item.example->features,
                           from_masked ? &masked : nullptr, prev);
    }
    case StoreKind::audio_for_paired:
      return text_to_audio(p, item.example->tokens,
                           item.example->features.frames,
                           from_masked ? nullptr : prev);
  }
  throw_contract("translate: unknown store kind");
}

template <typename Fn>
void parallel_over(const std::vector<WorkItem>& items, std::size_t workers,
                   Fn&& fn) {
  workers = std::max<std::size_t>(1, workers);
  if (workers == 1 || items.size() < 2) {
    for (std::size_t i = 0; i < items.size(); ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < items.size(); i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace idp_detail

inline std::size_t translation_rows(StoreKind kind, const ModelConfig& cfg,
                                    const Example& ex) {
  switch (kind) {
    case StoreKind::text_for_unpaired_audio:
      return cfg.max_text_len;
    case StoreKind::audio_for_unpaired_text:
      return cfg.max_audio_len;
    case StoreKind::text_for_paired:
      return ex.tokens.size();
    case StoreKind::audio_for_paired:
      return ex.features.frames;
  }
  throw_contract("translation_rows: unknown store kind");
}

inline std::size_t translation_cols(StoreKind kind, const ModelConfig& cfg) {
  return (kind == StoreKind::text_for_unpaired_audio ||
          kind == StoreKind::text_for_paired)
             ? cfg.d
             : AudioFeatureMatrix::kFeatureDim;
}

// w_tilde_0 / a_tilde_0 for every unpaired example (and the paired ones the
// noise imitator needs), from fully masked queries. Iteration counter starts
// at 0.
inline PseudoParallelStore init_translations(ModelParams& params,
                                             const Corpus& corpus,
                                             bool include_paired = true,
                                             std::size_t workers = 1) {
  PseudoParallelStore store;
  const auto items = idp_detail::work_items(corpus, include_paired);
  std::vector<StoreEntry> results(items.size());
  idp_detail::parallel_over(items, workers, [&](std::size_t i) {
    StoreEntry e;
    e.example_id = items[i].example->id;
    e.kind = items[i].kind;
    e.rows = translation_rows(items[i].kind, params.config(), *items[i].example);
    e.cols = translation_cols(items[i].kind, params.config());
    e.data = idp_detail::translate(params, items[i], nullptr, true);
    check_contract(e.data.size() == e.rows * e.cols,
                   "init_translations: unexpected translation size");
    results[i] = std::move(e);
  });
  for (auto& e : results) store.insert(std::move(e));
  return store;
}

// One IDP step: every entry is recomputed from the previous translation as
// the query and the source modality as memory; k advances by one.
inline void refresh_translations(PseudoParallelStore& store,
                                 ModelParams& params, const Corpus& corpus,
                                 std::size_t workers = 1) {
  const bool include_paired =
      store.contains(StoreKind::text_for_paired,
                     corpus.paired.empty() ? 0 : corpus.paired[0].id);
  const auto items = idp_detail::work_items(
      corpus, include_paired && !corpus.paired.empty());
  check_contract(items.size() == store.size(),
                 "refresh_translations: corpus and store disagree on entries");
  std::vector<std::vector<float>> results(items.size());
  const std::uint32_t k = store.iteration();
  idp_detail::parallel_over(items, workers, [&](std::size_t i) {
    const StoreEntry& prev =
        store.get(items[i].kind, items[i].example->id, k);
    results[i] = idp_detail::translate(params, items[i], &prev, false);
  });
  store.begin_refresh();
  for (std::size_t i = 0; i < items.size(); ++i)
    store.update(items[i].kind, items[i].example->id, std::move(results[i]));
  store.commit_refresh();
}

// Back-translation-style ablation: translations are regenerated from masked
// queries only, ignoring the previous iteration's state.
inline void regenerate_translations(PseudoParallelStore& store,
                                    ModelParams& params, const Corpus& corpus,
                                    std::size_t workers = 1) {
  const bool include_paired =
      store.contains(StoreKind::text_for_paired,
                     corpus.paired.empty() ? 0 : corpus.paired[0].id);
  const auto items = idp_detail::work_items(
      corpus, include_paired && !corpus.paired.empty());
  check_contract(items.size() == store.size(),
                 "regenerate_translations: corpus and store disagree");
  std::vector<std::vector<float>> results(items.size());
  idp_detail::parallel_over(items, workers, [&](std::size_t i) {
    results[i] = idp_detail::translate(params, items[i], nullptr, true);
  });
  store.begin_refresh();
  for (std::size_t i = 0; i < items.size(); ++i)
    store.update(items[i].kind, items[i].example->id, std::move(results[i]));
  store.commit_refresh();
}

}  // namespace duomodal
