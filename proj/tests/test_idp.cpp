#include "duomodal/idp.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "duomodal/errors.hpp"
#include "duomodal/fidelity.hpp"
#include "duomodal/synth.hpp"

using namespace duomodal;
namespace fs = std::filesystem;

namespace {

struct World {
  std::string dir;
  Corpus corpus;
  ModelConfig cfg;

  ~World() { fs::remove_all(dir); }
};

World make_world(std::uint64_t seed = 3) {
  World w;
  w.dir = (fs::temp_directory_path() /
           ("duomodal_idp_" + std::to_string(seed)))
              .string();
  fs::remove_all(w.dir);
  SynthSpec spec;
  spec.content_vocab = 16;
  spec.n_paired = 6;
  spec.n_unpaired_text = 10;
  spec.n_unpaired_audio = 10;
  spec.n_test = 4;
  spec.seed = seed;
  generate_corpus(spec, w.dir);
  w.corpus = Corpus::load(w.dir);
  w.cfg.vocab_size = w.corpus.tokenizer.vocab_size();
  w.cfg.d = 32;
  w.cfg.n_heads = 4;
  return w;
}

}  // namespace

TEST(Store, LockstepIsEnforced) {
  PseudoParallelStore store;
  StoreEntry e;
  e.example_id = 7;
  e.kind = StoreKind::audio_for_unpaired_text;
  e.rows = 4;
  e.cols = 160;
  e.data.assign(4 * 160, 1.f);
  store.insert(std::move(e));
  EXPECT_NO_THROW(store.get(StoreKind::audio_for_unpaired_text, 7, 0));
  EXPECT_THROW(store.get(StoreKind::audio_for_unpaired_text, 7, 1), Error);
  EXPECT_THROW(store.get(StoreKind::audio_for_unpaired_text, 8, 0), Error);
  // updates must be bracketed by a refresh and cover every entry
  EXPECT_THROW(store.update(StoreKind::audio_for_unpaired_text, 7,
                            std::vector<float>(4 * 160, 2.f)),
               Error);
  store.begin_refresh();
  EXPECT_THROW(store.commit_refresh(), Error);  // nothing refreshed yet
  store.update(StoreKind::audio_for_unpaired_text, 7,
               std::vector<float>(4 * 160, 2.f));
  // wrong length is rejected with the example id in the message
  try {
    store.update(StoreKind::audio_for_unpaired_text, 7,
                 std::vector<float>(3, 0.f));
    FAIL();
  } catch (const Error& err) {
    EXPECT_NE(std::string(err.what()).find("7"), std::string::npos);
  }
  store.commit_refresh();
  EXPECT_EQ(store.iteration(), 1u);
  EXPECT_NO_THROW(store.get(StoreKind::audio_for_unpaired_text, 7, 1));
}

TEST(Store, SaveLoadRoundTripWithChecksums) {
  PseudoParallelStore store;
  Rng rng(5);
  for (std::uint64_t id = 0; id < 5; ++id) {
    StoreEntry e;
    e.example_id = id;
    e.kind = id % 2 ? StoreKind::text_for_unpaired_audio
                    : StoreKind::audio_for_unpaired_text;
    e.rows = 3;
    e.cols = id % 2 ? 8 : 160;
    e.data.resize(e.rows * e.cols);
    for (auto& x : e.data) x = static_cast<float>(rng.uniform01());
    store.insert(std::move(e));
  }
  const auto path =
      (fs::temp_directory_path() / "duomodal_store.dms").string();
  store.save(path);
  auto loaded = PseudoParallelStore::load(path);
  EXPECT_EQ(loaded.iteration(), store.iteration());
  EXPECT_EQ(loaded.size(), store.size());
  for (const auto& [key, e] : store.entries())
    EXPECT_EQ(loaded.entries().at(key).data, e.data);
  // corrupt one payload byte: load must fail the checksum
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    char c;
    f.seekg(40);
    f.get(c);
    f.seekp(40);
    f.put(static_cast<char>(c ^ 0x40));
  }
  EXPECT_THROW(PseudoParallelStore::load(path), Error);
  fs::remove(path);
}

TEST(Idp, InitShapesFollowCapsAndGroundTruth) {
  auto w = make_world(21);
  ModelParams params(w.cfg, 1);
  auto store = init_translations(params, w.corpus);
  EXPECT_EQ(store.iteration(), 0u);
  for (const auto& ex : w.corpus.unpaired_audio) {
    const auto& e = store.get(StoreKind::text_for_unpaired_audio, ex.id, 0);
    EXPECT_EQ(e.rows, w.cfg.max_text_len);
    EXPECT_EQ(e.cols, w.cfg.d);
  }
  for (const auto& ex : w.corpus.unpaired_text) {
    const auto& e = store.get(StoreKind::audio_for_unpaired_text, ex.id, 0);
    EXPECT_EQ(e.rows, w.cfg.max_audio_len);
    EXPECT_EQ(e.cols, 160u);
  }
  for (const auto& ex : w.corpus.paired) {
    EXPECT_EQ(store.get(StoreKind::text_for_paired, ex.id, 0).rows,
              ex.tokens.size());
    EXPECT_EQ(store.get(StoreKind::audio_for_paired, ex.id, 0).rows,
              ex.features.frames);
  }
  // memory bound: unpaired entries occupy exactly the preallocated float count
  const std::size_t expected =
      w.corpus.unpaired_text.size() * w.cfg.max_audio_len * 160 +
      w.corpus.unpaired_audio.size() * w.cfg.max_text_len * w.cfg.d;
  EXPECT_EQ(store.total_floats(true), expected);
}

TEST(Idp, InitIsDeterministicAndFiniteAndDistinct) {
  auto w = make_world(22);
  ModelParams params(w.cfg, 2);
  auto s1 = init_translations(params, w.corpus);
  auto s2 = init_translations(params, w.corpus);
  for (const auto& [key, e] : s1.entries())
    EXPECT_EQ(s2.entries().at(key).data, e.data);
  // untrained model: translations finite and nonconstant across >= 10
  // examples with distinct sources
  std::set<std::uint64_t> sums;
  for (const auto& ex : w.corpus.unpaired_text) {
    const auto& e = s1.get(StoreKind::audio_for_unpaired_text, ex.id, 0);
    for (float v : e.data) ASSERT_TRUE(std::isfinite(v));
    sums.insert(e.checksum());
  }
  EXPECT_GE(sums.size(), 10u);
}

TEST(Idp, RefreshIsDeterministicMapAndAdvancesIteration) {
  auto w = make_world(23);
  ModelParams params(w.cfg, 3);
  auto a = init_translations(params, w.corpus);
  auto b = init_translations(params, w.corpus);
  refresh_translations(a, params, w.corpus);
  refresh_translations(b, params, w.corpus);
  EXPECT_EQ(a.iteration(), 1u);
  for (const auto& [key, e] : a.entries()) {
    EXPECT_EQ(b.entries().at(key).data, e.data);
    EXPECT_EQ(e.rows, b.entries().at(key).rows);  // shapes preserved
  }
}

TEST(Idp, RefreshMatchesSingleThreadedResultWithWorkers) {
  auto w = make_world(24);
  ModelParams params(w.cfg, 4);
  auto a = init_translations(params, w.corpus, true, 1);
  auto b = init_translations(params, w.corpus, true, 2);
  for (const auto& [key, e] : a.entries())
    EXPECT_EQ(b.entries().at(key).data, e.data);
  refresh_translations(a, params, w.corpus, 1);
  refresh_translations(b, params, w.corpus, 2);
  for (const auto& [key, e] : a.entries())
    EXPECT_EQ(b.entries().at(key).data, e.data);
}

TEST(Idp, RefreshNeverTouchesGradients) {
  auto w = make_world(25);
  ModelParams params(w.cfg, 5);
  // populate grads with sentinel values
  for (auto& [name, t] : params.all()) {
    t.zero_grad();
    t.grad()[0] = 0.5f;
  }
  std::uint64_t before = 0;
  for (auto& [name, t] : params.all())
    before = hash_bytes(t.grad().data(), t.grad().size() * 4, before);
  auto store = init_translations(params, w.corpus);
  refresh_translations(store, params, w.corpus);
  std::uint64_t after = 0;
  for (auto& [name, t] : params.all())
    after = hash_bytes(t.grad().data(), t.grad().size() * 4, after);
  EXPECT_EQ(before, after);
}

TEST(Idp, RegenerateIgnoresPreviousStoreState) {
  auto w = make_world(26);
  ModelParams params(w.cfg, 6);
  auto fresh = init_translations(params, w.corpus);
  auto scrambled = init_translations(params, w.corpus);
  {
    // overwrite every entry with junk; regenerate must not care
    scrambled.begin_refresh();
    for (auto& [key, e] : scrambled.entries())
      scrambled.update(e.kind, e.example_id,
                       std::vector<float>(e.rows * e.cols, 9.f));
    scrambled.commit_refresh();
  }
  regenerate_translations(scrambled, params, w.corpus);
  // regenerate equals init output for identical params
  for (const auto& [key, e] : scrambled.entries())
    EXPECT_EQ(e.data, fresh.entries().at(key).data);
}

TEST(Idp, PairedTranslationLengthsMatchGroundTruth) {
  auto w = make_world(27);
  ModelParams params(w.cfg, 7);
  auto store = init_translations(params, w.corpus);
  refresh_translations(store, params, w.corpus);
  for (const auto& ex : w.corpus.paired) {
    EXPECT_EQ(store.get(StoreKind::text_for_paired, ex.id, 1).rows,
              ex.tokens.size());
    EXPECT_EQ(store.get(StoreKind::audio_for_paired, ex.id, 1).rows,
              ex.features.frames);
  }
}

TEST(Fidelity, ZeroTranslationScoresMeanAbsTruth) {
  auto w = make_world(28);
  ModelParams params(w.cfg, 8);
  auto store = init_translations(params, w.corpus);
  // zero out the audio translations
  store.begin_refresh();
  for (auto& [key, e] : store.entries())
    store.update(e.kind, e.example_id,
                 std::vector<float>(e.rows * e.cols, 0.f));
  store.commit_refresh();
  auto report = fidelity_oracle(store, w.corpus, &params);
  // expected: mean |truth| over the compared region
  double expected = 0;
  std::size_t n = 0;
  for (const auto& ex : w.corpus.unpaired_text) {
    auto truth = w.corpus.hidden_audio_for_text(ex.id);
    const std::size_t overlap =
        std::min<std::size_t>(w.cfg.max_audio_len, truth.frames);
    double s = 0;
    for (std::size_t t = 0; t < overlap; ++t)
      for (std::size_t j = 0; j < 160; ++j) s += std::abs(truth.at(t, j));
    expected += s / (overlap * 160.0);
    ++n;
  }
  expected /= n;
  EXPECT_NEAR(report.audio_l1, expected, 1e-5);
  EXPECT_EQ(report.audio_entries, w.corpus.unpaired_text.size());
}

TEST(Fidelity, PerfectTranslationScoresZeroL1) {
  auto w = make_world(29);
  ModelParams params(w.cfg, 9);
  auto store = init_translations(params, w.corpus);
  store.begin_refresh();
  for (auto& [key, e] : store.entries()) {
    if (e.kind == StoreKind::audio_for_unpaired_text) {
      auto truth = w.corpus.hidden_audio_for_text(e.example_id);
      std::vector<float> data(e.rows * e.cols, 0.f);
      const std::size_t overlap = std::min<std::size_t>(e.rows, truth.frames);
      std::copy(truth.data.begin(), truth.data.begin() + overlap * 160,
                data.begin());
      store.update(e.kind, e.example_id, std::move(data));
    } else {
      store.update(e.kind, e.example_id,
                   std::vector<float>(e.data));
    }
  }
  store.commit_refresh();
  auto report = fidelity_oracle(store, w.corpus);
  EXPECT_NEAR(report.audio_l1, 0.0, 1e-7);
}
