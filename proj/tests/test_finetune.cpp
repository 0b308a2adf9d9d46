#include "duomodal/finetune.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "duomodal/errors.hpp"
#include "duomodal/synth.hpp"

using namespace duomodal;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d = 16;
  c.n_heads = 2;
  c.n_uni_layers = 1;
  c.n_cross_layers = 1;
  c.vocab_size = 12;
  c.max_text_len = 8;
  c.max_audio_len = 16;
  c.ffn_multiplier = 2;
  return c;
}

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(r * c);
  for (auto& x : v) x = static_cast<float>(rng.uniform01() - 0.5);
  return Tensor::from_vector({r, c}, std::move(v));
}

// trivially learnable dataset: the first token (3 or 4) determines the
// label, and the audio carries a matching constant signature
std::vector<Example> easy_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.id = i;
    const int label = static_cast<int>(rng.uniform_int(0, 1));
    ex.tokens = {label ? 4 : 3, 5, 6};
    ex.features = AudioFeatureMatrix::zeros(6);
    for (auto& x : ex.features.data)
      x = (label ? 0.5f : -0.5f) +
          static_cast<float>(0.05 * rng.normal());
    ex.label = label;
    ex.has_label = true;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TEST(Fuse, ConstantRowsConcatenateTextFirst) {
  auto Hw = Tensor::filled({3, 4}, 2.f);
  auto Ha = Tensor::filled({5, 4}, -1.f);
  auto h = fuse(Hw, Ha);
  ASSERT_EQ(h.shape(), (Shape{1, 8}));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_FLOAT_EQ(h.at(0, j), 2.f);
    EXPECT_FLOAT_EQ(h.at(0, 4 + j), -1.f);
  }
}

TEST(Fuse, PaddedJunkRowsDoNotChangeThePool) {
  auto Hw = random_matrix(4, 6, 1);
  auto Ha = random_matrix(5, 6, 2);
  auto base = fuse(Hw, Ha, {0, 0, 1, 1}, {0, 0, 0, 1, 1});
  // rewrite the padded rows with junk
  auto Hw2 = Tensor::from_vector(Hw.shape(), Hw.vec());
  auto Ha2 = Tensor::from_vector(Ha.shape(), Ha.vec());
  for (std::size_t j = 0; j < 6; ++j) {
    Hw2.at(2, j) = 99.f;
    Hw2.at(3, j) = -99.f;
    Ha2.at(3, j) = 77.f;
    Ha2.at(4, j) = -77.f;
  }
  auto changed = fuse(Hw2, Ha2, {0, 0, 1, 1}, {0, 0, 0, 1, 1});
  for (std::size_t j = 0; j < 12; ++j)
    EXPECT_NEAR(base.at(0, j), changed.at(0, j), 1e-6);
}

TEST(Fuse, AllPaddedModalityThrows) {
  auto Hw = random_matrix(2, 4, 3);
  auto Ha = random_matrix(2, 4, 4);
  EXPECT_THROW(fuse(Hw, Ha, {1, 1}, {}), Error);
}

TEST(Fuse, AblationZeroesOneHalfButKeepsWidth) {
  auto Hw = Tensor::filled({2, 4}, 3.f);
  auto Ha = Tensor::filled({2, 4}, 5.f);
  auto no_text = fuse(Hw, Ha, {}, {}, false, true);
  ASSERT_EQ(no_text.shape(), (Shape{1, 8}));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_FLOAT_EQ(no_text.at(0, j), 0.f);
    EXPECT_FLOAT_EQ(no_text.at(0, 4 + j), 5.f);
  }
  auto no_audio = fuse(Hw, Ha, {}, {}, true, false);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_FLOAT_EQ(no_audio.at(0, j), 3.f);
    EXPECT_FLOAT_EQ(no_audio.at(0, 4 + j), 0.f);
  }
}

TEST(TaskHead, RegressionHeadOutputsOneDimension) {
  ModelParams p(small_config(), 1);
  auto head = make_task_head(FinetuneTask::regress, p.config(), 0, 2);
  EXPECT_EQ(head.at("task.regress.w").shape(), (Shape{1, 32}));
  auto h = random_matrix(1, 32, 5);
  auto out = task_logits(FinetuneTask::regress, head, h);
  EXPECT_EQ(out.shape(), (Shape{1, 1}));
}

TEST(TaskHead, ClassifyHeadShapeMatchesClassCount) {
  ModelParams p(small_config(), 1);
  auto head = make_task_head(FinetuneTask::classify, p.config(), 4, 2);
  EXPECT_EQ(head.at("task.classify.w").shape(), (Shape{4, 32}));
}

TEST(TaskHead, SpeakerEmbeddingHasModelDimension) {
  ModelParams p(small_config(), 1);
  auto head = make_task_head(FinetuneTask::speaker, p.config(), 3, 2);
  auto h = random_matrix(1, 32, 6);
  auto emb = speaker_embedding(head, h);
  EXPECT_EQ(emb.shape(), (Shape{1, 16}));
}

TEST(Finetune, LearnsATriviallySeparableTask) {
  ModelParams p(small_config(), 7);
  auto train = easy_dataset(40, 100);
  auto eval = easy_dataset(20, 200);
  FinetuneConfig cfg;
  cfg.task = FinetuneTask::classify;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  auto result = finetune(FinetuneTask::classify, p, train, eval, cfg);
  EXPECT_EQ(result.n_classes, 2u);
  EXPECT_GE(result.eval["wa"].get<double>(), 0.9);
}

TEST(Finetune, TaskCheckpointRoundTrips) {
  ModelParams p(small_config(), 8);
  auto train = easy_dataset(16, 300);
  FinetuneConfig cfg;
  cfg.epochs = 2;
  auto result = finetune(FinetuneTask::classify, p, train, {}, cfg);
  const auto path =
      (fs::temp_directory_path() / "duomodal_task.dmc").string();
  save_named_tensors(path, result.all_params);
  auto [params2, head2] = load_task_checkpoint(path, small_config(),
                                               FinetuneTask::classify, 2);
  for (const auto& [name, t] : result.all_params) {
    const Tensor& other = name.rfind("task.", 0) == 0
                              ? head2.at(name)
                              : params2.all().at(name);
    EXPECT_EQ(other.vec(), t.vec()) << name;
  }
  fs::remove(path);
}

TEST(Finetune, RequiresLabeledPairedExamples) {
  ModelParams p(small_config(), 9);
  std::vector<Example> bad(1);
  bad[0].tokens = {3, 4};
  bad[0].features = AudioFeatureMatrix::zeros(4);
  bad[0].has_label = false;
  FinetuneConfig cfg;
  EXPECT_THROW(finetune(FinetuneTask::classify, p, bad, {}, cfg), Error);
}

TEST(SpeakerPipeline, ProducesAValidEerOnSyntheticSpeakers) {
  const auto dir =
      (fs::temp_directory_path() / "duomodal_ft_speaker").string();
  fs::remove_all(dir);
  SynthSpec spec;
  spec.content_vocab = 8;
  spec.frames_per_token = 3;
  spec.min_utterance_len = 3;
  spec.max_utterance_len = 5;
  spec.n_paired = 24;
  spec.n_unpaired_text = 4;
  spec.n_unpaired_audio = 4;
  spec.n_test = 16;
  spec.label_rule = "speaker";
  spec.n_speakers = 3;
  spec.seed = 5;
  generate_corpus(spec, dir);
  auto corpus = Corpus::load(dir);

  ModelConfig mc = small_config();
  mc.vocab_size = corpus.tokenizer.vocab_size();
  ModelParams p(mc, 10);
  FinetuneConfig cfg;
  cfg.task = FinetuneTask::speaker;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-3;
  auto result =
      finetune(FinetuneTask::speaker, p, corpus.paired, corpus.test, cfg);
  ASSERT_TRUE(result.eval.contains("eer"));
  const double eer = result.eval["eer"].get<double>();
  EXPECT_GE(eer, 0.0);
  EXPECT_LE(eer, 1.0);
  fs::remove_all(dir);
}
