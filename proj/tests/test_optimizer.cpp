#include "duomodal/optimizer.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "duomodal/errors.hpp"

using namespace duomodal;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d = 8;
  c.n_heads = 2;
  c.n_uni_layers = 1;
  c.n_cross_layers = 1;
  c.vocab_size = 8;
  c.max_text_len = 4;
  c.max_audio_len = 6;
  c.ffn_multiplier = 2;
  return c;
}

}  // namespace

TEST(LrSchedule, BoundaryAndMidpointValues) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 1000, 100, 2e-5), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(100, 1000, 100, 2e-5), 2e-5);
  EXPECT_DOUBLE_EQ(lr_schedule(550, 1000, 100, 2e-5), 1e-5);
  EXPECT_DOUBLE_EQ(lr_schedule(1000, 1000, 100, 2e-5), 0.0);
  EXPECT_THROW(lr_schedule(0, 100, 200, 1e-3), Error);
}

TEST(Adam, ZeroGradientLeavesParametersAndAdvancesCounter) {
  ModelParams p(tiny_config(), 1);
  AdamOptimizer opt(p);
  p.zero_grads();
  auto before = p.get("uni.text.L0.attn.wq").vec();
  opt.step_all(p, 0.1);
  EXPECT_EQ(p.get("uni.text.L0.attn.wq").vec(), before);
  EXPECT_EQ(opt.step_count("uni.text.L0.attn.wq"), 1u);
}

TEST(Adam, HandComputedSingleStep) {
  ModelParams p(tiny_config(), 2);
  AdamOptimizer opt(p);
  p.zero_grads();
  auto& bias = p.get("head.audio.b");  // zero-initialized
  for (auto& g : bias.grad()) g = 1.f;
  opt.step(p, 0.1, [](ParamGroup g) { return g == ParamGroup::audio_head; });
  for (float v : bias.vec()) EXPECT_NEAR(v, -0.1f, 1e-6);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    ModelParams p(tiny_config(), 3);
    AdamOptimizer opt(p);
    for (int s = 0; s < 5; ++s) {
      p.zero_grads();
      Rng rng(100 + s);
      for (auto& [name, t] : p.all())
        for (auto& g : t.grad())
          g = static_cast<float>(rng.uniform01() - 0.5);
      clip_gradient_norm(p, 1.0);
      opt.step_all(p, 1e-3);
    }
    std::uint64_t h = 0;
    for (const auto& [name, t] : p.all())
      h = hash_bytes(t.data(), t.numel() * 4, h);
    return h;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ScopedStepNeverTouchesOutOfScopeBytes) {
  ModelParams p(tiny_config(), 4);
  AdamOptimizer opt(p);
  // build up nonzero moments everywhere first
  p.zero_grads();
  for (auto& [name, t] : p.all())
    for (auto& g : t.grad()) g = 0.5f;
  opt.step_all(p, 1e-3);
  // now a scoped step with fresh gradients: cross parameters must not move
  // even though their moments are nonzero
  const auto cross_hash = p.hash_groups([](ParamGroup g) {
    return g == ParamGroup::cross_text || g == ParamGroup::cross_audio;
  });
  p.zero_grads();
  for (auto& [name, t] : p.all())
    for (auto& g : t.grad()) g = -0.25f;
  opt.step(p, 1e-3, group_in_idae_scope);
  EXPECT_EQ(p.hash_groups([](ParamGroup g) {
    return g == ParamGroup::cross_text || g == ParamGroup::cross_audio;
  }),
            cross_hash);
  // in-scope parameters did move
  EXPECT_NE(p.hash_groups([](ParamGroup g) { return g == ParamGroup::uni_text; }),
            0u);
}

TEST(Adam, NonFiniteGradientNamesTheParameter) {
  ModelParams p(tiny_config(), 5);
  AdamOptimizer opt(p);
  p.zero_grads();
  p.get("embed.audio_proj.w").grad()[3] =
      std::numeric_limits<float>::quiet_NaN();
  try {
    opt.step_all(p, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
    EXPECT_NE(std::string(e.what()).find("embed.audio_proj.w"),
              std::string::npos);
  }
}

TEST(Adam, StateRoundTripsThroughDisk) {
  ModelParams p(tiny_config(), 6);
  AdamOptimizer opt(p);
  p.zero_grads();
  for (auto& [name, t] : p.all())
    for (auto& g : t.grad()) g = 0.125f;
  opt.step_all(p, 1e-3);
  const auto path =
      (std::filesystem::temp_directory_path() / "duomodal_opt.dmo").string();
  opt.save(path, 7, 1234);

  auto loaded = LoadedOptimizerState::load(path, p);
  EXPECT_EQ(loaded.epoch, 7u);
  EXPECT_EQ(loaded.global_step, 1234u);

  // both optimizers must produce identical updates from here on
  ModelParams q = p.clone();
  p.zero_grads();
  q.zero_grads();
  for (auto& [name, t] : p.all())
    for (auto& g : t.grad()) g = -0.5f;
  for (auto& [name, t] : q.all())
    for (auto& g : t.grad()) g = -0.5f;
  opt.step_all(p, 2e-3);
  loaded.optimizer.step_all(q, 2e-3);
  for (const auto& [name, t] : p.all())
    EXPECT_EQ(t.vec(), q.all().at(name).vec()) << name;
  std::filesystem::remove(path);
}

TEST(ClipGradientNorm, ScalesDownOnlyWhenAboveThreshold) {
  ModelParams p(tiny_config(), 8);
  p.zero_grads();
  auto& t = p.get("head.audio.b");
  for (auto& g : t.grad()) g = 3.f;
  const double norm = clip_gradient_norm(p, 1.0);
  EXPECT_GT(norm, 1.0);
  double sq = 0;
  for (float g : t.grad()) sq += static_cast<double>(g) * g;
  EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-5);
  // below threshold: untouched
  p.zero_grads();
  t.grad()[0] = 0.5f;
  clip_gradient_norm(p, 1.0);
  EXPECT_FLOAT_EQ(t.grad()[0], 0.5f);
}
