#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "duomodal/corpus.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/metrics.hpp"
#include "duomodal/model.hpp"
#include "duomodal/optimizer.hpp"
#include "duomodal/rng.hpp"

#include "json.hpp"

namespace duomodal {

enum class FinetuneTask { classify, regress, speaker };

inline std::string task_name(FinetuneTask t) {
  switch (t) {
    case FinetuneTask::classify:
      return "classify";
    case FinetuneTask::regress:
      return "regress";
    case FinetuneTask::speaker:
      return "speaker";
  }
  throw_contract("unknown task");
}

inline FinetuneTask task_from_name(const std::string& s) {
  for (auto t : {FinetuneTask::classify, FinetuneTask::regress,
                 FinetuneTask::speaker})
    if (task_name(t) == s) return t;
  throw_data("unknown task \"" + s + "\" (expected classify|regress|speaker)");
}

struct FinetuneConfig {
  FinetuneTask task = FinetuneTask::classify;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double learning_rate = 3e-4;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  bool use_text_outputs = true;   // Table-4-style ablations: zero one pooled
  bool use_audio_outputs = true;  // half of h_fuse
  std::size_t eer_max_trials = 2000;

  nlohmann::json to_json() const {
    return {{"task", task_name(task)},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"grad_clip_norm", grad_clip_norm},
            {"seed", seed},
            {"use_text_outputs", use_text_outputs},
            {"use_audio_outputs", use_audio_outputs},
            {"eer_max_trials", eer_max_trials}};
  }

  static FinetuneConfig from_json(const nlohmann::json& j) {
    require_known_keys(j,
                       {"task", "epochs", "batch_size", "learning_rate",
                        "grad_clip_norm", "seed", "use_text_outputs",
                        "use_audio_outputs", "eer_max_trials"},
                       "finetune config");
    FinetuneConfig c;
    if (j.contains("task")) c.task = task_from_name(j["task"]);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.seed = j.value("seed", c.seed);
    c.use_text_outputs = j.value("use_text_outputs", c.use_text_outputs);
    c.use_audio_outputs = j.value("use_audio_outputs", c.use_audio_outputs);
    c.eer_max_trials = j.value("eer_max_trials", c.eer_max_trials);
    return c;
  }
};

// h_fuse = [mean-pool(H_w); mean-pool(H_a)], text half first. Pooling skips
// padded positions; an ablated half is zeroed but keeps its width so head
// shapes stay 2d.
inline Tensor fuse(const Tensor& H_w, const Tensor& H_a,
                   const PadMask& text_pad = {}, const PadMask& audio_pad = {},
                   bool use_text = true, bool use_audio = true) {
  auto include = [](std::size_t n, const PadMask& pad) {
    std::vector<std::uint8_t> inc(n, 1);
    if (!pad.empty())
      for (std::size_t i = 0; i < n; ++i) inc[i] = pad[i] ? 0 : 1;
    return inc;
  };
  auto pool_w = mean_rows_masked(H_w, include(H_w.rows(), text_pad));
  auto pool_a = mean_rows_masked(H_a, include(H_a.rows(), audio_pad));
  if (!use_text) pool_w = scale(pool_w, 0.f);
  if (!use_audio) pool_a = scale(pool_a, 0.f);
  return concat_cols<float>({pool_w, pool_a});
}

// Both cross-modal representations for one paired example.
struct DualEncoding {
  Tensor H_w;  // audio-referred text representations
  Tensor H_a;  // text-referred audio representations
};

inline DualEncoding encode_pair(ModelParams& p, const TokenSequence& w,
                                const AudioFeatureMatrix& a) {
  auto text_emb = embed_text(p, w);
  auto audio_emb = embed_audio(p, features_tensor(a));
  auto uni_w = unimodal_encode(p, Modality::text, text_emb);
  auto uni_a = unimodal_encode(p, Modality::audio, audio_emb);
  DualEncoding enc;
  enc.H_w = cross_modal_encode(p, Modality::text, text_emb, uni_a);
  enc.H_a = cross_modal_encode(p, Modality::audio, audio_emb, uni_w);
  return enc;
}

// Task head parameters, named under "task." so they serialize into the same
// DMC1 container as the backbone.
inline std::map<std::string, Tensor> make_task_head(
    FinetuneTask task, const ModelConfig& model, std::size_t n_classes,
    std::uint64_t seed) {
  const std::size_t d2 = 2 * model.d;
  std::map<std::string, Tensor> head;
  auto add = [&](const std::string& name, Shape shape, bool zero) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    if (!zero) {
      Rng rng = derive_rng(seed, "task_init", {fnv1a(name)});
      for (auto& x : t.vec()) x = static_cast<float>(0.02 * rng.normal());
    }
    t.set_name(name);
    head.emplace(name, std::move(t));
  };
  switch (task) {
    case FinetuneTask::classify:
      check_contract(n_classes >= 2, "classification needs >= 2 classes");
      add("task.classify.w", {n_classes, d2}, false);
      add("task.classify.b", {n_classes}, true);
      break;
    case FinetuneTask::regress:
      add("task.regress.w", {1, d2}, false);
      add("task.regress.b", {1}, true);
      break;
    case FinetuneTask::speaker:
      check_contract(n_classes >= 2, "speaker task needs >= 2 speakers");
      add("task.speaker.dense1.w", {d2, model.d}, false);
      add("task.speaker.dense1.b", {model.d}, true);
      add("task.speaker.dense2.w", {model.d, model.d}, false);
      add("task.speaker.dense2.b", {model.d}, true);
      add("task.speaker.cls.w", {n_classes, model.d}, false);
      add("task.speaker.cls.b", {n_classes}, true);
      break;
  }
  return head;
}

// Two dense layers over h_fuse; the second layer's output is the speaker
// embedding used for verification scoring.
inline Tensor speaker_embedding(std::map<std::string, Tensor>& head,
                                const Tensor& h_fuse) {
  auto h1 = gelu(add_row_vector(matmul(h_fuse, head.at("task.speaker.dense1.w")),
                                head.at("task.speaker.dense1.b")));
  return add_row_vector(matmul(h1, head.at("task.speaker.dense2.w")),
                        head.at("task.speaker.dense2.b"));
}

inline Tensor task_logits(FinetuneTask task,
                          std::map<std::string, Tensor>& head,
                          const Tensor& h_fuse) {
  switch (task) {
    case FinetuneTask::classify:
      return add_row_vector(matmul_nt(h_fuse, head.at("task.classify.w")),
                            head.at("task.classify.b"));
    case FinetuneTask::regress:
      return add_row_vector(matmul_nt(h_fuse, head.at("task.regress.w")),
                            head.at("task.regress.b"));
    case FinetuneTask::speaker:
      return add_row_vector(
          matmul_nt(speaker_embedding(head, h_fuse), head.at("task.speaker.cls.w")),
          head.at("task.speaker.cls.b"));
  }
  throw_contract("unknown task");
}

struct FinetuneResult {
  std::map<std::string, Tensor> all_params;  // backbone + task head
  std::size_t n_classes = 0;
  nlohmann::json eval;  // metrics on the eval split after the last epoch
};

inline std::size_t infer_n_classes(FinetuneTask task,
                                   const std::vector<Example>& train) {
  if (task == FinetuneTask::regress) return 0;
  std::size_t n = 0;
  for (const auto& ex : train) {
    check_data(ex.has_label, "fine-tuning requires labeled paired examples");
    n = std::max(n, static_cast<std::size_t>(ex.label) + 1);
  }
  return std::max<std::size_t>(n, 2);
}

inline nlohmann::json evaluate_task(FinetuneTask task, ModelParams& params,
                                    std::map<std::string, Tensor>& head,
                                    const std::vector<Example>& eval_set,
                                    const FinetuneConfig& cfg) {
  NoGradGuard ng;
  nlohmann::json out;
  if (task == FinetuneTask::classify || task == FinetuneTask::speaker) {
    std::vector<int> preds, labels;
    for (const auto& ex : eval_set) {
      auto enc = encode_pair(params, ex.tokens, ex.features);
      auto h = fuse(enc.H_w, enc.H_a, {}, {}, cfg.use_text_outputs,
                    cfg.use_audio_outputs);
      auto logits = task_logits(task, head, h);
      int best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j)
        if (logits.at(0, j) > logits.at(0, best)) best = static_cast<int>(j);
      preds.push_back(best);
      labels.push_back(static_cast<int>(ex.label));
    }
    auto m = metrics_classification(preds, labels);
    out["wa"] = m.wa;
    out["ua"] = m.ua;
  }
  if (task == FinetuneTask::regress) {
    std::vector<double> preds, labels;
    for (const auto& ex : eval_set) {
      auto enc = encode_pair(params, ex.tokens, ex.features);
      auto h = fuse(enc.H_w, enc.H_a, {}, {}, cfg.use_text_outputs,
                    cfg.use_audio_outputs);
      preds.push_back(task_logits(task, head, h).item());
      labels.push_back(ex.label);
    }
    auto m = metrics_regression(preds, labels);
    out["mae"] = m.mae;
    if (m.corr)
      out["corr"] = *m.corr;
    else
      out["corr"] = nullptr;
  }
  if (task == FinetuneTask::speaker) {
    // all cross pairs in the eval split, capped and seeded
    std::vector<std::vector<float>> embeds;
    std::vector<int> spk;
    for (const auto& ex : eval_set) {
      auto enc = encode_pair(params, ex.tokens, ex.features);
      auto h = fuse(enc.H_w, enc.H_a, {}, {}, cfg.use_text_outputs,
                    cfg.use_audio_outputs);
      embeds.push_back(speaker_embedding(head, h).vec());
      spk.push_back(static_cast<int>(ex.label));
    }
    std::vector<std::pair<std::size_t, std::size_t>> trials;
    for (std::size_t i = 0; i < embeds.size(); ++i)
      for (std::size_t j = i + 1; j < embeds.size(); ++j)
        trials.emplace_back(i, j);
    if (trials.size() > cfg.eer_max_trials) {
      Rng rng = derive_rng(cfg.seed, "eer_trials");
      rng.shuffle(trials.begin(), trials.end());
      trials.resize(cfg.eer_max_trials);
    }
    std::vector<double> scores;
    std::vector<std::uint8_t> same;
    for (const auto& [i, j] : trials) {
      scores.push_back(cosine_similarity(embeds[i], embeds[j]));
      same.push_back(spk[i] == spk[j] ? 1 : 0);
    }
    out["eer"] = metrics_eer(scores, same);
  }
  return out;
}

// End-to-end fine-tuning: all pretrained parameters plus the new head are
// updated jointly; classification and speaker identification train with
// cross-entropy, regression with L1.
inline FinetuneResult finetune(FinetuneTask task, ModelParams& params,
                               const std::vector<Example>& train,
                               const std::vector<Example>& eval_set,
                               const FinetuneConfig& cfg) {
  check_data(!train.empty(), "fine-tuning requires a labeled train split");
  for (const auto& ex : train)
    check_data(!ex.tokens.empty() && ex.features.frames > 0 && ex.has_label,
               "fine-tuning dataset must be paired text+audio+label");
  const std::size_t n_classes = infer_n_classes(task, train);
  auto head = make_task_head(task, params.config(), n_classes, cfg.seed);

  std::map<std::string, Tensor> trainable = params.all();
  for (const auto& [name, t] : head) trainable.emplace(name, t);
  AdamOptimizer opt(trainable);

  const std::uint64_t total_steps =
      cfg.epochs * ((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> idx(train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = derive_rng(cfg.seed, "shuffle.finetune", {epoch});
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t b = 0; b < idx.size(); b += cfg.batch_size) {
      const std::size_t hi = std::min(idx.size(), b + cfg.batch_size);
      std::vector<Tensor> losses;
      for (std::size_t i = b; i < hi; ++i) {
        const Example& ex = train[idx[i]];
        auto enc = encode_pair(params, ex.tokens, ex.features);
        auto h = fuse(enc.H_w, enc.H_a, {}, {}, cfg.use_text_outputs,
                      cfg.use_audio_outputs);
        auto logits = task_logits(task, head, h);
        if (task == FinetuneTask::regress) {
          auto target = Tensor::from_vector(
              {1, 1}, {static_cast<float>(ex.label)});
          losses.push_back(l1_loss(logits, target));
        } else {
          losses.push_back(cross_entropy(
              logits, {static_cast<std::int64_t>(ex.label)}));
        }
      }
      for (auto& [name, t] : trainable) t.zero_grad();
      for (auto& loss : losses)
        loss.backward(static_cast<float>(1.0 / losses.size()));
      clip_gradient_norm(trainable, cfg.grad_clip_norm);
      // constant learning rate would work at this scale; reuse the linear
      // schedule for symmetry with pre-training
      const double lr = lr_schedule(step, total_steps,
                                    static_cast<std::uint64_t>(0.1 * total_steps),
                                    cfg.learning_rate);
      opt.step_all(trainable, lr);
      ++step;
    }
  }

  FinetuneResult result;
  result.n_classes = n_classes;
  result.all_params = trainable;
  if (!eval_set.empty())
    result.eval = evaluate_task(task, params, head, eval_set, cfg);
  return result;
}

// Rebuilds the expected parameter map for a task checkpoint and fills it.
inline std::pair<ModelParams, std::map<std::string, Tensor>>
load_task_checkpoint(const std::string& path, const ModelConfig& model_cfg,
                     FinetuneTask task, std::size_t n_classes) {
  ModelParams params(model_cfg, 0);
  auto head = make_task_head(task, model_cfg, n_classes, 0);
  std::map<std::string, Tensor> all = params.all();
  for (const auto& [name, t] : head) all.emplace(name, t);
  load_named_tensors(path, all);
  return {std::move(params), std::move(head)};
}

}  // namespace duomodal
