#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "duomodal/corpus.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/fidelity.hpp"
#include "duomodal/idp.hpp"
#include "duomodal/model.hpp"
#include "duomodal/objectives.hpp"
#include "duomodal/optimizer.hpp"
#include "duomodal/rng.hpp"
#include "duomodal/synth.hpp"

#include "json.hpp"

namespace duomodal {

// Ablation rows as trainer modes: full method, w/o IDAE, w/o IDP
// (back-translation-style regeneration), w/o paired data, and fully paired
// pre-training.
enum class TrainMode { full, no_idae, no_idp, no_paired, paired_only };

inline std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::full:
      return "full";
    case TrainMode::no_idae:
      return "no_idae";
    case TrainMode::no_idp:
      return "no_idp";
    case TrainMode::no_paired:
      return "no_paired";
    case TrainMode::paired_only:
      return "paired_only";
  }
  throw_contract("unknown train mode");
}

inline TrainMode train_mode_from_name(const std::string& s) {
  for (TrainMode m : {TrainMode::full, TrainMode::no_idae, TrainMode::no_idp,
                      TrainMode::no_paired, TrainMode::paired_only})
    if (train_mode_name(m) == s) return m;
  throw_data("unknown train mode \"" + s + "\"");
}

struct TrainConfig {
  std::string corpus_dir;
  std::string out_dir;
  ModelConfig model;

  std::size_t epochs = 30;        // K: iterative denoising epochs
  std::size_t warmup_epochs = 5;  // T: warm-up epochs on the paired corpus
  std::size_t batch_size = 16;
  double learning_rate = 3e-4;  // paper-scale preset is 2e-5
  double lr_warmup_fraction = 0.1;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::full;
  std::size_t checkpoint_every = 0;   // epochs between checkpoints; 0 = end only
  std::size_t stop_after_epoch = 0;   // 0 = run to K; used to interrupt runs
  bool loss_on_selected_only = true;
  double chat_replace_prob = 0.30;
  std::size_t refresh_workers = 1;

  void validate() const {
    check_contract(epochs >= 1, "train config: epochs must be >= 1");
    check_contract(warmup_epochs >= 1,
                   "train config: warmup_epochs must be >= 1");
    check_contract(batch_size >= 1, "train config: batch_size must be >= 1");
    check_contract(learning_rate > 0, "train config: learning_rate <= 0");
    check_contract(lr_warmup_fraction >= 0 && lr_warmup_fraction < 1,
                   "train config: lr_warmup_fraction outside [0, 1)");
    check_contract(!corpus_dir.empty(), "train config: corpus_dir missing");
    check_contract(!out_dir.empty(), "train config: out_dir missing");
    model.validate();
  }

  nlohmann::json to_json() const {
    return {{"corpus_dir", corpus_dir},
            {"out_dir", out_dir},
            {"model", model.to_json()},
            {"epochs", epochs},
            {"warmup_epochs", warmup_epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"lr_warmup_fraction", lr_warmup_fraction},
            {"grad_clip_norm", grad_clip_norm},
            {"seed", seed},
            {"mode", train_mode_name(mode)},
            {"checkpoint_every", checkpoint_every},
            {"stop_after_epoch", stop_after_epoch},
            {"loss_on_selected_only", loss_on_selected_only},
            {"chat_replace_prob", chat_replace_prob},
            {"refresh_workers", refresh_workers}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    require_known_keys(
        j,
        {"corpus_dir", "out_dir", "model", "epochs", "warmup_epochs",
         "batch_size", "learning_rate", "lr_warmup_fraction", "grad_clip_norm",
         "seed", "mode", "checkpoint_every", "stop_after_epoch",
         "loss_on_selected_only", "chat_replace_prob", "refresh_workers"},
        "train config");
    TrainConfig c;
    c.corpus_dir = j.value("corpus_dir", c.corpus_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lr_warmup_fraction = j.value("lr_warmup_fraction", c.lr_warmup_fraction);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode"))
      c.mode = train_mode_from_name(j["mode"].get<std::string>());
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.stop_after_epoch = j.value("stop_after_epoch", c.stop_after_epoch);
    c.loss_on_selected_only =
        j.value("loss_on_selected_only", c.loss_on_selected_only);
    c.chat_replace_prob = j.value("chat_replace_prob", c.chat_replace_prob);
    c.refresh_workers = j.value("refresh_workers", c.refresh_workers);
    return c;
  }
};

// Algorithm-1 driver. One run is fully determined by (seed, config, corpus):
// every random decision draws from a stream derived from those, so resumed
// runs continue bit-identically.
class Trainer {
 public:
  static constexpr const char* kCheckpointFile = "checkpoint.dmc";
  static constexpr const char* kOptimizerFile = "optimizer.dmo";
  static constexpr const char* kStoreFile = "store.dms";
  static constexpr const char* kInitStoreFile = "store_init.dms";
  static constexpr const char* kMetricsFile = "metrics.jsonl";
  static constexpr const char* kConfigFile = "effective_config.json";

  explicit Trainer(TrainConfig cfg, bool resume = false)
      : cfg_(std::move(cfg)), corpus_(Corpus::load(cfg_.corpus_dir)) {
    cfg_.model.vocab_size = corpus_.tokenizer.vocab_size();
    cfg_.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);

    if (cfg_.mode != TrainMode::no_paired && corpus_.paired.empty())
      throw_data("mode " + train_mode_name(cfg_.mode) +
                 " requires a non-empty paired corpus");

    compute_step_budget();

    if (resume) {
      params_.emplace(
          ModelParams::load(path(kCheckpointFile), cfg_.model));
      auto loaded = LoadedOptimizerState::load(path(kOptimizerFile), *params_);
      optimizer_.emplace(std::move(loaded.optimizer));
      epoch_done_ = loaded.epoch;
      global_step_ = loaded.global_step;
      if (uses_store()) {
        store_ = PseudoParallelStore::load(path(kStoreFile));
        if (store_->iteration() != epoch_done_)
          throw_data("resume: store iteration " +
                     std::to_string(store_->iteration()) +
                     " does not match checkpoint epoch " +
                     std::to_string(epoch_done_));
      }
      warm_done_ = true;  // checkpoints exist only after warm-up and init
      metrics_.open(path(kMetricsFile), std::ios::app);
      check_data(static_cast<bool>(metrics_),
                 "cannot append to " + path(kMetricsFile));
    } else {
      params_.emplace(cfg_.model, cfg_.seed);
      optimizer_.emplace(*params_);
      metrics_.open(path(kMetricsFile), std::ios::trunc);
      check_data(static_cast<bool>(metrics_),
                 "cannot write " + path(kMetricsFile));
    }
    corpus_detail::write_json_file(path(kConfigFile), cfg_.to_json());
  }

  const TrainConfig& config() const { return cfg_; }
  const Corpus& corpus() const { return corpus_; }
  ModelParams& params() { return *params_; }
  PseudoParallelStore* store() { return store_ ? &*store_ : nullptr; }
  std::uint64_t global_step() const { return global_step_; }
  std::uint64_t total_steps() const { return total_steps_; }

  // test hook: phase name in {"warm", "init", "idae", "cdae", "refresh",
  // "checkpoint"} with the 1-based epoch (0 during warm-up/init)
  std::function<void(const std::string&, std::size_t)> on_event;

  void run() {
    const std::size_t stop =
        cfg_.stop_after_epoch ? std::min(cfg_.stop_after_epoch, cfg_.epochs)
                              : cfg_.epochs;
    if (epoch_done_ == 0 && !warm_done_) {
      if (cfg_.mode != TrainMode::no_paired) run_warmup();
      if (uses_store()) {
        store_ = init_translations(*params_, corpus_,
                                   cfg_.mode != TrainMode::no_paired,
                                   cfg_.refresh_workers);
        store_->save(path(kInitStoreFile));
        event("init", 0);
      }
      warm_done_ = true;
      write_checkpoint(0);
    }
    for (std::size_t k = epoch_done_ + 1; k <= stop; ++k) {
      if (cfg_.mode != TrainMode::no_idae) run_idae_epoch(k);
      run_cdae_epoch(k);
      if (uses_store()) {
        if (cfg_.mode == TrainMode::no_idp)
          regenerate_translations(*store_, *params_, corpus_,
                                  cfg_.refresh_workers);
        else
          refresh_translations(*store_, *params_, corpus_,
                               cfg_.refresh_workers);
        event("refresh", k);
      }
      epoch_done_ = k;
      write_epoch_summary(k);
      const bool cadence =
          cfg_.checkpoint_every && (k % cfg_.checkpoint_every == 0);
      if (cadence || k == stop) write_checkpoint(k);
    }
    metrics_.flush();
  }

 private:
  bool uses_store() const { return cfg_.mode != TrainMode::paired_only; }

  std::string path(const char* name) const {
    return (std::filesystem::path(cfg_.out_dir) / name).string();
  }

  void event(const std::string& phase, std::size_t epoch) {
    if (on_event) on_event(phase, epoch);
  }

  struct Sets {
    std::vector<const Example*> idae_text, idae_audio;
    std::vector<const Example*> cdae_up_text, cdae_up_audio, cdae_paired;
  };

  Sets example_sets() const {
    Sets s;
    const bool paired = cfg_.mode != TrainMode::no_paired;
    const bool unpaired = cfg_.mode != TrainMode::paired_only;
    if (unpaired) {
      for (const auto& ex : corpus_.unpaired_text) s.idae_text.push_back(&ex);
      for (const auto& ex : corpus_.unpaired_audio)
        s.idae_audio.push_back(&ex);
      for (const auto& ex : corpus_.unpaired_text)
        s.cdae_up_text.push_back(&ex);
      for (const auto& ex : corpus_.unpaired_audio)
        s.cdae_up_audio.push_back(&ex);
    }
    if (paired)
      for (const auto& ex : corpus_.paired) {
        s.idae_text.push_back(&ex);
        s.idae_audio.push_back(&ex);
        s.cdae_paired.push_back(&ex);
      }
    return s;
  }

  static std::size_t n_batches(std::size_t n, std::size_t b) {
    return (n + b - 1) / b;
  }

  void compute_step_budget() {
    const auto s = example_sets();
    warm_steps_ = cfg_.mode == TrainMode::no_paired
                      ? 0
                      : cfg_.warmup_epochs *
                            n_batches(corpus_.paired.size(), cfg_.batch_size);
    idae_steps_per_epoch_ =
        cfg_.mode == TrainMode::no_idae
            ? 0
            : std::max(n_batches(s.idae_text.size(), cfg_.batch_size),
                       n_batches(s.idae_audio.size(), cfg_.batch_size));
    cdae_steps_per_epoch_ =
        n_batches(s.cdae_up_text.size(), cfg_.batch_size) +
        n_batches(s.cdae_up_audio.size(), cfg_.batch_size) +
        n_batches(s.cdae_paired.size(), cfg_.batch_size);
    total_steps_ = warm_steps_ +
                   cfg_.epochs * (idae_steps_per_epoch_ + cdae_steps_per_epoch_);
    lr_warmup_steps_ = static_cast<std::uint64_t>(
        cfg_.lr_warmup_fraction * static_cast<double>(total_steps_));
  }

  double current_lr() const {
    return lr_schedule(global_step_, total_steps_, lr_warmup_steps_,
                       cfg_.learning_rate);
  }

  std::vector<std::size_t> shuffled_indices(std::size_t n,
                                            const std::string& purpose,
                                            std::size_t epoch) const {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = derive_rng(cfg_.seed, purpose, {epoch});
    rng.shuffle(idx.begin(), idx.end());
    return idx;
  }

  Rng example_rng(const std::string& purpose, std::size_t epoch,
                  std::uint64_t example_id) const {
    return derive_rng(cfg_.seed, purpose, {epoch, example_id});
  }

  void log_step(const std::string& phase, std::size_t epoch,
                const LossBundle& mean, double lr) {
    nlohmann::json rec{{"step", global_step_},
                       {"epoch", epoch},
                       {"phase", phase},
                       {"lr", lr}};
    auto put = [&](const char* key, double v, bool active) {
      if (active) rec[key] = v;
    };
    put("loss.warm.text", mean.warm_text, phase == "warm");
    put("loss.warm.audio", mean.warm_audio, phase == "warm");
    put("loss.idae.text", mean.idae_text, phase == "idae");
    put("loss.idae.audio", mean.idae_audio, phase == "idae");
    put("loss.cdae.unpaired.text", mean.cdae_unpaired_text,
        phase == "cdae.unpaired.text");
    put("loss.cdae.unpaired.audio", mean.cdae_unpaired_audio,
        phase == "cdae.unpaired.audio");
    put("loss.cdae.paired.text", mean.cdae_paired_text,
        phase == "cdae.paired");
    put("loss.cdae.paired.audio", mean.cdae_paired_audio,
        phase == "cdae.paired");
    if (phase.rfind("cdae", 0) == 0) rec["phase"] = "cdae";
    rec["loss.step_total"] = mean.total();
    metrics_ << rec.dump() << "\n";
    epoch_accum_ += mean;
    ++epoch_accum_steps_;
  }

  void write_epoch_summary(std::size_t epoch) {
    LossBundle mean = epoch_accum_;
    if (epoch_accum_steps_) mean *= 1.0 / epoch_accum_steps_;
    nlohmann::json rec{{"epoch", epoch},
                       {"phase", "epoch"},
                       {"step", global_step_},
                       {"loss.epoch_mean_total", mean.total()},
                       {"loss.idae.text", mean.idae_text},
                       {"loss.idae.audio", mean.idae_audio},
                       {"loss.cdae.unpaired.text", mean.cdae_unpaired_text},
                       {"loss.cdae.unpaired.audio", mean.cdae_unpaired_audio},
                       {"loss.cdae.paired.text", mean.cdae_paired_text},
                       {"loss.cdae.paired.audio", mean.cdae_paired_audio},
                       {"wall_ms", wall_ms_since_start()}};
    metrics_ << rec.dump() << "\n";
    metrics_.flush();
    epoch_accum_ = LossBundle{};
    epoch_accum_steps_ = 0;
  }

  std::int64_t wall_ms_since_start() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_time_)
        .count();
  }

  // one optimizer step over a set of per-example scalar losses
  template <typename Scope>
  void apply_step(std::vector<std::pair<Tensor, double*>>& losses,
                  const Scope& scope, const std::string& phase,
                  std::size_t epoch, LossBundle& bundle) {
    const double lr = current_lr();
    if (!losses.empty()) {
      params_->zero_grads();
      // independent branch means: count text/audio style sinks separately
      std::map<double*, std::size_t> counts;
      for (auto& [loss, sink] : losses) counts[sink]++;
      for (auto& [loss, sink] : losses) {
        *sink += loss.item() / counts[sink];
        loss.backward(static_cast<float>(1.0 / counts[sink]));
      }
      clip_gradient_norm(*params_, cfg_.grad_clip_norm);
      optimizer_->step(*params_, lr, scope);
    }
    log_step(phase, epoch, bundle, lr);
    ++global_step_;
    bundle = LossBundle{};
    losses.clear();
  }

  void run_warmup() {
    const auto& paired = corpus_.paired;
    for (std::size_t t = 1; t <= cfg_.warmup_epochs; ++t) {
      auto idx = shuffled_indices(paired.size(), "shuffle.warm", t);
      for (std::size_t b = 0; b < idx.size(); b += cfg_.batch_size) {
        std::vector<std::pair<Tensor, double*>> losses;
        LossBundle bundle;
        const std::size_t hi = std::min(idx.size(), b + cfg_.batch_size);
        for (std::size_t i = b; i < hi; ++i) {
          const Example& ex = paired[idx[i]];
          losses.emplace_back(
              warm_text_example_loss(*params_, ex.tokens, ex.features),
              &bundle.warm_text);
          losses.emplace_back(
              warm_audio_example_loss(*params_, ex.tokens, ex.features),
              &bundle.warm_audio);
        }
        apply_step(losses, [](ParamGroup) { return true; }, "warm", 0, bundle);
      }
      event("warm", t);
    }
  }

  void run_idae_epoch(std::size_t k) {
    const auto sets = example_sets();
    check_contract(CorruptionPolicy::idae().select_prob > 0,
                   "IDAE corruption selects nothing (select_prob is zero)");
    const std::uint64_t cross_hash_before = params_->hash_groups(
        [](ParamGroup g) { return !group_in_idae_scope(g); });
    auto ti = shuffled_indices(sets.idae_text.size(), "shuffle.idae.text", k);
    auto ai = shuffled_indices(sets.idae_audio.size(), "shuffle.idae.audio", k);
    const std::size_t steps =
        std::max(n_batches(ti.size(), cfg_.batch_size),
                 n_batches(ai.size(), cfg_.batch_size));
    const auto policy = CorruptionPolicy::idae();
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<std::pair<Tensor, double*>> losses;
      LossBundle bundle;
      const std::size_t tb = s * cfg_.batch_size;
      for (std::size_t i = tb; i < std::min(ti.size(), tb + cfg_.batch_size);
           ++i) {
        const Example& ex = *sets.idae_text[ti[i]];
        Rng rng = example_rng("corrupt.idae.text", k, ex.id);
        if (auto loss = idae_text_example_loss(*params_, ex.tokens, policy,
                                               rng, cfg_.loss_on_selected_only))
          losses.emplace_back(*loss, &bundle.idae_text);
      }
      for (std::size_t i = tb; i < std::min(ai.size(), tb + cfg_.batch_size);
           ++i) {
        const Example& ex = *sets.idae_audio[ai[i]];
        Rng rng = example_rng("corrupt.idae.audio", k, ex.id);
        if (auto loss = idae_audio_example_loss(*params_, ex.features, policy,
                                                rng, cfg_.loss_on_selected_only))
          losses.emplace_back(*loss, &bundle.idae_audio);
      }
      apply_step(losses, group_in_idae_scope, "idae", k, bundle);
    }
    // scope invariant, enforced every epoch: the IDAE pass must leave the
    // cross encoders byte-identical
    const std::uint64_t cross_hash_after = params_->hash_groups(
        [](ParamGroup g) { return !group_in_idae_scope(g); });
    check_contract(cross_hash_before == cross_hash_after,
                   "IDAE pass modified cross-encoder parameters");
    event("idae", k);
  }

  void run_cdae_epoch(std::size_t k) {
    const auto sets = example_sets();
    const auto policy = CorruptionPolicy::cdae();
    const std::uint32_t store_k = static_cast<std::uint32_t>(k - 1);
    auto all_scope = [](ParamGroup) { return true; };

    auto ut = shuffled_indices(sets.cdae_up_text.size(),
                               "shuffle.cdae.up_text", k);
    auto ua = shuffled_indices(sets.cdae_up_audio.size(),
                               "shuffle.cdae.up_audio", k);
    auto pp = shuffled_indices(sets.cdae_paired.size(),
                               "shuffle.cdae.paired", k);

    struct BatchRef {
      int source;  // 0 = unpaired text, 1 = unpaired audio, 2 = paired
      std::size_t index;
    };
    const std::size_t nut = n_batches(ut.size(), cfg_.batch_size);
    const std::size_t nua = n_batches(ua.size(), cfg_.batch_size);
    const std::size_t npp = n_batches(pp.size(), cfg_.batch_size);
    // proportional interleave by fractional progress, ties broken by source
    std::vector<BatchRef> schedule;
    {
      std::array<std::size_t, 3> total{nut, nua, npp};
      std::array<std::size_t, 3> used{0, 0, 0};
      for (std::size_t n = nut + nua + npp; n > 0; --n) {
        int best = -1;
        double best_pos = 0;
        for (int sIdx = 0; sIdx < 3; ++sIdx) {
          if (used[sIdx] >= total[sIdx]) continue;
          const double pos = (used[sIdx] + 0.5) / total[sIdx];
          if (best < 0 || pos < best_pos) {
            best = sIdx;
            best_pos = pos;
          }
        }
        schedule.push_back({best, used[best]});
        ++used[best];
      }
    }

    for (const BatchRef& batch : schedule) {
      std::vector<std::pair<Tensor, double*>> losses;
      LossBundle bundle;
      const std::size_t lo = batch.index * cfg_.batch_size;
      std::string phase;
      if (batch.source == 0) {
        phase = "cdae.unpaired.text";
        for (std::size_t i = lo; i < std::min(ut.size(), lo + cfg_.batch_size);
             ++i) {
          const Example& ex = *sets.cdae_up_text[ut[i]];
          const StoreEntry& a_tilde =
              store_->get(StoreKind::audio_for_unpaired_text, ex.id, store_k);
          Rng rng = example_rng("corrupt.cdae.up_text", k, ex.id);
          if (auto loss = cdae_unpaired_text_example_loss(
                  *params_, ex.tokens, a_tilde, policy, rng,
                  cfg_.loss_on_selected_only))
            losses.emplace_back(*loss, &bundle.cdae_unpaired_text);
        }
      } else if (batch.source == 1) {
        phase = "cdae.unpaired.audio";
        for (std::size_t i = lo; i < std::min(ua.size(), lo + cfg_.batch_size);
             ++i) {
          const Example& ex = *sets.cdae_up_audio[ua[i]];
          const StoreEntry& w_tilde =
              store_->get(StoreKind::text_for_unpaired_audio, ex.id, store_k);
          Rng rng = example_rng("corrupt.cdae.up_audio", k, ex.id);
          if (auto loss = cdae_unpaired_audio_example_loss(
                  *params_, ex.features, w_tilde, policy, rng,
                  cfg_.loss_on_selected_only))
            losses.emplace_back(*loss, &bundle.cdae_unpaired_audio);
        }
      } else {
        phase = "cdae.paired";
        for (std::size_t i = lo; i < std::min(pp.size(), lo + cfg_.batch_size);
             ++i) {
          const Example& ex = *sets.cdae_paired[pp[i]];
          Rng text_noise = example_rng("chat.paired.text", k, ex.id);
          Rng text_corrupt = example_rng("corrupt.cdae.paired.text", k, ex.id);
          Rng audio_noise = example_rng("chat.paired.audio", k, ex.id);
          Rng audio_corrupt =
              example_rng("corrupt.cdae.paired.audio", k, ex.id);
          if (cfg_.mode == TrainMode::paired_only) {
            if (auto loss = cdae_paired_clean_text_example_loss(
                    *params_, ex.tokens, ex.features, policy, text_corrupt,
                    cfg_.loss_on_selected_only))
              losses.emplace_back(*loss, &bundle.cdae_paired_text);
            if (auto loss = cdae_paired_clean_audio_example_loss(
                    *params_, ex.tokens, ex.features, policy, audio_corrupt,
                    cfg_.loss_on_selected_only))
              losses.emplace_back(*loss, &bundle.cdae_paired_audio);
          } else {
            const StoreEntry& a_tilde =
                store_->get(StoreKind::audio_for_paired, ex.id, store_k);
            const StoreEntry& w_tilde =
                store_->get(StoreKind::text_for_paired, ex.id, store_k);
            if (auto loss = cdae_paired_text_example_loss(
                    *params_, ex.tokens, ex.features, a_tilde,
                    cfg_.chat_replace_prob, policy, text_noise, text_corrupt,
                    cfg_.loss_on_selected_only))
              losses.emplace_back(*loss, &bundle.cdae_paired_text);
            if (auto loss = cdae_paired_audio_example_loss(
                    *params_, ex.tokens, ex.features, w_tilde,
                    cfg_.chat_replace_prob, policy, audio_noise, audio_corrupt,
                    cfg_.loss_on_selected_only))
              losses.emplace_back(*loss, &bundle.cdae_paired_audio);
          }
        }
      }
      apply_step(losses, all_scope, phase, k, bundle);
    }
    event("cdae", k);
  }

  void write_checkpoint(std::size_t epoch) {
    params_->save(path(kCheckpointFile));
    optimizer_->save(path(kOptimizerFile), static_cast<std::uint32_t>(epoch),
                     global_step_);
    if (store_) store_->save(path(kStoreFile));
    event("checkpoint", epoch);
  }

  TrainConfig cfg_;
  Corpus corpus_;
  std::optional<ModelParams> params_;
  std::optional<AdamOptimizer> optimizer_;
  std::optional<PseudoParallelStore> store_;
  std::ofstream metrics_;
  std::uint64_t global_step_ = 0;
  std::uint64_t total_steps_ = 0;
  std::uint64_t lr_warmup_steps_ = 0;
  std::uint64_t warm_steps_ = 0;
  std::size_t idae_steps_per_epoch_ = 0;
  std::size_t cdae_steps_per_epoch_ = 0;
  std::size_t epoch_done_ = 0;
  bool warm_done_ = false;
  LossBundle epoch_accum_{};
  std::size_t epoch_accum_steps_ = 0;
  std::chrono::steady_clock::time_point start_time_ =
      std::chrono::steady_clock::now();
};

}  // namespace duomodal
