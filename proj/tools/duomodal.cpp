// duomodal: corpus generation, featurization, pre-training, fine-tuning,
// evaluation, translation inspection, and corruption dumps in one binary.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
// abort. stdout carries machine-readable output only; diagnostics go to
// stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "duomodal/corpus.hpp"
#include "duomodal/corruption.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/fidelity.hpp"
#include "duomodal/finetune.hpp"
#include "duomodal/idp.hpp"
#include "duomodal/jsonutil.hpp"
#include "duomodal/metrics.hpp"
#include "duomodal/model.hpp"
#include "duomodal/synth.hpp"
#include "duomodal/trainer.hpp"

namespace fs = std::filesystem;
using namespace duomodal;
using nlohmann::json;

namespace {

json load_config_json(const std::string& path,
                      const std::vector<std::string>& overrides) {
  json j = path.empty() ? json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return j;
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

int cmd_synth_gen(const std::string& config_path, const std::string& out_dir,
                  const std::vector<std::string>& overrides) {
  const json j = load_config_json(config_path, overrides);
  const SynthSpec spec = SynthSpec::from_json(j);
  generate_corpus(spec, out_dir);
  write_json_file((fs::path(out_dir) / "effective_config.json").string(),
                  spec.to_json());
  std::cerr << "generated corpus at " << out_dir << "\n";
  emit({{"corpus_dir", out_dir},
        {"manifest", (fs::path(out_dir) / "manifest.json").string()}});
  return 0;
}

int cmd_featurize(const std::string& wav_path, const std::string& out_path) {
  auto features = featurize_wav(wav_path);
  write_dmf(out_path, features);
  emit({{"out", out_path},
        {"frames", features.frames},
        {"width", AudioFeatureMatrix::kFeatureDim}});
  return 0;
}

int cmd_pretrain(const std::string& config_path,
                 const std::vector<std::string>& overrides, bool resume) {
  const json j = load_config_json(config_path, overrides);
  TrainConfig cfg = TrainConfig::from_json(j);
  Trainer trainer(cfg, resume);
  std::cerr << "pre-training: mode=" << train_mode_name(cfg.mode)
            << " epochs=" << cfg.epochs << " out=" << cfg.out_dir << "\n";
  trainer.run();
  emit({{"out_dir", cfg.out_dir},
        {"checkpoint", cfg.out_dir + "/" + Trainer::kCheckpointFile},
        {"metrics", cfg.out_dir + "/" + Trainer::kMetricsFile},
        {"steps", trainer.global_step()}});
  return 0;
}

ModelConfig model_config_from_run(const std::string& run_dir) {
  const json j =
      read_json_file((fs::path(run_dir) / "effective_config.json").string());
  check_data(j.contains("model"),
             run_dir + "/effective_config.json has no model section");
  return ModelConfig::from_json(j["model"]);
}

int cmd_finetune(const std::string& task_str, const std::string& corpus_dir,
                 const std::string& pretrain_run, bool random_init,
                 const std::string& model_config_path,
                 const std::string& config_path, const std::string& out_dir,
                 const std::vector<std::string>& overrides) {
  const FinetuneTask task = task_from_name(task_str);
  json j = load_config_json(config_path, overrides);
  j["task"] = task_str;
  FinetuneConfig cfg = FinetuneConfig::from_json(j);

  auto corpus = Corpus::load(corpus_dir);
  ModelConfig mc;
  if (!pretrain_run.empty())
    mc = model_config_from_run(pretrain_run);
  else if (!model_config_path.empty())
    mc = ModelConfig::from_json(read_json_file(model_config_path));
  else
    throw_usage("finetune needs --pretrain-run or --model-config");
  mc.vocab_size = corpus.tokenizer.vocab_size();

  ModelParams params =
      random_init
          ? ModelParams(mc, cfg.seed)
          : ModelParams::load(
                (fs::path(pretrain_run) / Trainer::kCheckpointFile).string(),
                mc);
  if (random_init) std::cerr << "fine-tuning from random initialization\n";

  auto result = finetune(task, params, corpus.paired, corpus.test, cfg);

  fs::create_directories(out_dir);
  save_named_tensors((fs::path(out_dir) / "task_checkpoint.dmc").string(),
                     result.all_params);
  json eff = cfg.to_json();
  eff["model"] = mc.to_json();
  eff["n_classes"] = result.n_classes;
  eff["corpus_dir"] = corpus_dir;
  write_json_file((fs::path(out_dir) / "effective_config.json").string(), eff);
  write_json_file((fs::path(out_dir) / "results.json").string(), result.eval);
  json out{{"out_dir", out_dir}, {"eval", result.eval}};
  emit(out);
  return 0;
}

int cmd_evaluate(const std::string& run_dir, const std::string& corpus_dir,
                 const std::string& split, const std::string& out_path) {
  const json eff =
      read_json_file((fs::path(run_dir) / "effective_config.json").string());
  const FinetuneTask task = task_from_name(eff.at("task").get<std::string>());
  ModelConfig mc = ModelConfig::from_json(eff.at("model"));
  FinetuneConfig cfg = FinetuneConfig::from_json([&] {
    json c = eff;
    c.erase("model");
    c.erase("n_classes");
    c.erase("corpus_dir");
    return c;
  }());
  auto corpus = Corpus::load(corpus_dir);
  mc.vocab_size = corpus.tokenizer.vocab_size();
  auto [params, head] = load_task_checkpoint(
      (fs::path(run_dir) / "task_checkpoint.dmc").string(), mc, task,
      eff.at("n_classes").get<std::size_t>());

  const std::vector<Example>* eval_set = nullptr;
  if (split == "test")
    eval_set = &corpus.test;
  else if (split == "paired")
    eval_set = &corpus.paired;
  else
    throw_usage("unknown split \"" + split + "\" (expected test|paired)");
  check_data(!eval_set->empty(), "split \"" + split + "\" is empty");

  json results = evaluate_task(task, params, head, *eval_set, cfg);
  results["split"] = split;
  results["config"] = eff;
  if (!out_path.empty()) write_json_file(out_path, results);
  emit(results);
  return 0;
}

int cmd_translate(const std::string& run_dir, const std::string& corpus_dir,
                  std::uint64_t example_id) {
  const json eff =
      read_json_file((fs::path(run_dir) / "effective_config.json").string());
  auto corpus = Corpus::load(corpus_dir);
  ModelConfig mc = ModelConfig::from_json(eff.at("model"));
  mc.vocab_size = corpus.tokenizer.vocab_size();
  ModelParams params = ModelParams::load(
      (fs::path(run_dir) / Trainer::kCheckpointFile).string(), mc);
  auto store = PseudoParallelStore::load(
      (fs::path(run_dir) / Trainer::kStoreFile).string());

  json out{{"example_id", example_id}, {"iteration", store.iteration()}};
  bool found = false;
  if (store.contains(StoreKind::text_for_unpaired_audio, example_id)) {
    found = true;
    const auto& e = store.get(StoreKind::text_for_unpaired_audio, example_id,
                              store.iteration());
    const auto& table = params.get("embed.token_table");
    json decoded = json::array();
    for (std::size_t t = 0; t < e.rows; ++t) {
      std::vector<float> row(e.data.begin() + t * e.cols,
                             e.data.begin() + (t + 1) * e.cols);
      double best = -2;
      std::int64_t best_id = 0;
      for (std::size_t v = 0; v < mc.vocab_size; ++v) {
        std::vector<float> tv(table.data() + v * mc.d,
                              table.data() + (v + 1) * mc.d);
        const double c = cosine_similarity(row, tv);
        if (c > best) {
          best = c;
          best_id = static_cast<std::int64_t>(v);
        }
      }
      decoded.push_back({{"token", corpus.tokenizer.decode(best_id)},
                         {"cosine", best}});
    }
    out["w_tilde"] = {{"rows", e.rows}, {"decoded", decoded}};
  }
  if (store.contains(StoreKind::audio_for_unpaired_text, example_id)) {
    found = true;
    const auto& e = store.get(StoreKind::audio_for_unpaired_text, example_id,
                              store.iteration());
    double mn = 1e30, mx = -1e30, mean = 0, sq = 0;
    for (float v : e.data) {
      mn = std::min(mn, static_cast<double>(v));
      mx = std::max(mx, static_cast<double>(v));
      mean += v;
      sq += static_cast<double>(v) * v;
    }
    mean /= e.data.size();
    out["a_tilde"] = {{"frames", e.rows},
                      {"mean", mean},
                      {"std", std::sqrt(std::max(sq / e.data.size() -
                                                     mean * mean,
                                                 0.0))},
                      {"min", mn},
                      {"max", mx}};
  }
  if (!found)
    throw_data("no stored translation for example " +
               std::to_string(example_id));
  emit(out);
  return 0;
}

int cmd_corrupt_dump(const std::string& corpus_dir, const std::string& modality,
                     const std::string& policy_name, std::uint64_t seed,
                     std::size_t epoch, std::size_t limit,
                     const std::string& out_path) {
  auto corpus = Corpus::load(corpus_dir);
  CorruptionPolicy policy = policy_name == "idae" ? CorruptionPolicy::idae()
                                                  : CorruptionPolicy::cdae();
  check_data(policy_name == "idae" || policy_name == "cdae",
             "unknown policy \"" + policy_name + "\" (expected idae|cdae)");
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::trunc);
    check_data(static_cast<bool>(file), "cannot write " + out_path);
    os = &file;
  }
  json header{{"corpus", corpus_dir}, {"modality", modality},
              {"policy", policy_name}, {"seed", seed},   {"epoch", epoch}};
  *os << header.dump() << "\n";
  const std::string purpose = policy_name == "idae"
                                  ? "corrupt.idae." + modality
                                  : "corrupt.cdae.up_" + modality;
  std::size_t count = 0;
  if (modality == "text") {
    for (const auto& ex : corpus.unpaired_text) {
      if (limit && count >= limit) break;
      Rng rng = derive_rng(seed, purpose, {epoch, ex.id});
      auto [corrupted, rec] =
          corrupt_text(ex.tokens, policy, rng, corpus.tokenizer.vocab_size());
      json selected = json::array(), actions = json::array();
      for (const auto& e : rec.entries) {
        selected.push_back(e.pos);
        actions.push_back(e.action == CorruptAction::mask     ? "mask"
                          : e.action == CorruptAction::random ? "random"
                                                              : "keep");
      }
      *os << json{{"id", ex.id},
                  {"length", ex.tokens.size()},
                  {"selected", selected},
                  {"actions", actions}}
                 .dump()
          << "\n";
      ++count;
    }
  } else if (modality == "audio") {
    for (const auto& ex : corpus.unpaired_audio) {
      if (limit && count >= limit) break;
      Rng rng = derive_rng(seed, purpose, {epoch, ex.id});
      auto [corrupted, rec] = corrupt_audio(ex.features, policy, rng);
      json segments = json::array(), selected = json::array(),
           actions = json::array();
      for (const auto& s : rec.segments)
        segments.push_back({s.begin, s.end});
      for (const auto& e : rec.entries) {
        selected.push_back({e.segment.begin, e.segment.end});
        actions.push_back(e.fell_back_to_mask ? "mask_fallback"
                          : e.action == CorruptAction::mask
                              ? "mask"
                              : e.action == CorruptAction::random ? "random"
                                                                  : "keep");
      }
      *os << json{{"id", ex.id},
                  {"frames", ex.features.frames},
                  {"segments", segments},
                  {"selected", selected},
                  {"actions", actions}}
                 .dump()
          << "\n";
      ++count;
    }
  } else {
    throw_usage("unknown modality \"" + modality + "\" (expected text|audio)");
  }
  return 0;
}

int cmd_inspect_checkpoint(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "DMC1", path);
  const auto version = read_le<std::uint32_t>(is, path + " version");
  const auto count = read_le<std::uint32_t>(is, path + " count");
  emit({{"file", path}, {"version", version}, {"parameters", count}});
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = read_le<std::uint16_t>(is, path + " name length");
    std::string name(len, '\0');
    read_bytes(is, name.data(), len, path + " name");
    const auto rank = read_le<std::uint8_t>(is, path + " rank");
    std::vector<std::size_t> dims(rank);
    std::size_t numel = 1;
    for (auto& d : dims) {
      d = read_le<std::uint32_t>(is, path + " dims");
      numel *= d;
    }
    std::vector<float> data(numel);
    read_f32_array(is, data.data(), numel, path + " payload");
    double mean = 0, sq = 0;
    for (float v : data) {
      mean += v;
      sq += static_cast<double>(v) * v;
    }
    mean /= numel;
    emit({{"name", name},
          {"shape", dims},
          {"mean", mean},
          {"l2", std::sqrt(sq)}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual cross-modal transformer pre-training toolkit"};
  app.require_subcommand(1);

  std::vector<std::string> overrides;
  std::string config_path, out_dir, wav_path, out_path, corpus_dir, run_dir;
  std::string task_str = "classify", split = "test", modality = "text";
  std::string policy = "idae", model_config_path, pretrain_run, ckpt_path;
  bool resume = false, random_init = false;
  std::uint64_t example_id = 0, seed = 0;
  std::size_t epoch = 1, limit = 0;

  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic corpus");
  synth->add_option("--config", config_path, "synth spec JSON");
  synth->add_option("--out", out_dir, "output corpus directory")->required();
  synth->add_option("--set", overrides, "dotted-key overrides key=value");

  auto* feat = app.add_subcommand("featurize", "WAV -> DMF1 features");
  feat->add_option("--wav", wav_path, "input WAV (PCM16 mono 16 kHz)")
      ->required();
  feat->add_option("--out", out_path, "output .dmf path")->required();

  auto* pre = app.add_subcommand("pretrain", "run Algorithm-1 pre-training");
  pre->add_option("--config", config_path, "train config JSON")->required();
  pre->add_option("--set", overrides, "dotted-key overrides key=value");
  pre->add_flag("--resume", resume, "continue from out_dir checkpoints");

  auto* ft = app.add_subcommand("finetune", "fine-tune a task head");
  ft->add_option("--task", task_str, "classify|regress|speaker")->required();
  ft->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ft->add_option("--out", out_dir, "output directory")->required();
  ft->add_option("--pretrain-run", pretrain_run,
                 "pre-training output directory");
  ft->add_option("--model-config", model_config_path,
                 "model config JSON (with --random-init)");
  ft->add_flag("--random-init", random_init, "skip the pretrained checkpoint");
  ft->add_option("--config", config_path, "finetune config JSON");
  ft->add_option("--set", overrides, "dotted-key overrides key=value");

  auto* ev = app.add_subcommand("evaluate", "evaluate a fine-tuned run");
  ev->add_option("--run", run_dir, "finetune output directory")->required();
  ev->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ev->add_option("--split", split, "test|paired");
  ev->add_option("--out", out_path, "write results JSON here too");

  auto* tr = app.add_subcommand("translate", "inspect stored translations");
  tr->add_option("--run", run_dir, "pre-training output directory")
      ->required();
  tr->add_option("--corpus", corpus_dir, "corpus directory")->required();
  tr->add_option("--id", example_id, "example id")->required();

  auto* cd = app.add_subcommand("corrupt-dump",
                                "dump corruption decisions as JSONL");
  cd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  cd->add_option("--modality", modality, "text|audio")->required();
  cd->add_option("--policy", policy, "idae|cdae");
  cd->add_option("--seed", seed, "corruption seed");
  cd->add_option("--epoch", epoch, "epoch index in the stream derivation");
  cd->add_option("--limit", limit, "max examples (0 = all)");
  cd->add_option("--out", out_path, "output file (default stdout)");

  auto* ins = app.add_subcommand("inspect-checkpoint",
                                 "list checkpoint contents");
  ins->add_option("--checkpoint", ckpt_path, "DMC1 file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth_gen(config_path, out_dir, overrides);
    if (*feat) return cmd_featurize(wav_path, out_path);
    if (*pre) return cmd_pretrain(config_path, overrides, resume);
    if (*ft)
      return cmd_finetune(task_str, corpus_dir, pretrain_run, random_init,
                          model_config_path, config_path, out_dir, overrides);
    if (*ev) return cmd_evaluate(run_dir, corpus_dir, split, out_path);
    if (*tr) return cmd_translate(run_dir, corpus_dir, example_id);
    if (*cd)
      return cmd_corrupt_dump(corpus_dir, modality, policy, seed, epoch, limit,
                              out_path);
    if (*ins) return cmd_inspect_checkpoint(ckpt_path);
    throw_usage("no subcommand selected");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
