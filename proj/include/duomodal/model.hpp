#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "duomodal/audio_features.hpp"
#include "duomodal/errors.hpp"
#include "duomodal/rng.hpp"
#include "duomodal/serial.hpp"
#include "duomodal/tensor.hpp"
#include "duomodal/jsonutil.hpp"
#include "duomodal/tokenizer.hpp"

#include "json.hpp"

namespace duomodal {

enum class Modality { text, audio };

inline const char* modality_name(Modality m) {
  return m == Modality::text ? "text" : "audio";
}

// 1 = padded (not attendable). Empty mask means nothing is padded.
using PadMask = std::vector<std::uint8_t>;

inline bool all_padded(const PadMask& m) {
  if (m.empty()) return false;
  for (auto v : m)
    if (!v) return false;
  return true;
}

struct ModelConfig {
  std::size_t d = 64;
  std::size_t n_heads = 4;
  std::size_t n_uni_layers = 2;
  std::size_t n_cross_layers = 2;
  std::size_t vocab_size = 64;
  std::size_t audio_feature_dim = AudioFeatureMatrix::kFeatureDim;
  std::size_t max_text_len = 16;
  std::size_t max_audio_len = 64;
  std::size_t ffn_multiplier = 4;
  // Text translation state: expected embedding under softmax(logits), or the
  // raw pre-logit hidden state.
  bool translation_uses_hidden_state = false;

  static ModelConfig paper_preset() {
    ModelConfig c;
    c.d = 768;
    c.n_heads = 12;
    c.n_uni_layers = 3;
    c.n_cross_layers = 3;
    c.max_text_len = 256;
    c.max_audio_len = 1000;
    return c;
  }

  void validate() const {
    check_contract(d >= 1 && n_heads >= 1 && n_uni_layers >= 1 &&
                       n_cross_layers >= 1 && vocab_size >= 1 &&
                       max_text_len >= 1 && max_audio_len >= 1 &&
                       ffn_multiplier >= 1,
                   "model config: all sizes must be >= 1");
    check_contract(d % n_heads == 0,
                   "model config: hidden size " + std::to_string(d) +
                       " not divisible by " + std::to_string(n_heads) +
                       " heads");
    check_contract(audio_feature_dim == AudioFeatureMatrix::kFeatureDim,
                   "model config: audio feature dim must be 160");
    check_contract(vocab_size > static_cast<std::size_t>(kNumSpecialTokens),
                   "model config: vocab must exceed the special tokens");
  }

  nlohmann::json to_json() const {
    return {{"d", d},
            {"n_heads", n_heads},
            {"n_uni_layers", n_uni_layers},
            {"n_cross_layers", n_cross_layers},
            {"vocab_size", vocab_size},
            {"audio_feature_dim", audio_feature_dim},
            {"max_text_len", max_text_len},
            {"max_audio_len", max_audio_len},
            {"ffn_multiplier", ffn_multiplier},
            {"translation_uses_hidden_state", translation_uses_hidden_state}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    require_known_keys(j,
                       {"d", "n_heads", "n_uni_layers", "n_cross_layers",
                        "vocab_size", "audio_feature_dim", "max_text_len",
                        "max_audio_len", "ffn_multiplier",
                        "translation_uses_hidden_state"},
                       "model config");
    ModelConfig c;
    c.d = j.value("d", c.d);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_uni_layers = j.value("n_uni_layers", c.n_uni_layers);
    c.n_cross_layers = j.value("n_cross_layers", c.n_cross_layers);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.audio_feature_dim = j.value("audio_feature_dim", c.audio_feature_dim);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    c.max_audio_len = j.value("max_audio_len", c.max_audio_len);
    c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
    c.translation_uses_hidden_state =
        j.value("translation_uses_hidden_state", c.translation_uses_hidden_state);
    c.validate();
    return c;
  }
};

// Parameter groups drive optimizer scoping: the IDAE pass may update only
// the unimodal encoders plus embeddings and heads.
enum class ParamGroup {
  text_embed,
  audio_embed,
  uni_text,
  uni_audio,
  cross_text,   // audio-referred text encoder
  cross_audio,  // text-referred audio encoder
  audio_head,
};

inline ParamGroup param_group_of(const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("embed.token_table") || starts("embed.text_pos"))
    return ParamGroup::text_embed;
  if (starts("embed.audio_")) return ParamGroup::audio_embed;
  if (starts("uni.text.")) return ParamGroup::uni_text;
  if (starts("uni.audio.")) return ParamGroup::uni_audio;
  if (starts("cross.text.")) return ParamGroup::cross_text;
  if (starts("cross.audio.")) return ParamGroup::cross_audio;
  if (starts("head.audio.")) return ParamGroup::audio_head;
  throw_contract("unknown parameter group for \"" + name + "\"");
}

inline bool group_in_idae_scope(ParamGroup g) {
  return g != ParamGroup::cross_text && g != ParamGroup::cross_audio;
}


// DMC1 container: magic, u32 version, u32 count, then per tensor
// (lexicographic name order): u16 name length, name, u8 rank, u32 dims,
// f32 LE payload.
inline void save_named_tensors(const std::string& path,
                               const std::map<std::string, Tensor>& tensors) {
  auto os = open_out(path);
  write_bytes(os, "DMC1", 4);
  write_le<std::uint32_t>(os, 1);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    write_bytes(os, name.data(), name.size());
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (auto dim : t.shape())
      write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
    write_f32_array(os, t.data(), t.numel());
  }
}

// Fills an already-shaped tensor map from a DMC1 file; any name or shape
// disagreement is an error naming the parameter.
inline void load_named_tensors(const std::string& path,
                               std::map<std::string, Tensor>& tensors) {
  auto is = open_in(path);
  expect_magic(is, "DMC1", path);
  const auto version = read_le<std::uint32_t>(is, path + " version");
  check_data(version == 1, path + ": unsupported checkpoint version " +
                               std::to_string(version));
  const auto count = read_le<std::uint32_t>(is, path + " parameter count");
  if (count != tensors.size())
    throw_data(path + ": checkpoint has " + std::to_string(count) +
               " parameters, model expects " + std::to_string(tensors.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = read_le<std::uint16_t>(is, path + " name length");
    std::string name(len, '\0');
    read_bytes(is, name.data(), len, path + " name");
    const auto rank = read_le<std::uint8_t>(is, path + " rank");
    Shape shape(rank);
    for (auto& dim : shape) dim = read_le<std::uint32_t>(is, path + " dims");
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw_data(path + ": unknown parameter \"" + name + "\"");
    if (it->second.shape() != shape)
      throw_data(path + ": parameter \"" + name + "\" has shape " +
                 shape_str(shape) + ", model expects " +
                 shape_str(it->second.shape()));
    read_f32_array(is, it->second.data(), it->second.numel(),
                   path + " \"" + name + "\"");
  }
}

// All trainable state of the dual transformer, addressed by stable names.
// The text output head is weight-tied to embed.token_table, so it has no
// tensor of its own.
class ModelParams {
 public:
  ModelParams(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg.d;
    add("embed.token_table", {cfg.vocab_size, d}, Init::normal, seed);
    add("embed.text_pos", {cfg.max_text_len, d}, Init::normal, seed);
    add("embed.audio_proj.w", {cfg.audio_feature_dim, d}, Init::normal, seed);
    add("embed.audio_proj.b", {d}, Init::zero, seed);
    add("embed.audio_pos", {cfg.max_audio_len, d}, Init::normal, seed);
    for (const char* side : {"text", "audio"})
      for (std::size_t l = 0; l < cfg.n_uni_layers; ++l) {
        const std::string base =
            "uni." + std::string(side) + ".L" + std::to_string(l) + ".";
        add_attention(base + "attn.", seed);
        add_norm(base + "norm1.", seed);
        add_ffn(base + "ffn.", seed);
        add_norm(base + "norm2.", seed);
      }
    for (const char* side : {"text", "audio"}) {
      for (std::size_t l = 0; l < cfg.n_cross_layers; ++l) {
        const std::string base =
            "cross." + std::string(side) + ".L" + std::to_string(l) + ".";
        add_attention(base + "self.", seed);
        add_norm(base + "norm1.", seed);
        add_attention(base + "cross.", seed);
        add_norm(base + "norm2.", seed);
        add_ffn(base + "ffn.", seed);
        add_norm(base + "norm3.", seed);
      }
      add("cross." + std::string(side) + ".null_memory", {1, d}, Init::normal,
          seed);
    }
    add("head.audio.w", {d, cfg.audio_feature_dim}, Init::normal, seed);
    add("head.audio.b", {cfg.audio_feature_dim}, Init::zero, seed);
  }

  ModelParams(const ModelParams&) = delete;
  ModelParams& operator=(const ModelParams&) = delete;
  ModelParams(ModelParams&&) = default;
  ModelParams& operator=(ModelParams&&) = default;

  const ModelConfig& config() const { return cfg_; }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    check_contract(it != params_.end(), "unknown parameter \"" + name + "\"");
    return it->second;
  }

  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  ModelParams clone() const {
    ModelParams copy(cfg_, 0);
    for (auto& [name, t] : copy.params_) {
      t.vec() = params_.at(name).vec();
    }
    return copy;
  }

  // FNV hash of the raw float bytes of every parameter in a group set.
  std::uint64_t hash_groups(
      const std::function<bool(ParamGroup)>& in_set) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : params_) {
      if (!in_set(param_group_of(name))) continue;
      h = hash_bytes(name.data(), name.size(), h);
      h = hash_bytes(t.data(), t.numel() * sizeof(float), h);
    }
    return h;
  }

  void save(const std::string& path) const {
    save_named_tensors(path, params_);
  }

  static ModelParams load(const std::string& path, const ModelConfig& cfg) {
    ModelParams params(cfg, 0);
    load_named_tensors(path, params.params_);
    return params;
  }

 private:
  enum class Init { zero, one, normal };

  void add(const std::string& name, Shape shape, Init init,
           std::uint64_t seed) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    if (init == Init::one) {
      std::fill(t.vec().begin(), t.vec().end(), 1.f);
    } else if (init == Init::normal) {
      Rng rng = derive_rng(seed, "param_init", {fnv1a(name)});
      for (auto& x : t.vec()) x = static_cast<float>(0.02 * rng.normal());
    }
    t.set_name(name);
    params_.emplace(name, std::move(t));
  }

  void add_attention(const std::string& base, std::uint64_t seed) {
    const std::size_t d = cfg_.d;
    for (const char* w : {"wq", "wk", "wv", "wo"})
      add(base + w, {d, d}, Init::normal, seed);
    for (const char* b : {"bq", "bk", "bv", "bo"})
      add(base + b, {d}, Init::zero, seed);
  }

  void add_norm(const std::string& base, std::uint64_t seed) {
    add(base + "g", {cfg_.d}, Init::one, seed);
    add(base + "b", {cfg_.d}, Init::zero, seed);
  }

  void add_ffn(const std::string& base, std::uint64_t seed) {
    const std::size_t d = cfg_.d, h = cfg_.d * cfg_.ffn_multiplier;
    add(base + "w1", {d, h}, Init::normal, seed);
    add(base + "b1", {h}, Init::zero, seed);
    add(base + "w2", {h, d}, Init::normal, seed);
    add(base + "b2", {d}, Init::zero, seed);
  }

  ModelConfig cfg_;
  std::map<std::string, Tensor> params_;
};

// ---------------------------------------------------------------------------
// forward passes

namespace model_detail {

inline Tensor position_prefix(ModelParams& p, const std::string& table,
                              std::size_t len) {
  std::vector<std::int64_t> idx(len);
  for (std::size_t i = 0; i < len; ++i) idx[i] = static_cast<std::int64_t>(i);
  return embedding_lookup(p.get(table), idx);
}

// Additive attention mask over keys: 0 where attendable, -1e9 where padded.
inline Tensor key_mask_vector(const PadMask& mask, std::size_t len) {
  std::vector<float> v(len, 0.f);
  if (!mask.empty())
    for (std::size_t i = 0; i < len; ++i)
      if (mask[i]) v[i] = -1e9f;
  return Tensor::from_vector({len}, std::move(v));
}

inline Tensor multi_head_attention(ModelParams& p, const std::string& base,
                                   const Tensor& query_in,
                                   const Tensor& kv_in,
                                   const PadMask& key_pad) {
  const std::size_t d = p.config().d;
  const std::size_t heads = p.config().n_heads;
  const std::size_t dk = d / heads;
  auto Q = add_row_vector(matmul(query_in, p.get(base + "wq")),
                          p.get(base + "bq"));
  auto K = add_row_vector(matmul(kv_in, p.get(base + "wk")),
                          p.get(base + "bk"));
  auto V = add_row_vector(matmul(kv_in, p.get(base + "wv")),
                          p.get(base + "bv"));
  const bool masked = !key_pad.empty();
  Tensor mask_vec;
  if (masked) mask_vec = key_mask_vector(key_pad, kv_in.rows());
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  const float inv_sqrt_dk = 1.f / std::sqrt(static_cast<float>(dk));
  for (std::size_t h = 0; h < heads; ++h) {
    auto Qh = slice_cols(Q, h * dk, dk);
    auto Kh = slice_cols(K, h * dk, dk);
    auto Vh = slice_cols(V, h * dk, dk);
    auto scores = scale(matmul_nt(Qh, Kh), inv_sqrt_dk);
    if (masked) scores = add_row_vector(scores, mask_vec);
    ctx.push_back(matmul(softmax_rows(scores), Vh));
  }
  return add_row_vector(matmul(concat_cols(ctx), p.get(base + "wo")),
                        p.get(base + "bo"));
}

inline Tensor feed_forward(ModelParams& p, const std::string& base,
                           const Tensor& x) {
  auto h = gelu(add_row_vector(matmul(x, p.get(base + "w1")),
                               p.get(base + "b1")));
  return add_row_vector(matmul(h, p.get(base + "w2")), p.get(base + "b2"));
}

inline Tensor residual_norm(ModelParams& p, const std::string& norm_base,
                            const Tensor& x, const Tensor& sub) {
  return layer_norm(add(x, sub), p.get(norm_base + "g"),
                    p.get(norm_base + "b"));
}

}  // namespace model_detail

// Token ids -> token embedding + position embedding.
inline Tensor embed_text(ModelParams& p, const TokenSequence& ids) {
  check_contract(ids.size() >= 1, "embed_text: empty token sequence");
  check_contract(ids.size() <= p.config().max_text_len,
                 "embed_text: length " + std::to_string(ids.size()) +
                     " exceeds cap " + std::to_string(p.config().max_text_len));
  auto tok = embedding_lookup(p.get("embed.token_table"), ids);
  return add(tok, model_detail::position_prefix(p, "embed.text_pos",
                                                ids.size()));
}

// Soft-embedding input (the IDP text state): matrix + position embedding,
// bypassing the table lookup.
inline Tensor embed_text(ModelParams& p, const Tensor& soft_embeddings) {
  check_contract(soft_embeddings.rank() == 2 &&
                     soft_embeddings.cols() == p.config().d,
                 "embed_text: soft input must be [T x d]");
  check_contract(soft_embeddings.rows() <= p.config().max_text_len,
                 "embed_text: length " +
                     std::to_string(soft_embeddings.rows()) + " exceeds cap " +
                     std::to_string(p.config().max_text_len));
  return add(soft_embeddings,
             model_detail::position_prefix(p, "embed.text_pos",
                                           soft_embeddings.rows()));
}

// Acoustic features -> dense projection to d + position embedding.
inline Tensor embed_audio(ModelParams& p, const Tensor& features) {
  check_contract(features.rank() == 2 &&
                     features.cols() == p.config().audio_feature_dim,
                 "embed_audio: features must be [T x 160], got " +
                     shape_str(features.shape()));
  check_contract(features.rows() >= 1, "embed_audio: empty feature matrix");
  check_contract(features.rows() <= p.config().max_audio_len,
                 "embed_audio: length " + std::to_string(features.rows()) +
                     " exceeds cap " +
                     std::to_string(p.config().max_audio_len));
  auto proj = add_row_vector(matmul(features, p.get("embed.audio_proj.w")),
                             p.get("embed.audio_proj.b"));
  return add(proj, model_detail::position_prefix(p, "embed.audio_pos",
                                                 features.rows()));
}

inline Tensor features_tensor(const AudioFeatureMatrix& m) {
  return Tensor::from_vector({m.frames, AudioFeatureMatrix::kFeatureDim},
                             std::vector<float>(m.data));
}

// n_uni_layers of {self-attention, FFN} with post-norm residuals.
inline Tensor unimodal_encode(ModelParams& p, Modality modality,
                              const Tensor& emb, const PadMask& pad = {}) {
  if (!pad.empty())
    check_contract(pad.size() == emb.rows(),
                   "unimodal_encode: pad mask length mismatch");
  const std::string side = modality_name(modality);
  Tensor x = emb;
  for (std::size_t l = 0; l < p.config().n_uni_layers; ++l) {
    const std::string base = "uni." + side + ".L" + std::to_string(l) + ".";
    auto attn =
        model_detail::multi_head_attention(p, base + "attn.", x, x, pad);
    x = model_detail::residual_norm(p, base + "norm1.", x, attn);
    auto ffn = model_detail::feed_forward(p, base + "ffn.", x);
    x = model_detail::residual_norm(p, base + "norm2.", x, ffn);
  }
  return x;
}

// n_cross_layers of {self-attention, cross-attention over the other
// modality's unimodal output, FFN}. A fully padded memory falls back to the
// encoder's learned null state so the output stays well-defined.
inline Tensor cross_modal_encode(ModelParams& p, Modality query_modality,
                                 const Tensor& query_emb, const Tensor& memory,
                                 const PadMask& query_pad = {},
                                 const PadMask& memory_pad = {}) {
  check_contract(memory.rank() == 2 && memory.cols() == p.config().d,
                 "cross_modal_encode: memory must be [L x d], got " +
                     shape_str(memory.shape()));
  if (!memory_pad.empty())
    check_contract(memory_pad.size() == memory.rows(),
                   "cross_modal_encode: memory mask length mismatch");
  const std::string side = modality_name(query_modality);
  Tensor mem = memory;
  PadMask mem_pad = memory_pad;
  if (all_padded(memory_pad)) {
    mem = p.get("cross." + side + ".null_memory");
    mem_pad.clear();
  }
  Tensor x = query_emb;
  for (std::size_t l = 0; l < p.config().n_cross_layers; ++l) {
    const std::string base = "cross." + side + ".L" + std::to_string(l) + ".";
    auto self =
        model_detail::multi_head_attention(p, base + "self.", x, x, query_pad);
    x = model_detail::residual_norm(p, base + "norm1.", x, self);
    auto cross = model_detail::multi_head_attention(p, base + "cross.", x, mem,
                                                    mem_pad);
    x = model_detail::residual_norm(p, base + "norm2.", x, cross);
    auto ffn = model_detail::feed_forward(p, base + "ffn.", x);
    x = model_detail::residual_norm(p, base + "norm3.", x, ffn);
  }
  return x;
}

// Logits against the tied token table: H x table^T.
inline Tensor text_head_logits(ModelParams& p, const Tensor& H) {
  return matmul_nt(H, p.get("embed.token_table"));
}

// Expected token embedding under softmax(logits); stays in embedding space
// while retaining the distribution.
inline Tensor soft_embeddings_from_logits(ModelParams& p,
                                          const Tensor& logits) {
  return matmul(softmax_rows(logits), p.get("embed.token_table"));
}

// The translation output for the text modality per the configured variant.
inline Tensor text_translation_state(ModelParams& p, const Tensor& H) {
  if (p.config().translation_uses_hidden_state) return H;
  return soft_embeddings_from_logits(p, text_head_logits(p, H));
}

inline Tensor audio_head(ModelParams& p, const Tensor& H) {
  return add_row_vector(matmul(H, p.get("head.audio.w")),
                        p.get("head.audio.b"));
}

}  // namespace duomodal
