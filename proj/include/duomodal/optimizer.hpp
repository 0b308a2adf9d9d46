#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "duomodal/errors.hpp"
#include "duomodal/model.hpp"
#include "duomodal/serial.hpp"

namespace duomodal {

// Linear ramp 0 -> base_lr over warmup_steps, then linear decay to 0 at
// total_steps.
inline double lr_schedule(std::uint64_t step, std::uint64_t total_steps,
                          std::uint64_t warmup_steps, double base_lr) {
  check_contract(warmup_steps <= total_steps,
                 "lr_schedule: warmup_steps " + std::to_string(warmup_steps) +
                     " exceeds total_steps " + std::to_string(total_steps));
  check_contract(step <= total_steps,
                 "lr_schedule: step " + std::to_string(step) +
                     " past total_steps " + std::to_string(total_steps));
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  if (total_steps == warmup_steps) return base_lr;
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the pre-clip norm.
inline double clip_gradient_norm(std::map<std::string, Tensor>& params,
                                 double max_norm) {
  double sq = 0;
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (float& g : t.grad()) g *= scale;
    }
  }
  return norm;
}

inline double clip_gradient_norm(ModelParams& params, double max_norm) {
  return clip_gradient_norm(params.all(), max_norm);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Each parameter keeps its own step count so a
// group skipped by a scoped pass (the cross encoders during IDAE) is left
// untouched: no moment decay, no counter advance, no byte changes.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const std::map<std::string, Tensor>& params,
                         AdamConfig cfg = {})
      : cfg_(cfg) {
    for (const auto& [name, t] : params) {
      State s;
      s.m.assign(t.numel(), 0.f);
      s.v.assign(t.numel(), 0.f);
      state_.emplace(name, std::move(s));
    }
  }

  explicit AdamOptimizer(const ModelParams& params, AdamConfig cfg = {})
      : AdamOptimizer(params.all(), cfg) {}

  const AdamConfig& config() const { return cfg_; }

  void step(std::map<std::string, Tensor>& params, double lr,
            const std::function<bool(const std::string&)>& in_scope) {
    for (auto& [name, t] : params) {
      if (!in_scope(name)) continue;
      State& s = state_.at(name);
      ++s.t;
      const auto& g = t.grad();
      for (float gv : g)
        if (!std::isfinite(gv))
          throw_numerical("non-finite gradient in parameter \"" + name +
                          "\"");
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
      float* p = t.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        s.m[i] = static_cast<float>(cfg_.beta1 * s.m[i] +
                                    (1.0 - cfg_.beta1) * g[i]);
        s.v[i] = static_cast<float>(cfg_.beta2 * s.v[i] +
                                    (1.0 - cfg_.beta2) * g[i] * g[i]);
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        p[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  void step(ModelParams& params, double lr,
            const std::function<bool(ParamGroup)>& group_scope) {
    step(params.all(), lr, [&](const std::string& name) {
      return group_scope(param_group_of(name));
    });
  }

  void step_all(ModelParams& params, double lr) {
    step(params.all(), lr, [](const std::string&) { return true; });
  }

  void step_all(std::map<std::string, Tensor>& params, double lr) {
    step(params, lr, [](const std::string&) { return true; });
  }

  std::uint64_t step_count(const std::string& name) const {
    return state_.at(name).t;
  }

  // DMO1 sidecar next to a checkpoint: epoch tag, global step, and the full
  // moment state, so a resumed run continues bit-identically.
  void save(const std::string& path, std::uint32_t epoch,
            std::uint64_t global_step) const {
    auto os = open_out(path);
    write_bytes(os, "DMO1", 4);
    write_le<std::uint32_t>(os, 1);
    write_le<std::uint32_t>(os, epoch);
    write_le<std::uint64_t>(os, global_step);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(state_.size()));
    for (const auto& [name, s] : state_) {
      write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
      write_bytes(os, name.data(), name.size());
      write_le<std::uint64_t>(os, s.t);
      write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.m.size()));
      write_f32_array(os, s.m.data(), s.m.size());
      write_f32_array(os, s.v.data(), s.v.size());
    }
  }

 private:
  struct State {
    std::vector<float> m, v;
    std::uint64_t t = 0;
  };

  AdamConfig cfg_;
  std::map<std::string, State> state_;

  friend struct LoadedOptimizerState;
};

struct LoadedOptimizerState {
  AdamOptimizer optimizer;
  std::uint32_t epoch = 0;
  std::uint64_t global_step = 0;

  static LoadedOptimizerState load(const std::string& path,
                                   const ModelParams& params,
                                   AdamConfig cfg = {}) {
    return load(path, params.all(), cfg);
  }

  static LoadedOptimizerState load(const std::string& path,
                                   const std::map<std::string, Tensor>& params,
                                   AdamConfig cfg = {}) {
    auto is = open_in(path);
    expect_magic(is, "DMO1", path);
    const auto version = read_le<std::uint32_t>(is, path + " version");
    check_data(version == 1, path + ": unsupported optimizer state version");
    LoadedOptimizerState out{AdamOptimizer(params, cfg), 0, 0};
    out.epoch = read_le<std::uint32_t>(is, path + " epoch");
    out.global_step = read_le<std::uint64_t>(is, path + " global step");
    const auto count = read_le<std::uint32_t>(is, path + " state count");
    check_data(count == out.optimizer.state_.size(),
               path + ": optimizer state count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = read_le<std::uint16_t>(is, path + " name length");
      std::string name(len, '\0');
      read_bytes(is, name.data(), len, path + " name");
      auto it = out.optimizer.state_.find(name);
      if (it == out.optimizer.state_.end())
        throw_data(path + ": unknown optimizer entry \"" + name + "\"");
      auto& s = it->second;
      s.t = read_le<std::uint64_t>(is, path + " step count");
      const auto numel = read_le<std::uint32_t>(is, path + " numel");
      if (numel != s.m.size())
        throw_data(path + ": moment size mismatch for \"" + name + "\"");
      read_f32_array(is, s.m.data(), numel, path + " m");
      read_f32_array(is, s.v.data(), numel, path + " v");
    }
    return out;
  }
};

}  // namespace duomodal
