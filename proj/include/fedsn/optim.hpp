#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fedsn/parameters.hpp"

namespace fedsn {

enum class OptimizerKind { Sgd, Adam, NovoGrad };

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::NovoGrad: return "novograd";
  }
  return "?";
}

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "novograd") return OptimizerKind::NovoGrad;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::NovoGrad;
  double lr = 1e-3;
  double beta1 = 0.95;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;

  static OptimizerConfig sgd(double lr) { return {OptimizerKind::Sgd, lr, 0.0, 0.0, 0.0, 0.0}; }
  static OptimizerConfig adam(double lr = 1e-3) { return {OptimizerKind::Adam, lr, 0.9, 0.999, 1e-8, 0.0}; }
  static OptimizerConfig novograd(double lr = 1e-3) { return {OptimizerKind::NovoGrad, lr, 0.95, 0.98, 1e-8, 0.0}; }
};

/// SGD, Adam and NovoGrad over a ParameterSet's gradient buffers.
///
/// State is kept per parameter name and advances only when that parameter is
/// stepped, so parameters that sit outside the active sub-network keep their
/// moments untouched. NovoGrad keeps one second-moment scalar per tensor:
///   v <- beta2 v + (1 - beta2) |g|^2   (v <- |g|^2 on the first step)
///   m <- beta1 m + g / (sqrt(v) + eps) + wd p
///   p <- p - lr m
template <std::floating_point T>
class Optimizer {
 public:
  struct State {
    std::vector<T> m;
    std::vector<T> v;
    T layer_v = T{0};
    std::uint64_t steps = 0;
  };

  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  const OptimizerConfig& config() const noexcept { return config_; }
  std::uint64_t step_count() const noexcept { return steps_; }
  const std::unordered_map<std::string, State>& state() const noexcept { return state_; }

  /// Updates every parameter; each must carry a gradient.
  void step(ParameterSet<T>& params) {
    std::vector<std::size_t> all(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    step_indices(params, all);
  }

  /// Updates only the named parameters; each must carry a gradient.
  void step(ParameterSet<T>& params, std::span<const std::string> names) {
    std::vector<std::size_t> idx;
    idx.reserve(names.size());
    for (const auto& n : names) idx.push_back(params.position(n));
    step_indices(params, idx);
  }

 private:
  void step_indices(ParameterSet<T>& params, const std::vector<std::size_t>& idx) {
    auto& entries = params.entries();
    for (std::size_t i : idx) {
      const auto& e = entries[i];
      if (e.field.grad().size() != e.field.size()) {
        throw std::invalid_argument("optimizer step: parameter '" + e.name + "' has no gradient");
      }
    }
    ++steps_;
    for (std::size_t i : idx) update(entries[i].name, entries[i].field);
  }

  void update(const std::string& name, Field<T>& f) {
    const T lr = static_cast<T>(config_.lr);
    const T wd = static_cast<T>(config_.weight_decay);
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T eps = static_cast<T>(config_.eps);
    auto p = f.values();
    const auto g = f.grad();
    State& s = state_[name];
    ++s.steps;
    switch (config_.kind) {
      case OptimizerKind::Sgd:
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (g[i] + wd * p[i]);
        break;
      case OptimizerKind::Adam: {
        if (s.m.empty()) {
          s.m.assign(p.size(), T{0});
          s.v.assign(p.size(), T{0});
        }
        const T c1 = T{1} - std::pow(b1, static_cast<T>(s.steps));
        const T c2 = T{1} - std::pow(b2, static_cast<T>(s.steps));
        for (std::size_t i = 0; i < p.size(); ++i) {
          const T gi = g[i] + wd * p[i];
          s.m[i] = b1 * s.m[i] + (T{1} - b1) * gi;
          s.v[i] = b2 * s.v[i] + (T{1} - b2) * gi * gi;
          p[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
        }
        break;
      }
      case OptimizerKind::NovoGrad: {
        if (s.m.empty()) s.m.assign(p.size(), T{0});
        T norm2{0};
        for (T gi : g) norm2 += gi * gi;
        s.layer_v = s.steps == 1 ? norm2 : b2 * s.layer_v + (T{1} - b2) * norm2;
        const T denom = std::sqrt(s.layer_v) + eps;
        for (std::size_t i = 0; i < p.size(); ++i) {
          s.m[i] = b1 * s.m[i] + (g[i] / denom + wd * p[i]);
          p[i] -= lr * s.m[i];
        }
        break;
      }
    }
  }

  OptimizerConfig config_;
  std::unordered_map<std::string, State> state_;
  std::uint64_t steps_ = 0;
};

}  // namespace fedsn
