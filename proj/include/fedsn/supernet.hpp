#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "fedsn/field.hpp"
#include "fedsn/ops.hpp"
#include "fedsn/parameters.hpp"
#include "fedsn/rng.hpp"
#include "fedsn/supernet_config.hpp"
#include "fedsn/tape.hpp"

namespace fedsn {

/// One candidate index per slot, in slot order.
struct PathSpec {
  std::vector<std::size_t> choices;

  bool operator==(const PathSpec&) const = default;
  auto operator<=>(const PathSpec&) const = default;

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < choices.size(); ++i) {
      if (i) s += '-';
      s += std::to_string(choices[i]);
    }
    return s;
  }
};

/// Parameter names of one candidate block.
inline std::string candidate_prefix(const SlotSpec& slot, std::size_t index) {
  return slot.id + "/c" + std::to_string(index);
}

/// Kernel shape (out, in, extents...) for a convolutional candidate.
inline Shape candidate_kernel_shape(const Candidate& c, std::size_t rank, std::size_t in, std::size_t out) {
  Shape s{out, in};
  for (std::size_t a = 0; a < rank; ++a) {
    std::size_t k = 1;
    switch (c.kind) {
      case CandidateKind::FullConv:
      case CandidateKind::ResidualBlock: k = c.size; break;
      case CandidateKind::AxisConv: k = a == c.axis ? 3 : 1; break;
      case CandidateKind::PlanarConv: k = a == c.axis ? 1 : 3; break;
      case CandidateKind::Identity: break;
    }
    s.push_back(k);
  }
  return s;
}

/// Supernet holding every candidate's parameters at every slot.
template <std::floating_point T>
class SupernetModel {
 public:
  /// Builds and initializes. Kernels use He fan-in scaling from a stream
  /// derived from (seed, parameter name); biases start at zero. Parameters
  /// of a candidate therefore do not depend on which other candidates exist.
  static SupernetModel build(const SupernetConfig& config, std::uint64_t seed) {
    SupernetModel m;
    m.config_ = config;
    m.slots_ = config.slots();
    const std::size_t rank = config.spatial_rank;
    auto kernel = [&](const std::string& name, Shape shape) {
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      Field<T> f(std::move(shape));
      Rng rng(derive_seed(seed, name));
      std::normal_distribution<T> dist(T{0}, std::sqrt(T{2} / static_cast<T>(fan_in)));
      for (T& v : f.values()) v = dist(rng);
      m.params_.add(name, std::move(f));
    };
    auto bias = [&](const std::string& name, std::size_t channels) { m.params_.add(name, Field<T>(Shape{channels})); };

    for (const auto& slot : m.slots_) {
      for (std::size_t j = 0; j < slot.candidates.size(); ++j) {
        const Candidate& c = slot.candidates[j];
        const std::string p = candidate_prefix(slot, j);
        switch (c.kind) {
          case CandidateKind::Identity: break;
          case CandidateKind::ResidualBlock:
            kernel(p + "/w1", candidate_kernel_shape(c, rank, slot.in_channels, slot.out_channels));
            bias(p + "/b1", slot.out_channels);
            kernel(p + "/w2", candidate_kernel_shape(c, rank, slot.out_channels, slot.out_channels));
            bias(p + "/b2", slot.out_channels);
            break;
          default:
            kernel(p + "/w", candidate_kernel_shape(c, rank, slot.in_channels, slot.out_channels));
            bias(p + "/b", slot.out_channels);
        }
      }
    }
    Shape head{config.classes, config.width};
    for (std::size_t a = 0; a < rank; ++a) head.push_back(1);
    kernel("head/w", head);
    bias("head/b", config.classes);
    return m;
  }

  const SupernetConfig& config() const noexcept { return config_; }
  const std::vector<SlotSpec>& slots() const noexcept { return slots_; }
  ParameterSet<T>& parameters() noexcept { return params_; }
  const ParameterSet<T>& parameters() const noexcept { return params_; }

  /// Replaces parameter values; the set must be congruent.
  void set_parameters(const ParameterSet<T>& p) {
    if (!p.congruent(params_)) throw std::invalid_argument("set_parameters: parameter set is not congruent");
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto dst = params_.entries()[i].field.values();
      const auto src = p.entries()[i].field.values();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  std::uint64_t path_count() const { return config_.path_count(); }

  PathSpec default_path() const { return PathSpec{std::vector<std::size_t>(slots_.size(), 0)}; }

  void validate(const PathSpec& path) const {
    if (path.choices.size() != slots_.size()) {
      throw std::invalid_argument("path has " + std::to_string(path.choices.size()) + " entries for " +
                                  std::to_string(slots_.size()) + " slots");
    }
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (path.choices[i] >= slots_[i].candidates.size()) {
        throw std::invalid_argument("path index " + std::to_string(path.choices[i]) + " out of range at slot " +
                                    slots_[i].id);
      }
    }
  }

  /// Parameters touched by a forward pass along `path`.
  std::vector<std::string> path_parameter_names(const PathSpec& path) const {
    validate(path);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const std::string p = candidate_prefix(slots_[i], path.choices[i]);
      switch (slots_[i].candidates[path.choices[i]].kind) {
        case CandidateKind::Identity: break;
        case CandidateKind::ResidualBlock:
          for (const char* s : {"/w1", "/b1", "/w2", "/b2"}) names.push_back(p + s);
          break;
        default:
          names.push_back(p + "/w");
          names.push_back(p + "/b");
      }
    }
    names.push_back("head/w");
    names.push_back("head/b");
    return names;
  }

  /// Path decoded from a mixed-radix index (slot 0 most significant).
  PathSpec path_from_index(std::uint64_t index) const {
    PathSpec p{std::vector<std::size_t>(slots_.size(), 0)};
    for (std::size_t i = slots_.size(); i-- > 0;) {
      const std::uint64_t k = slots_[i].candidates.size();
      p.choices[i] = static_cast<std::size_t>(index % k);
      index /= k;
    }
    return p;
  }

 private:
  SupernetConfig config_;
  std::vector<SlotSpec> slots_;
  ParameterSet<T> params_;
};

/// Each slot drawn independently and uniformly over its candidates.
/// Single-candidate slots consume no randomness.
template <std::floating_point T>
PathSpec sample_path(const SupernetModel<T>& model, Rng& rng) {
  PathSpec p;
  p.choices.reserve(model.slots().size());
  for (const auto& s : model.slots()) {
    if (s.candidates.size() == 1) {
      p.choices.push_back(0);
    } else {
      std::uniform_int_distribution<std::size_t> d(0, s.candidates.size() - 1);
      p.choices.push_back(d(rng));
    }
  }
  return p;
}

/// Continuous relaxation of a path: one logit vector per slot, stored as
/// parameters named "alpha/<slot id>".
template <std::floating_point T>
struct PathWeights {
  ParameterSet<T> logits;

  static PathWeights uniform(const SupernetModel<T>& model) {
    PathWeights w;
    for (const auto& s : model.slots()) w.logits.add("alpha/" + s.id, Field<T>(Shape{s.candidates.size()}));
    return w;
  }

  /// Logit `saturation` on the chosen index, 0 elsewhere.
  static PathWeights one_hot(const SupernetModel<T>& model, const PathSpec& path, T saturation = T{40}) {
    model.validate(path);
    PathWeights w = uniform(model);
    for (std::size_t i = 0; i < path.choices.size(); ++i) w.logits.entries()[i].field[path.choices[i]] = saturation;
    return w;
  }

  /// Per-slot argmax; ties go to the lowest index.
  PathSpec argmax() const {
    PathSpec p;
    for (const auto& e : logits) {
      const auto v = e.field.values();
      std::size_t best = 0;
      for (std::size_t j = 1; j < v.size(); ++j) {
        if (v[j] > v[best]) best = j;
      }
      p.choices.push_back(best);
    }
    return p;
  }
};

namespace detail {

// Binds a model parameter onto the tape: trainable for a mutable model,
// frozen for a const one.
template <std::floating_point T, class Model>
Var<T> bind_parameter(Tape<T>& tape, Model& model, const std::string& name) {
  if constexpr (std::is_const_v<Model>) {
    return tape.constant(model.parameters().at(name));
  } else {
    return tape.param(model.parameters().at(name));
  }
}

template <std::floating_point T, class Model>
Var<T> conv_bias_relu(Tape<T>& tape, Model& model, const std::string& w, const std::string& b, Var<T> x) {
  return relu(add_channel_bias(conv(x, bind_parameter<T>(tape, model, w)), bind_parameter<T>(tape, model, b)));
}

template <std::floating_point T, class Model>
Var<T> run_candidate(Tape<T>& tape, Model& model, const SlotSpec& slot, std::size_t j, Var<T> x) {
  const Candidate& c = slot.candidates[j];
  const std::string p = candidate_prefix(slot, j);
  switch (c.kind) {
    case CandidateKind::Identity: return x;
    case CandidateKind::ResidualBlock: {
      const Var<T> h = conv_bias_relu(tape, model, p + "/w1", p + "/b1", x);
      const Var<T> y = add_channel_bias(conv(h, bind_parameter<T>(tape, model, p + "/w2")), bind_parameter<T>(tape, model, p + "/b2"));
      return relu(add(y, x));
    }
    default: return conv_bias_relu(tape, model, p + "/w", p + "/b", x);
  }
}

// Shared encoder-decoder walk; `slot_fn(slot_index, x)` evaluates one slot.
template <std::floating_point T, class Model, class SlotFn>
Var<T> walk(Tape<T>& tape, Model& model, Var<T> input, SlotFn&& slot_fn) {
  const SupernetConfig& cfg = model.config();
  const Shape& xs = input.shape();
  if (xs.size() != cfg.spatial_rank + 2) {
    throw std::invalid_argument("forward: input " + shape_string(xs) + " does not have spatial rank " +
                                std::to_string(cfg.spatial_rank));
  }
  if (xs[1] != cfg.in_channels) {
    throw std::invalid_argument("forward: input has " + std::to_string(xs[1]) + " channels, model expects " +
                                std::to_string(cfg.in_channels));
  }
  const std::size_t div = cfg.spatial_divisor();
  for (std::size_t a = 2; a < xs.size(); ++a) {
    if (xs[a] % div != 0) {
      throw std::invalid_argument("forward: spatial axis " + std::to_string(a - 2) + " extent " +
                                  std::to_string(xs[a]) + " not divisible by " + std::to_string(div));
    }
  }
  const auto& slots = model.slots();
  std::size_t s = 0;
  Var<T> x = slot_fn(s++, input);
  std::vector<Var<T>> skips;
  for (std::size_t l = 0; l + 1 < cfg.levels; ++l) {
    for (std::size_t i = 0; i < cfg.encoder[l].size(); ++i) x = slot_fn(s++, x);
    skips.push_back(x);
    x = downsample(x);
  }
  for (std::size_t i = 0; i < cfg.bottleneck.size(); ++i) x = slot_fn(s++, x);
  for (std::size_t l = cfg.levels - 1; l-- > 0;) {
    x = concat_channels(upsample(x), skips[l]);
    x = slot_fn(s++, x);
    for (std::size_t i = 0; i < cfg.decoder[l].post.size(); ++i) x = slot_fn(s++, x);
  }
  if (s != slots.size()) throw std::logic_error("forward: slot walk out of sync with layout");
  return add_channel_bias(conv(x, bind_parameter<T>(tape, model, "head/w")), bind_parameter<T>(tape, model, "head/b"));
}

}  // namespace detail

/// Per-voxel class logits along `path`. With a mutable model, parameters
/// that require_grad receive gradients on backward; only active-path
/// parameters are touched.
template <std::floating_point T, class Model>
  requires std::is_same_v<std::remove_const_t<Model>, SupernetModel<T>>
Var<T> forward(Tape<T>& tape, Model& model, const PathSpec& path, Var<T> input) {
  model.validate(path);
  return detail::walk<T>(tape, model, input, [&](std::size_t s, Var<T> x) {
    return detail::run_candidate<T>(tape, model, model.slots()[s], path.choices[s], x);
  });
}

/// Every slot outputs the softmax(alpha_slot)-weighted sum of all its
/// candidates. Gradients reach alpha (if its fields require_grad) and, for a
/// mutable model, the network parameters.
template <std::floating_point T, class Model>
  requires std::is_same_v<std::remove_const_t<Model>, SupernetModel<T>>
Var<T> forward_mixture(Tape<T>& tape, Model& model, PathWeights<T>& alphas, Var<T> input) {
  const auto& slots = model.slots();
  if (alphas.logits.size() != slots.size()) {
    throw std::invalid_argument("forward_mixture: " + std::to_string(alphas.logits.size()) + " logit vectors for " +
                                std::to_string(slots.size()) + " slots");
  }
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (alphas.logits.entries()[s].field.size() != slots[s].candidates.size()) {
      throw std::invalid_argument("forward_mixture: slot " + slots[s].id + " has " +
                                  std::to_string(slots[s].candidates.size()) + " candidates but " +
                                  std::to_string(alphas.logits.entries()[s].field.size()) + " logits");
    }
  }
  return detail::walk<T>(tape, model, input, [&](std::size_t s, Var<T> x) {
    std::vector<Var<T>> outs;
    for (std::size_t j = 0; j < slots[s].candidates.size(); ++j) {
      outs.push_back(detail::run_candidate<T>(tape, model, slots[s], j, x));
    }
    return mix<T>(outs, tape.param(alphas.logits.entries()[s].field));
  });
}

/// Inference along a path without recording gradients.
template <std::floating_point T>
Field<T> predict(const SupernetModel<T>& model, const PathSpec& path, const Field<T>& input) {
  Tape<T> tape(false);
  return forward(tape, model, path, tape.constant(input)).value();
}

/// Standalone network containing only the active candidates of `path`,
/// re-indexed so that its single path is the default path.
template <std::floating_point T>
SupernetModel<T> extract_subnetwork(const SupernetModel<T>& model, const PathSpec& path) {
  model.validate(path);
  SupernetConfig cfg = model.config();
  std::size_t s = 0;
  auto keep = [&](Menu& m) { m = Menu{m.at(path.choices[s++])}; };
  keep(cfg.stem);
  for (auto& lvl : cfg.encoder)
    for (auto& m : lvl) keep(m);
  for (auto& m : cfg.bottleneck) keep(m);
  for (std::size_t l = cfg.levels - 1; l-- > 0;) {
    keep(cfg.decoder[l].fusion);
    for (auto& m : cfg.decoder[l].post) keep(m);
  }
  SupernetModel<T> sub = SupernetModel<T>::build(cfg, 0);
  const auto& slots = model.slots();
  for (auto& e : sub.parameters()) {
    std::string source = e.name;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const std::string sub_prefix = slots[i].id + "/c0/";
      if (e.name.starts_with(sub_prefix)) {
        source = candidate_prefix(slots[i], path.choices[i]) + "/" + e.name.substr(sub_prefix.size());
        break;
      }
    }
    const auto src = model.parameters().at(source).values();
    std::copy(src.begin(), src.end(), e.field.values().begin());
  }
  return sub;
}

}  // namespace fedsn
