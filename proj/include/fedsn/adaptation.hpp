#pragma once

#include <algorithm>
#include <future>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsn/evaluation.hpp"
#include "fedsn/optim.hpp"
#include "fedsn/supernet.hpp"
#include "fedsn/synth_data.hpp"
#include <nlohmann/json.hpp>

namespace fedsn {

struct AdaptStep {
  std::size_t step = 0;
  double loss = 0;
  PathSpec argmax;
};

struct PathScore {
  PathSpec path;
  double loss = 0;
  double dice = 0;
};

/// Outcome of a path search on a client's validation split.
///
/// `searched` is what the search itself produced (argmax of the path weights,
/// or the exhaustive optimum); `chosen` applies the keep-better rule: the
/// searched path is used only if its validation Dice beats the default path.
struct AdaptationResult {
  std::string method;
  PathSpec searched;
  PathSpec chosen;
  double searched_loss = 0, searched_dice = 0;
  double default_loss = 0, default_dice = 0;
  double chosen_dice = 0;
  bool kept_default = true;
  std::vector<AdaptStep> trajectory;   // gradient search
  std::vector<PathScore> evaluated;    // exhaustive search, lexicographic order
  std::vector<std::vector<double>> final_logits;
};

inline nlohmann::json to_json(const AdaptationResult& r) {
  nlohmann::json j{{"method", r.method},
                   {"searched_path", r.searched.choices},
                   {"chosen_path", r.chosen.choices},
                   {"searched_loss", r.searched_loss},
                   {"searched_dice", r.searched_dice},
                   {"default_loss", r.default_loss},
                   {"default_dice", r.default_dice},
                   {"chosen_dice", r.chosen_dice},
                   {"kept_default", r.kept_default}};
  if (!r.final_logits.empty()) j["final_logits"] = r.final_logits;
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& s : r.trajectory) traj.push_back({{"step", s.step}, {"loss", s.loss}, {"argmax", s.argmax.choices}});
  j["trajectory"] = traj;
  if (!r.evaluated.empty()) {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& p : r.evaluated) ev.push_back({{"path", p.path.choices}, {"loss", p.loss}, {"dice", p.dice}});
    j["evaluated"] = ev;
  }
  return j;
}

template <std::floating_point T>
struct AdaptConfig {
  std::size_t epochs = 1;
  std::size_t images_per_step = 1;
  OptimizerConfig optimizer = OptimizerConfig::adam(1e-3);
  LossOptions<T> loss;
  std::uint64_t seed = 0;  // order in which validation cases are visited
};

namespace detail {

template <std::floating_point T>
void finish(AdaptationResult& r, const SupernetModel<T>& model, const std::vector<Case<T>>& cases,
            const std::vector<std::size_t>& validation, LossOptions<T> loss) {
  const Evaluation d = evaluate(model, model.default_path(), cases, validation, loss);
  const Evaluation s = r.searched == model.default_path() ? d : evaluate(model, r.searched, cases, validation, loss);
  r.default_loss = d.loss;
  r.default_dice = d.mean_dice;
  r.searched_loss = s.loss;
  r.searched_dice = s.mean_dice;
  r.kept_default = !(s.mean_dice > d.mean_dice);
  r.chosen = r.kept_default ? model.default_path() : r.searched;
  r.chosen_dice = r.kept_default ? d.mean_dice : s.mean_dice;
}

}  // namespace detail

/// Optimises per-slot path logits with Adam through the mixture forward for
/// `epochs` passes over the validation cases, network weights frozen, then
/// discretises by per-slot argmax.
template <std::floating_point T>
AdaptationResult adapt_gradient(const SupernetModel<T>& model, const std::vector<Case<T>>& cases,
                                const std::vector<std::size_t>& validation, const AdaptConfig<T>& config = {}) {
  if (validation.empty()) throw std::invalid_argument("adapt_gradient: empty validation split");
  if (config.images_per_step == 0) throw std::invalid_argument("adapt_gradient: images_per_step must be >= 1");
  AdaptationResult r;
  r.method = "gradient";
  PathWeights<T> alphas = PathWeights<T>::uniform(model);
  alphas.logits.set_requires_grad(true);
  Optimizer<T> opt(config.optimizer);
  Rng rng(derive_seed(config.seed, "adapt"));
  std::vector<std::size_t> order = validation;
  std::sort(order.begin(), order.end());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.images_per_step) {
      const std::size_t end = std::min(order.size(), start + config.images_per_step);
      const Batch<T> batch =
          stack_cases(cases, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                      order.begin() + static_cast<std::ptrdiff_t>(end)));
      alphas.logits.clear_grad();
      double loss = 0;
      {
        Tape<T> tape;
        const Var<T> l =
            combined_loss(forward_mixture(tape, model, alphas, tape.constant(batch.images)), batch.masks, config.loss);
        loss = static_cast<double>(l.value()[0]);
        tape.backward(l);
      }
      opt.step(alphas.logits);
      r.trajectory.push_back({++step, loss, alphas.argmax()});
    }
  }
  r.searched = alphas.argmax();
  for (const auto& e : alphas.logits) {
    r.final_logits.emplace_back(e.field.values().begin(), e.field.values().end());
  }
  detail::finish(r, model, cases, validation, config.loss);
  return r;
}

/// Scores every path on the validation split and returns the one with the
/// lowest combined loss; ties go to the lexicographically smallest path.
template <std::floating_point T>
AdaptationResult adapt_exhaustive(const SupernetModel<T>& model, const std::vector<Case<T>>& cases,
                                  const std::vector<std::size_t>& validation, std::uint64_t budget = 4096,
                                  LossOptions<T> loss = {}, std::size_t threads = 1) {
  if (validation.empty()) throw std::invalid_argument("adapt_exhaustive: empty validation split");
  const std::uint64_t n = model.path_count();
  if (n > budget) {
    throw std::invalid_argument("adapt_exhaustive: path count " + std::to_string(n) + " exceeds budget " +
                                std::to_string(budget));
  }
  AdaptationResult r;
  r.method = "exhaustive";
  r.evaluated.resize(n);
  auto score = [&](std::uint64_t lo, std::uint64_t hi) {
    for (std::uint64_t i = lo; i < hi; ++i) {
      const PathSpec p = model.path_from_index(i);
      const Evaluation e = evaluate(model, p, cases, validation, loss);
      r.evaluated[i] = {p, e.loss, e.mean_dice};
    }
  };
  threads = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (threads == 1) {
    score(0, n);
  } else {
    std::vector<std::future<void>> jobs;
    const std::uint64_t chunk = (n + threads - 1) / threads;
    for (std::uint64_t lo = 0; lo < n; lo += chunk) jobs.push_back(std::async(std::launch::async, score, lo, std::min(n, lo + chunk)));
    for (auto& j : jobs) j.get();
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.evaluated.size(); ++i) {
    if (r.evaluated[i].loss < r.evaluated[best].loss) best = i;
  }
  r.searched = r.evaluated[best].path;
  detail::finish(r, model, cases, validation, loss);
  return r;
}

}  // namespace fedsn
