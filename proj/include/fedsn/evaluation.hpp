#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fedsn/objectives.hpp"
#include "fedsn/supernet.hpp"
#include "fedsn/synth_data.hpp"

namespace fedsn {

/// Metrics of one network path on a set of full images.
struct Evaluation {
  double loss = 0;       // combined loss over the whole set
  double mean_dice = 0;  // mean of per-case Dice
  std::vector<std::size_t> case_ids;
  std::vector<double> case_dice;
};

/// Scores `path` on the listed cases. Indices are sorted first so the result
/// does not depend on the order they are given in.
template <std::floating_point T>
Evaluation evaluate(const SupernetModel<T>& model, const PathSpec& path, const std::vector<Case<T>>& cases,
                    std::vector<std::size_t> indices, LossOptions<T> loss = {}) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty case list");
  std::sort(indices.begin(), indices.end());
  const Batch<T> batch = stack_cases(cases, indices);
  Tape<T> tape(false);
  const Var<T> logits = forward(tape, model, path, tape.constant(batch.images));
  Evaluation e;
  e.loss = static_cast<double>(combined_loss(logits, batch.masks, loss).value()[0]);
  e.case_dice = dice_scores_per_item(predict_labels(logits.value()), batch.masks);
  for (std::size_t i : indices) e.case_ids.push_back(cases[i].case_id);
  e.mean_dice = std::accumulate(e.case_dice.begin(), e.case_dice.end(), 0.0) / static_cast<double>(e.case_dice.size());
  return e;
}

}  // namespace fedsn
