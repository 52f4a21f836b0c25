#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsn/field.hpp"
#include "fedsn/ops.hpp"
#include "fedsn/tape.hpp"

namespace fedsn {

/// Soft Dice loss 1 - (2 sum p g + s) / (sum p^2 + sum g^2 + s) over every
/// voxel of the batch. With s = 0 and both sums empty the prediction is taken
/// as a perfect match and the loss is 0.
template <std::floating_point T>
Var<T> dice_loss(Var<T> probs, Var<T> target, T smooth = T{0}) {
  detail::require_same_shape(probs, target, "dice_loss");
  if (smooth < T{0}) throw std::invalid_argument("dice_loss: smooth must be non-negative");
  const auto p = probs.value().values();
  const auto g = target.value().values();
  T inter{0}, pp{0}, gg{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * g[i];
    pp += p[i] * p[i];
    gg += g[i] * g[i];
  }
  const T num = T{2} * inter + smooth;
  const T den = pp + gg + smooth;
  const T loss = den > T{0} ? T{1} - num / den : T{0};
  const std::size_t ip = probs.id(), ig = target.id();
  return probs.tape()->record(Field<T>::scalar(loss), {ip, ig}, [=](Tape<T>& tp, std::size_t self) {
    if (!(den > T{0})) return;
    const T up = tp.grad_buffer(self)[0];
    const auto pv = tp.value(ip).values();
    const auto gv = tp.value(ig).values();
    const T inv = T{1} / (den * den);
    if (tp.needs_grad(ip)) {
      auto gp = tp.grad_buffer(ip);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] -= up * (T{2} * gv[i] * den - num * T{2} * pv[i]) * inv;
    }
    if (tp.needs_grad(ig)) {
      auto gt = tp.grad_buffer(ig);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= up * (T{2} * pv[i] * den - num * T{2} * gv[i]) * inv;
    }
  });
}

template <std::floating_point T>
Var<T> dice_loss(Var<T> probs, const Field<T>& target, T smooth = T{0}) {
  return dice_loss(probs, probs.tape()->constant(target), smooth);
}

/// Mean over voxels of -log softmax(logits)[target class]. `labels` has one
/// channel holding class indices.
template <std::floating_point T>
Var<T> cross_entropy(Var<T> logits, const Field<T>& labels) {
  const Shape& ls = logits.shape();
  detail::require_spatial(ls, "cross_entropy");
  if (ls[1] < 2) throw std::invalid_argument("cross_entropy: logits need at least 2 class channels");
  Shape expect = ls;
  expect[1] = 1;
  if (labels.shape() != expect) {
    throw std::invalid_argument("cross_entropy: labels shape " + shape_string(labels.shape()) + " expected " +
                                shape_string(expect));
  }
  const std::size_t batch = ls[0], ch = ls[1], plane = logits.value().plane_size();
  std::vector<std::size_t> cls(batch * plane);
  for (std::size_t i = 0; i < cls.size(); ++i) {
    const T v = labels[i];
    const auto c = static_cast<long>(v);
    if (static_cast<T>(c) != v || c < 0 || static_cast<std::size_t>(c) >= ch) {
      throw std::invalid_argument("cross_entropy: target class " + std::to_string(v) + " at voxel " +
                                  std::to_string(i) + " outside [0, " + std::to_string(ch) + ")");
    }
    cls[i] = static_cast<std::size_t>(c);
  }
  const T* x = logits.value().data();
  T total{0};
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = n * ch * plane + p;
      T top = x[base];
      for (std::size_t c = 1; c < ch; ++c) top = std::max(top, x[base + c * plane]);
      T z{0};
      for (std::size_t c = 0; c < ch; ++c) z += std::exp(x[base + c * plane] - top);
      total += top + std::log(z) - x[base + cls[n * plane + p] * plane];
    }
  const T count = static_cast<T>(batch * plane);
  const std::size_t il = logits.id();
  return logits.tape()->record(
      Field<T>::scalar(total / count), {il}, [=, cls = std::move(cls)](Tape<T>& tp, std::size_t self) {
        const T up = tp.grad_buffer(self)[0] / count;
        const T* xv = tp.value(il).data();
        T* gx = tp.grad_buffer(il).data();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = n * ch * plane + p;
            T top = xv[base];
            for (std::size_t c = 1; c < ch; ++c) top = std::max(top, xv[base + c * plane]);
            T z{0};
            for (std::size_t c = 0; c < ch; ++c) z += std::exp(xv[base + c * plane] - top);
            for (std::size_t c = 0; c < ch; ++c) {
              const T s = std::exp(xv[base + c * plane] - top) / z;
              gx[base + c * plane] += up * (s - (c == cls[n * plane + p] ? T{1} : T{0}));
            }
          }
      });
}

template <std::floating_point T>
struct LossOptions {
  T smooth = T(1e-5);
  bool dice_only = false;
};

/// Foreground (class 1) softmax probability of two-or-more-class logits.
template <std::floating_point T>
Var<T> foreground_probability(Var<T> logits) {
  return slice_channels(channel_softmax(logits), 1, 1);
}

/// Dice on the foreground probability plus cross-entropy, unit weights.
/// `labels` holds class indices in one channel; for the binary task it is the
/// foreground mask itself.
template <std::floating_point T>
Var<T> combined_loss(Var<T> logits, const Field<T>& labels, LossOptions<T> opts = {}) {
  Tape<T>& t = *logits.tape();
  Field<T> fg_mask(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) fg_mask[i] = labels[i] == T{1} ? T{1} : T{0};
  const Var<T> dice = dice_loss(foreground_probability(logits), t.constant(std::move(fg_mask)), opts.smooth);
  if (opts.dice_only) return dice;
  return add(dice, cross_entropy(logits, labels));
}

/// Binary foreground prediction: class 1 wins the per-voxel argmax.
template <std::floating_point T>
Field<T> predict_labels(const Field<T>& logits) {
  const Shape& ls = logits.shape();
  detail::require_spatial(ls, "predict_labels");
  const std::size_t batch = ls[0], ch = ls[1], plane = logits.plane_size();
  Shape os = ls;
  os[1] = 1;
  Field<T> out(os);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = n * ch * plane + p;
      std::size_t best = 0;
      for (std::size_t c = 1; c < ch; ++c) {
        if (logits[base + c * plane] > logits[base + best * plane]) best = c;
      }
      out[n * plane + p] = best == 1 ? T{1} : T{0};
    }
  return out;
}

/// 2|P and G| / (|P| + |G|) on binary masks; 1 when both are empty.
template <std::floating_point T>
double dice_score(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("dice_score: size mismatch");
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != T{0};
    const bool g = target[i] != T{0};
    np += p;
    ng += g;
    inter += p && g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

template <std::floating_point T>
double dice_score(const Field<T>& pred, const Field<T>& target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("dice_score: shape mismatch " + shape_string(pred.shape()) + " vs " +
                                shape_string(target.shape()));
  }
  return dice_score<T>(pred.values(), target.values());
}

/// Dice of each batch item of single-channel masks.
template <std::floating_point T>
std::vector<double> dice_scores_per_item(const Field<T>& pred, const Field<T>& target) {
  if (pred.shape() != target.shape()) throw std::invalid_argument("dice_scores_per_item: shape mismatch");
  const std::size_t n = pred.batch();
  const std::size_t per = pred.size() / n;
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(dice_score<T>(pred.values().subspan(i * per, per), target.values().subspan(i * per, per)));
  }
  return out;
}

}  // namespace fedsn
