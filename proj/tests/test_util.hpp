#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <random>
#include <vector>

#include "fedsn/field.hpp"
#include "fedsn/rng.hpp"

namespace fedsn::testing {

inline Field<double> random_field(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Field<double> f(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : f.values()) v = d(rng);
  return f;
}

/// Central finite differences of `loss` with respect to every entry of
/// `field`, which `loss` must read on each call.
inline std::vector<double> numeric_gradient(Field<double>& field, const std::function<double()>& loss,
                                            double step = 1e-4) {
  std::vector<double> g(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double keep = field[i];
    field[i] = keep + step;
    const double up = loss();
    field[i] = keep - step;
    const double down = loss();
    field[i] = keep;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

/// |a - b|_2 / max(|a|_2, |b|_2), 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Finite differences at `step` and `step / 2`; empty when they disagree,
/// which happens when a ReLU or max-pool switch lies inside the stencil.
inline std::optional<std::vector<double>> smooth_numeric_gradient(Field<double>& field,
                                                                  const std::function<double()>& loss,
                                                                  double step = 1e-4) {
  auto g = numeric_gradient(field, loss, step);
  const auto half = numeric_gradient(field, loss, step / 2);
  if (relative_error(g, half) > 1e-6) return std::nullopt;
  return g;
}

}  // namespace fedsn::testing
