#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "fedsn/ops.hpp"
#include "test_util.hpp"

namespace fedsn::testing {

/// Random conv / bias / ReLU / pool / upsample / concat graph with a scalar
/// weighted-sum loss. Leaves are owned here so finite differences can
/// perturb them between evaluations.
class RandomGraph {
 public:
  explicit RandomGraph(std::uint64_t seed) {
    Rng rng(seed);
    auto pick = [&](std::initializer_list<std::size_t> v) {
      std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
      return *(v.begin() + d(rng));
    };
    rank_ = pick({2, 3});
    const std::size_t batch = pick({1, 2});
    const std::size_t cin = pick({1, 2, 3});
    const std::size_t mid = pick({1, 2, 3});
    const std::size_t cout = pick({1, 2});
    Shape xs{batch, cin};
    for (std::size_t a = 0; a < rank_; ++a) xs.push_back(rank_ == 2 ? pick({4, 6}) : 4);

    std::vector<std::size_t> k1(rank_), k2(rank_);
    const std::size_t kind = pick({0, 1, 2});  // full, single axis, all-but-one axis
    const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, rank_ - 1)(rng);
    const std::size_t ksize = pick({1, 3, 5});
    for (std::size_t a = 0; a < rank_; ++a) {
      k1[a] = kind == 0 ? ksize : (kind == 1 ? (a == axis ? 3 : 1) : (a == axis ? 1 : 3));
      k2[a] = 3;
    }
    Shape w1s{mid, cin}, w2s{cout, mid + cin};
    w1s.insert(w1s.end(), k1.begin(), k1.end());
    w2s.insert(w2s.end(), k2.begin(), k2.end());

    x = random_field(xs, rng);
    w1 = random_field(w1s, rng, -0.7, 0.7);
    b1 = random_field(Shape{mid}, rng, -0.3, 0.3);
    w2 = random_field(w2s, rng, -0.5, 0.5);
    Shape os = xs;
    os[1] = cout;
    weights = random_field(os, rng);
    for (Field<double>* f : leaves()) f->set_requires_grad(true);
  }

  std::vector<Field<double>*> leaves() { return {&x, &w1, &b1, &w2}; }
  std::vector<std::string> leaf_names() const { return {"input", "kernel1", "bias1", "kernel2"}; }

  struct Eval {
    double loss;
    double margin;  // distance of the nearest ReLU / max-pool decision to a tie
  };

  Eval evaluate(Tape<double>& tape) {
    const Var<double> vx = tape.param(x);
    const Var<double> pre = add_channel_bias(conv(vx, tape.param(w1)), tape.param(b1));
    const Var<double> h = relu(pre);
    const Var<double> pooled = downsample(h);
    const Var<double> up = upsample(pooled);
    const Var<double> cat = concat_channels(up, vx);
    const Var<double> out = conv(cat, tape.param(w2));
    const Var<double> loss = sum(mul(out, tape.constant(weights)));
    loss_ = loss;

    double margin = std::numeric_limits<double>::infinity();
    for (double v : pre.value().values()) margin = std::min(margin, std::abs(v));
    margin = std::min(margin, pool_margin(h.value()));
    return {loss.value()[0], margin};
  }

  Var<double> loss_var() const { return loss_; }
  std::size_t rank() const { return rank_; }

  Field<double> x, w1, b1, w2, weights;

 private:
  // Smallest gap between the largest and second largest entry of any
  // pooling window whose maximum is positive (zeros come from ReLU ties,
  // which have zero gradient either way).
  double pool_margin(const Field<double>& h) const {
    const auto& s = h.shape();
    const std::size_t planes = s[0] * s[1];
    const std::size_t z = rank_ == 3 ? s[2] : 1, y = s[s.size() - 2], xx = s[s.size() - 1];
    const std::size_t wz = rank_ == 3 ? 2 : 1;
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t a = 0; a < z; a += wz)
        for (std::size_t b = 0; b < y; b += 2)
          for (std::size_t c = 0; c < xx; c += 2) {
            std::vector<double> w;
            for (std::size_t i = 0; i < wz; ++i)
              for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t k = 0; k < 2; ++k) w.push_back(h[((p * z + a + i) * y + b + j) * xx + c + k]);
            std::sort(w.rbegin(), w.rend());
            if (w[0] > 0) m = std::min(m, w[0] - w[1]);
          }
    return m;
  }

  std::size_t rank_ = 2;
  Var<double> loss_;
};

}  // namespace fedsn::testing
