#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsn/field.hpp"
#include "fedsn/tape.hpp"

namespace fedsn {

/// Set of spatial axes a convolution acts along.
class AxesMask {
 public:
  constexpr AxesMask() = default;
  static constexpr AxesMask all(std::size_t rank) { return AxesMask((1u << rank) - 1u); }
  static constexpr AxesMask only(std::size_t axis) { return AxesMask(1u << axis); }
  static constexpr AxesMask all_but(std::size_t rank, std::size_t axis) {
    return AxesMask(((1u << rank) - 1u) & ~(1u << axis));
  }
  static constexpr AxesMask from_bits(std::uint32_t bits) { return AxesMask(bits); }
  constexpr bool active(std::size_t axis) const { return (bits_ >> axis) & 1u; }
  constexpr std::uint32_t bits() const { return bits_; }
  constexpr bool operator==(const AxesMask&) const = default;

 private:
  constexpr explicit AxesMask(std::uint32_t bits) : bits_(bits) {}
  std::uint32_t bits_ = 0;
};

namespace detail {

// 2D grids are handled as 3D grids of depth 1.
struct Extent3 {
  std::size_t z = 1, y = 1, x = 1;
  std::size_t volume() const { return z * y * x; }
};

inline Extent3 extent3(const Shape& shape) {
  Extent3 e;
  if (shape.size() == 4) {
    e.y = shape[2];
    e.x = shape[3];
  } else if (shape.size() == 5) {
    e.z = shape[2];
    e.y = shape[3];
    e.x = shape[4];
  } else {
    throw std::invalid_argument("expected a spatial field of rank 2 or 3, got shape " + shape_string(shape));
  }
  return e;
}

inline void require_spatial(const Shape& s, const char* op) {
  if (s.size() != 4 && s.size() != 5) {
    throw std::invalid_argument(std::string(op) + ": expected (batch, channels, d1..dD) with D in {2,3}, got " +
                                shape_string(s));
  }
}

inline std::size_t lo(long d) { return d < 0 ? static_cast<std::size_t>(-d) : 0; }
inline std::size_t hi(std::size_t n, long d) {
  return d > 0 ? (static_cast<std::size_t>(d) >= n ? 0 : n - static_cast<std::size_t>(d)) : n;
}

// dst[p] += w * src[p + d] over every p with p + d inside the grid.
template <class T>
void shifted_axpy(T w, const T* src, T* dst, Extent3 g, long dz, long dy, long dx) {
  const std::size_t z0 = lo(dz), z1 = hi(g.z, dz);
  const std::size_t y0 = lo(dy), y1 = hi(g.y, dy);
  const std::size_t x0 = lo(dx), x1 = hi(g.x, dx);
  if (x0 >= x1) return;
  for (std::size_t z = z0; z < z1; ++z) {
    for (std::size_t y = y0; y < y1; ++y) {
      T* out = dst + (z * g.y + y) * g.x;
      const T* in = src + ((z + dz) * g.y + (y + dy)) * g.x + dx;
      for (std::size_t x = x0; x < x1; ++x) out[x] += w * in[x];
    }
  }
}

// sum_p a[p] * b[p + d].
template <class T>
T shifted_dot(const T* a, const T* b, Extent3 g, long dz, long dy, long dx) {
  const std::size_t z0 = lo(dz), z1 = hi(g.z, dz);
  const std::size_t y0 = lo(dy), y1 = hi(g.y, dy);
  const std::size_t x0 = lo(dx), x1 = hi(g.x, dx);
  T acc{0};
  if (x0 >= x1) return acc;
  for (std::size_t z = z0; z < z1; ++z) {
    for (std::size_t y = y0; y < y1; ++y) {
      const T* pa = a + (z * g.y + y) * g.x;
      const T* pb = b + ((z + dz) * g.y + (y + dy)) * g.x + dx;
      T row{0};
      for (std::size_t x = x0; x < x1; ++x) row += pa[x] * pb[x];
      acc += row;
    }
  }
  return acc;
}

template <std::floating_point T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
}

template <std::floating_point T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  Tape<T>& t = *a.tape();
  Field<T> out(a.shape());
  const auto va = a.value().values();
  const auto vb = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, std::size_t self) {
    auto g = tp.grad_buffer(self);
    for (std::size_t in : {ia, ib}) {
      if (!tp.needs_grad(in)) continue;
      auto gi = tp.grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  Tape<T>& t = *a.tape();
  Field<T> out(a.shape());
  const auto va = a.value().values();
  const auto vb = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, std::size_t self) {
    auto g = tp.grad_buffer(self);
    if (tp.needs_grad(ia)) {
      auto gi = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      auto gi = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
    }
  });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  Tape<T>& t = *a.tape();
  Field<T> out(a.shape());
  const auto va = a.value().values();
  const auto vb = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, std::size_t self) {
    auto g = tp.grad_buffer(self);
    const auto va = tp.value(ia).values();
    const auto vb = tp.value(ib).values();
    if (tp.needs_grad(ia)) {
      auto gi = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * vb[i];
    }
    if (tp.needs_grad(ib)) {
      auto gi = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * va[i];
    }
  });
}

template <std::floating_point T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& t = *a.tape();
  Field<T> out(a.shape());
  const auto va = a.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * va[i];
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, s](Tape<T>& tp, std::size_t self) {
    auto g = tp.grad_buffer(self);
    auto gi = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += s * g[i];
  });
}

template <std::floating_point T>
Var<T> relu(Var<T> a) {
  Tape<T>& t = *a.tape();
  Field<T> out(a.shape());
  const auto va = a.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] > T{0} ? va[i] : T{0};
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape<T>& tp, std::size_t self) {
    auto g = tp.grad_buffer(self);
    const auto va = tp.value(ia).values();
    auto gi = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (va[i] > T{0}) gi[i] += g[i];
    }
  });
}

template <std::floating_point T>
Var<T> sigmoid(Var<T> a) {
  Tape<T>& t = *a.tape();
  Field<T> out(a.shape());
  const auto va = a.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T{1} / (T{1} + std::exp(-va[i]));
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape<T>& tp, std::size_t self) {
    auto g = tp.grad_buffer(self);
    const auto s = tp.value(self).values();
    auto gi = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * s[i] * (T{1} - s[i]);
  });
}

template <std::floating_point T>
Var<T> sum(Var<T> a) {
  Tape<T>& t = *a.tape();
  T acc{0};
  for (T v : a.value().values()) acc += v;
  const std::size_t ia = a.id();
  return t.record(Field<T>::scalar(acc), {ia}, [ia](Tape<T>& tp, std::size_t self) {
    const T g = tp.grad_buffer(self)[0];
    for (T& gi : tp.grad_buffer(ia)) gi += g;
  });
}

template <std::floating_point T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty field");
  return scale(sum(a), T{1} / static_cast<T>(n));
}

// ---------------------------------------------------------------------------
// Convolution

/// Stride-1, zero-filled same-padding convolution.
///
/// `kernel` has shape (out_channels, in_channels, k1..kD). Along every active
/// axis the extent must be odd; along masked-out axes it must be 1, which is
/// how axis-restricted and planar convolutions are expressed.
template <std::floating_point T>
Var<T> conv(Var<T> input, Var<T> kernel, AxesMask mask) {
  detail::require_same_tape(input, kernel);
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  detail::require_spatial(xs, "conv");
  const std::size_t rank = xs.size() - 2;
  if (ks.size() != xs.size()) {
    throw std::invalid_argument("conv: kernel " + shape_string(ks) + " does not match spatial rank " +
                                std::to_string(rank) + " of input " + shape_string(xs));
  }
  if (ks[1] != xs[1]) {
    throw std::invalid_argument("conv: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                                std::to_string(xs[1]));
  }
  for (std::size_t a = 0; a < rank; ++a) {
    const std::size_t k = ks[2 + a];
    if (mask.active(a) && k % 2 == 0) {
      throw std::invalid_argument("conv: kernel extent " + std::to_string(k) + " along active axis " +
                                  std::to_string(a) + " must be odd");
    }
    if (!mask.active(a) && k != 1) {
      throw std::invalid_argument("conv: kernel extent " + std::to_string(k) + " along masked-out axis " +
                                  std::to_string(a) + " must be 1");
    }
  }
  for (std::size_t a = rank; a < 32; ++a) {
    if (mask.active(a)) throw std::invalid_argument("conv: axis " + std::to_string(a) + " exceeds spatial rank");
  }

  const std::size_t batch = xs[0], cin = xs[1], cout = ks[0];
  const detail::Extent3 g = detail::extent3(xs);
  const detail::Extent3 k = detail::extent3(ks);
  const std::size_t plane = g.volume(), taps = k.volume();

  Shape os = xs;
  os[1] = cout;
  Field<T> out(os);
  const T* x = input.value().data();
  const T* w = kernel.value().data();
  T* y = out.data();
  const long cz = static_cast<long>(k.z / 2), cy = static_cast<long>(k.y / 2), cx = static_cast<long>(k.x / 2);

  auto for_taps = [=](auto&& f) {
    std::size_t tap = 0;
    for (std::size_t a = 0; a < k.z; ++a)
      for (std::size_t b = 0; b < k.y; ++b)
        for (std::size_t c = 0; c < k.x; ++c, ++tap)
          f(tap, static_cast<long>(a) - cz, static_cast<long>(b) - cy, static_cast<long>(c) - cx);
  };

  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < cout; ++co) {
      T* dst = y + (n * cout + co) * plane;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* src = x + (n * cin + ci) * plane;
        const T* wk = w + (co * cin + ci) * taps;
        for_taps([&](std::size_t tap, long dz, long dy, long dx) {
          detail::shifted_axpy(wk[tap], src, dst, g, dz, dy, dx);
        });
      }
    }

  const std::size_t ix = input.id(), ik = kernel.id();
  return input.tape()->record(
      std::move(out), {ix, ik}, [=](Tape<T>& tp, std::size_t self) {
        const T* gy = tp.grad_buffer(self).data();
        const T* xv = tp.value(ix).data();
        const T* wv = tp.value(ik).data();
        if (tp.needs_grad(ix)) {
          T* gx = tp.grad_buffer(ix).data();
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t co = 0; co < cout; ++co) {
              const T* src = gy + (n * cout + co) * plane;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                T* dst = gx + (n * cin + ci) * plane;
                const T* wk = wv + (co * cin + ci) * taps;
                for_taps([&](std::size_t tap, long dz, long dy, long dx) {
                  detail::shifted_axpy(wk[tap], src, dst, g, -dz, -dy, -dx);
                });
              }
            }
        }
        if (tp.needs_grad(ik)) {
          T* gw = tp.grad_buffer(ik).data();
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t co = 0; co < cout; ++co) {
              const T* go = gy + (n * cout + co) * plane;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* src = xv + (n * cin + ci) * plane;
                T* gk = gw + (co * cin + ci) * taps;
                for_taps([&](std::size_t tap, long dz, long dy, long dx) {
                  gk[tap] += detail::shifted_dot(go, src, g, dz, dy, dx);
                });
              }
            }
        }
      });
}

/// Convolution along every axis whose kernel extent exceeds 1.
template <std::floating_point T>
Var<T> conv(Var<T> input, Var<T> kernel) {
  const Shape& ks = kernel.shape();
  detail::require_spatial(ks, "conv");
  std::uint32_t bits = 0;
  for (std::size_t a = 0; a + 2 < ks.size(); ++a) {
    if (ks[2 + a] > 1) bits |= 1u << a;
  }
  return conv(input, kernel, AxesMask::from_bits(bits));
}

/// Adds bias[c] to every voxel of channel c.
template <std::floating_point T>
Var<T> add_channel_bias(Var<T> input, Var<T> bias) {
  detail::require_same_tape(input, bias);
  const Shape& xs = input.shape();
  detail::require_spatial(xs, "add_channel_bias");
  if (bias.value().size() != xs[1]) {
    throw std::invalid_argument("add_channel_bias: bias has " + std::to_string(bias.value().size()) +
                                " entries for " + std::to_string(xs[1]) + " channels");
  }
  const std::size_t batch = xs[0], ch = xs[1], plane = input.value().plane_size();
  Field<T> out(xs);
  const T* x = input.value().data();
  const T* b = bias.value().data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t off = (n * ch + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[off + p] = x[off + p] + b[c];
    }
  const std::size_t ix = input.id(), ib = bias.id();
  return input.tape()->record(std::move(out), {ix, ib}, [=](Tape<T>& tp, std::size_t self) {
    const auto g = tp.grad_buffer(self);
    if (tp.needs_grad(ix)) {
      auto gx = tp.grad_buffer(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.grad_buffer(ib);
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t off = (n * ch + c) * plane;
          T acc{0};
          for (std::size_t p = 0; p < plane; ++p) acc += g[off + p];
          gb[c] += acc;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Resampling

/// Halves every spatial dimension with a 2^D-window max.
template <std::floating_point T>
Var<T> downsample(Var<T> input) {
  const Shape& xs = input.shape();
  detail::require_spatial(xs, "downsample");
  for (std::size_t a = 2; a < xs.size(); ++a) {
    if (xs[a] % 2 != 0) {
      throw std::invalid_argument("downsample: spatial axis " + std::to_string(a - 2) + " has odd extent " +
                                  std::to_string(xs[a]));
    }
  }
  const bool deep = xs.size() == 5;
  const detail::Extent3 gi = detail::extent3(xs);
  Shape os = xs;
  for (std::size_t a = 2; a < os.size(); ++a) os[a] /= 2;
  const detail::Extent3 go = detail::extent3(os);
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t wz = deep ? 2 : 1;

  Field<T> out(os);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* x = input.value().data();
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t base = pl * gi.volume();
    for (std::size_t z = 0; z < go.z; ++z)
      for (std::size_t y = 0; y < go.y; ++y)
        for (std::size_t xx = 0; xx < go.x; ++xx, ++o) {
          std::size_t best = base + ((z * wz) * gi.y + 2 * y) * gi.x + 2 * xx;
          for (std::size_t a = 0; a < wz; ++a)
            for (std::size_t b = 0; b < 2; ++b)
              for (std::size_t c = 0; c < 2; ++c) {
                const std::size_t idx = base + ((z * wz + a) * gi.y + 2 * y + b) * gi.x + 2 * xx + c;
                if (x[idx] > x[best]) best = idx;
              }
          out[o] = x[best];
          (*argmax)[o] = best;
        }
  }
  const std::size_t ix = input.id();
  return input.tape()->record(std::move(out), {ix}, [ix, argmax](Tape<T>& tp, std::size_t self) {
    const auto g = tp.grad_buffer(self);
    auto gx = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

/// Doubles every spatial dimension by nearest-neighbour replication.
template <std::floating_point T>
Var<T> upsample(Var<T> input) {
  const Shape& xs = input.shape();
  detail::require_spatial(xs, "upsample");
  const bool deep = xs.size() == 5;
  const detail::Extent3 gi = detail::extent3(xs);
  Shape os = xs;
  for (std::size_t a = 2; a < os.size(); ++a) os[a] *= 2;
  const detail::Extent3 go = detail::extent3(os);
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t sz = deep ? 2 : 1;

  auto source = [=](std::size_t pl, std::size_t z, std::size_t y, std::size_t x) {
    return pl * gi.volume() + ((z / sz) * gi.y + y / 2) * gi.x + x / 2;
  };
  Field<T> out(os);
  const T* x = input.value().data();
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t z = 0; z < go.z; ++z)
      for (std::size_t y = 0; y < go.y; ++y)
        for (std::size_t xx = 0; xx < go.x; ++xx, ++o) out[o] = x[source(pl, z, y, xx)];

  const std::size_t ix = input.id();
  return input.tape()->record(std::move(out), {ix}, [=](Tape<T>& tp, std::size_t self) {
    const auto g = tp.grad_buffer(self);
    auto gx = tp.grad_buffer(ix);
    std::size_t o = 0;
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t z = 0; z < go.z; ++z)
        for (std::size_t y = 0; y < go.y; ++y)
          for (std::size_t xx = 0; xx < go.x; ++xx, ++o) gx[source(pl, z, y, xx)] += g[o];
  });
}

// ---------------------------------------------------------------------------
// Channel manipulation

/// Channels of `a` followed by channels of `b`.
template <std::floating_point T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  detail::require_spatial(as, "concat_channels");
  detail::require_spatial(bs, "concat_channels");
  if (as.size() != bs.size()) {
    throw std::invalid_argument("concat_channels: spatial rank mismatch " + shape_string(as) + " vs " +
                                shape_string(bs));
  }
  if (as[0] != bs[0]) throw std::invalid_argument("concat_channels: batch mismatch");
  for (std::size_t i = 2; i < as.size(); ++i) {
    if (as[i] != bs[i]) {
      throw std::invalid_argument("concat_channels: spatial axis " + std::to_string(i - 2) + " mismatch " +
                                  shape_string(as) + " vs " + shape_string(bs));
    }
  }
  const std::size_t batch = as[0], ca = as[1], cb = bs[1];
  const std::size_t plane = a.value().plane_size();
  Shape os = as;
  os[1] = ca + cb;
  Field<T> out(os);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(av + n * ca * plane, ca * plane, out.data() + n * (ca + cb) * plane);
    std::copy_n(bv + n * cb * plane, cb * plane, out.data() + (n * (ca + cb) + ca) * plane);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [=](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_buffer(self).data();
    if (tp.needs_grad(ia)) {
      T* ga = tp.grad_buffer(ia).data();
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = g + n * (ca + cb) * plane;
        T* dst = ga + n * ca * plane;
        for (std::size_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
      }
    }
    if (tp.needs_grad(ib)) {
      T* gb = tp.grad_buffer(ib).data();
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = g + (n * (ca + cb) + ca) * plane;
        T* dst = gb + n * cb * plane;
        for (std::size_t i = 0; i < cb * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

/// Channels [begin, begin + count).
template <std::floating_point T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  const Shape& xs = x.shape();
  detail::require_spatial(xs, "slice_channels");
  if (count == 0 || begin + count > xs[1]) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside " + std::to_string(xs[1]) + " channels");
  }
  const std::size_t batch = xs[0], ch = xs[1], plane = x.value().plane_size();
  Shape os = xs;
  os[1] = count;
  Field<T> out(os);
  const T* xv = x.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(xv + (n * ch + begin) * plane, count * plane, out.data() + n * count * plane);
  }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [=](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_buffer(self).data();
    T* gx = tp.grad_buffer(ix).data();
    for (std::size_t n = 0; n < batch; ++n) {
      T* dst = gx + (n * ch + begin) * plane;
      const T* src = g + n * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

/// Softmax across the channel axis at every voxel.
template <std::floating_point T>
Var<T> channel_softmax(Var<T> x) {
  const Shape& xs = x.shape();
  detail::require_spatial(xs, "channel_softmax");
  const std::size_t batch = xs[0], ch = xs[1], plane = x.value().plane_size();
  Field<T> out(xs);
  const T* xv = x.value().data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = n * ch * plane + p;
      T top = xv[base];
      for (std::size_t c = 1; c < ch; ++c) top = std::max(top, xv[base + c * plane]);
      T z{0};
      for (std::size_t c = 0; c < ch; ++c) z += (out[base + c * plane] = std::exp(xv[base + c * plane] - top));
      for (std::size_t c = 0; c < ch; ++c) out[base + c * plane] /= z;
    }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [=](Tape<T>& tp, std::size_t self) {
    const T* g = tp.grad_buffer(self).data();
    const T* s = tp.value(self).data();
    T* gx = tp.grad_buffer(ix).data();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t base = n * ch * plane + p;
        T dot{0};
        for (std::size_t c = 0; c < ch; ++c) dot += g[base + c * plane] * s[base + c * plane];
        for (std::size_t c = 0; c < ch; ++c) gx[base + c * plane] += s[base + c * plane] * (g[base + c * plane] - dot);
      }
  });
}

/// Numerically stable softmax of a logit vector.
template <std::floating_point T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  if (p.empty()) return p;
  const T top = *std::max_element(logits.begin(), logits.end());
  T z{0};
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - top));
  for (T& v : p) v /= z;
  return p;
}

/// sum_j softmax(logits)_j * inputs[j]; all inputs share one shape.
template <std::floating_point T>
Var<T> mix(std::span<const Var<T>> inputs, Var<T> logits) {
  if (inputs.empty()) throw std::invalid_argument("mix: no inputs");
  if (logits.value().size() != inputs.size()) {
    throw std::invalid_argument("mix: " + std::to_string(logits.value().size()) + " logits for " +
                                std::to_string(inputs.size()) + " inputs");
  }
  for (const Var<T>& v : inputs) detail::require_same_shape(inputs[0], v, "mix");
  detail::require_same_tape(inputs[0], logits);

  const std::vector<T> w = softmax<T>(logits.value().values());
  Field<T> out(inputs[0].shape());
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    const auto v = inputs[j].value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[j] * v[i];
  }
  std::vector<std::size_t> ids;
  for (const Var<T>& v : inputs) ids.push_back(v.id());
  const std::size_t il = logits.id();
  ids.push_back(il);
  std::vector<std::size_t> xs(ids.begin(), ids.end() - 1);
  return logits.tape()->record(std::move(out), ids, [xs, il, w](Tape<T>& tp, std::size_t self) {
    const auto g = tp.grad_buffer(self);
    std::vector<T> dots(xs.size(), T{0});
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const auto v = tp.value(xs[j]).values();
      for (std::size_t i = 0; i < g.size(); ++i) dots[j] += g[i] * v[i];
      if (tp.needs_grad(xs[j])) {
        auto gx = tp.grad_buffer(xs[j]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += w[j] * g[i];
      }
    }
    if (tp.needs_grad(il)) {
      T avg{0};
      for (std::size_t j = 0; j < xs.size(); ++j) avg += w[j] * dots[j];
      auto gl = tp.grad_buffer(il);
      for (std::size_t j = 0; j < xs.size(); ++j) gl[j] += w[j] * (dots[j] - avg);
    }
  });
}

}  // namespace fedsn
