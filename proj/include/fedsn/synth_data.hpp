#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsn/field.hpp"
#include "fedsn/parameters.hpp"
#include "fedsn/rng.hpp"
#include <nlohmann/json.hpp>

namespace fedsn {

/// Acquisition characteristics of one synthetic site.
///
/// Foreground objects are ellipses (ellipsoids in 3D) with semi-major axis in
/// [size_min, size_max] voxels and minor/major ratio in [ratio_min,
/// ratio_max]. Rendered intensity is offset + gain * (0.2 + 0.8 s) plus
/// N(0, noise_sigma) noise, where s in (0,1) is the soft object indicator.
struct SiteProfile {
  std::string id = "A";
  std::string name = "site";
  double size_min = 4.0;
  double size_max = 8.0;
  double ratio_min = 0.6;
  double ratio_max = 1.0;
  double offset = 0.0;
  double gain = 1.0;
  double noise_sigma = 0.1;
  std::size_t case_count = 20;
  std::size_t objects_min = 1;
  std::size_t objects_max = 2;
  double edge_sharpness = 8.0;

  void validate(const Shape& spatial) const {
    if (noise_sigma < 0) throw std::invalid_argument("site " + id + ": noise_sigma must be >= 0");
    if (!(size_min > 0) || size_max < size_min) throw std::invalid_argument("site " + id + ": bad size range");
    if (!(ratio_min > 0) || ratio_max < ratio_min || ratio_max > 1) {
      throw std::invalid_argument("site " + id + ": ratio range must lie in (0, 1]");
    }
    if (objects_min < 1 || objects_max < objects_min) throw std::invalid_argument("site " + id + ": bad object count");
    if (gain <= 0) throw std::invalid_argument("site " + id + ": gain must be positive");
    // In-plane axes bound the semi-major axis; depth is scaled separately.
    for (std::size_t a = spatial.size() - 2; a < spatial.size(); ++a) {
      const std::size_t d = spatial[a];
      if (2 * size_max + 2 >= static_cast<double>(d)) {
        throw std::invalid_argument("site " + id + ": size_max " + std::to_string(size_max) +
                                    " does not fit image extent " + std::to_string(d));
      }
    }
  }
};

/// One image with its ground-truth mask, both shaped (1, 1, spatial...).
template <std::floating_point T>
struct Case {
  Field<T> image;
  Field<T> mask;
  std::string site_id;
  std::size_t case_id = 0;
};

/// Four sites with the case counts and roles of the public prostate sources
/// (63 / 50 / 98 / 32) and deliberately different object and intensity
/// statistics.
inline std::vector<SiteProfile> default_site_profiles() {
  SiteProfile a{"A", "NCI", 5.0, 9.0, 0.6, 1.0, 0.0, 1.0, 0.22, 63};
  SiteProfile b{"B", "PROMISE12", 3.0, 6.0, 0.4, 0.8, 0.5, 0.7, 0.25, 50};
  SiteProfile c{"C", "ProstateX", 6.0, 10.0, 0.7, 1.0, -0.3, 1.3, 0.18, 98};
  SiteProfile d{"D", "MSD", 3.5, 7.0, 0.45, 0.9, 1.0, 0.6, 0.3, 32};
  return {a, b, c, d};
}

namespace detail {

struct Ellipsoid {
  double center[3];
  double semi[3];
  double angle;
};

}  // namespace detail

/// Deterministic cases for `profile`. Each case holds 1..objects_max soft
/// ellipsoids; the mask is the union of their supports.
template <std::floating_point T>
std::vector<Case<T>> generate_site(const SiteProfile& profile, const Shape& spatial, std::uint64_t seed) {
  if (spatial.size() != 2 && spatial.size() != 3) {
    throw std::invalid_argument("generate_site: spatial shape must have 2 or 3 axes");
  }
  profile.validate(spatial);
  const bool deep = spatial.size() == 3;
  const std::size_t Z = deep ? spatial[0] : 1;
  const std::size_t H = spatial[spatial.size() - 2], W = spatial[spatial.size() - 1];
  Shape shape{1, 1};
  shape.insert(shape.end(), spatial.begin(), spatial.end());

  std::vector<Case<T>> cases;
  cases.reserve(profile.case_count);
  for (std::size_t c = 0; c < profile.case_count; ++c) {
    Rng rng(derive_seed(derive_seed(seed, "site:" + profile.id), c));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const std::size_t n_obj = std::uniform_int_distribution<std::size_t>(profile.objects_min, profile.objects_max)(rng);

    std::vector<detail::Ellipsoid> objs;
    for (std::size_t o = 0; o < n_obj; ++o) {
      detail::Ellipsoid e{};
      const double a = uniform(profile.size_min, profile.size_max);
      const double b = a * uniform(profile.ratio_min, profile.ratio_max);
      e.semi[0] = a;
      e.semi[1] = b;
      e.semi[2] = deep ? std::max(1.0, b * static_cast<double>(Z) / static_cast<double>(H)) : 1.0;
      e.angle = uniform(0.0, std::numbers::pi);
      e.center[0] = uniform(a + 1.0, static_cast<double>(W) - a - 1.0);
      e.center[1] = uniform(a + 1.0, static_cast<double>(H) - a - 1.0);
      e.center[2] = deep ? uniform(std::min(e.semi[2], Z / 2.0), std::max(Z - e.semi[2], Z / 2.0)) : 0.0;
      objs.push_back(e);
    }

    Case<T> out{Field<T>(shape), Field<T>(shape), profile.id, c};
    std::normal_distribution<double> noise(0.0, 1.0);
    std::size_t i = 0;
    for (std::size_t z = 0; z < Z; ++z)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x, ++i) {
          double soft = 0.0;
          bool inside = false;
          for (const auto& e : objs) {
            const double dx = x + 0.5 - e.center[0], dy = y + 0.5 - e.center[1];
            const double dz = deep ? z + 0.5 - e.center[2] : 0.0;
            const double u = std::cos(e.angle) * dx + std::sin(e.angle) * dy;
            const double v = -std::sin(e.angle) * dx + std::cos(e.angle) * dy;
            const double r = std::sqrt(u * u / (e.semi[0] * e.semi[0]) + v * v / (e.semi[1] * e.semi[1]) +
                                       dz * dz / (e.semi[2] * e.semi[2]));
            inside = inside || r <= 1.0;
            soft = std::max(soft, 1.0 / (1.0 + std::exp(-(1.0 - r) * profile.edge_sharpness)));
          }
          double v = profile.offset + profile.gain * (0.2 + 0.8 * soft);
          if (profile.noise_sigma > 0) v += profile.noise_sigma * noise(rng);
          out.image[i] = static_cast<T>(v);
          out.mask[i] = inside ? T{1} : T{0};
        }
    cases.push_back(std::move(out));
  }
  return cases;
}

/// Zero-mean, unit-variance rescaling of the non-zero voxels; zeros stay 0.
template <std::floating_point T>
Case<T> normalize(Case<T> c) {
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (T v : c.image.values()) {
    if (v != T{0}) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("normalize: case " + std::to_string(c.case_id) + " has no non-zero voxels");
  const double mu = sum / static_cast<double>(n);
  for (T v : c.image.values()) {
    if (v != T{0}) sq += (v - mu) * (v - mu);
  }
  const double sd = std::sqrt(sq / static_cast<double>(n));
  if (!(sd > 0)) {
    throw std::invalid_argument("normalize: case " + std::to_string(c.case_id) + " has zero intensity variance");
  }
  for (T& v : c.image.values()) {
    if (v != T{0}) v = static_cast<T>((v - mu) / sd);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitCounts {
  std::size_t train = 0, validation = 0, test = 0;
  bool operator==(const SplitCounts&) const = default;
};

/// ceil(70%) train, floor(10%) validation, remainder test; validation and
/// test each get at least one case.
inline SplitCounts split_counts(std::size_t n) {
  if (n < 3) throw std::invalid_argument("split: need at least 3 cases, got " + std::to_string(n));
  SplitCounts c;
  c.train = (70 * n + 99) / 100;
  c.validation = n / 10;
  if (c.validation == 0) {
    c.validation = 1;
    --c.train;
  }
  if (c.train + c.validation >= n) --c.train;
  c.test = n - c.train - c.validation;
  return c;
}

/// Disjoint case-index lists.
struct SplitSet {
  std::vector<std::size_t> train, validation, test;
};

/// Random 70/10/20-style partition of indices [0, n).
inline SplitSet split(std::size_t n, std::uint64_t seed) {
  const SplitCounts c = split_counts(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  SplitSet s;
  s.train.assign(order.begin(), order.begin() + c.train);
  s.validation.assign(order.begin() + c.train, order.begin() + c.train + c.validation);
  s.test.assign(order.begin() + c.train + c.validation, order.end());
  for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

template <std::floating_point T>
SplitSet split(const std::vector<Case<T>>& cases, std::uint64_t seed) {
  return split(cases.size(), seed);
}

/// Concatenates per-group splits, offsetting indices by the sizes of the
/// groups before them.
inline SplitSet pool_splits(const std::vector<SplitSet>& parts, const std::vector<std::size_t>& group_sizes) {
  if (parts.size() != group_sizes.size()) throw std::invalid_argument("pool_splits: size mismatch");
  SplitSet out;
  std::size_t offset = 0;
  for (std::size_t g = 0; g < parts.size(); ++g) {
    for (std::size_t i : parts[g].train) out.train.push_back(offset + i);
    for (std::size_t i : parts[g].validation) out.validation.push_back(offset + i);
    for (std::size_t i : parts[g].test) out.test.push_back(offset + i);
    offset += group_sizes[g];
  }
  return out;
}

/// Pooled split of several groups: each group is split on its own, so pooled
/// counts are the sums of the per-group counts.
inline SplitSet split_stratified(const std::vector<std::size_t>& group_sizes, std::uint64_t seed) {
  std::vector<SplitSet> parts;
  for (std::size_t g = 0; g < group_sizes.size(); ++g) parts.push_back(split(group_sizes[g], derive_seed(seed, g)));
  return pool_splits(parts, group_sizes);
}

// ---------------------------------------------------------------------------
// Batching and augmentation

struct CropSource {
  std::size_t case_index = 0;
  std::vector<std::size_t> offset;
};

template <std::floating_point T>
struct Batch {
  Field<T> images;  // (B, 1, crop...)
  Field<T> masks;
  std::vector<CropSource> sources;
};

namespace detail {

template <std::floating_point T>
void copy_crop(const Field<T>& src, Field<T>& dst, std::size_t item, const std::vector<std::size_t>& offset) {
  const Shape& ss = src.shape();
  const Shape& ds = dst.shape();
  const bool deep = ss.size() == 5;
  const std::size_t sz = deep ? ss[2] : 1, sy = ss[ss.size() - 2], sx = ss[ss.size() - 1];
  const std::size_t cz = deep ? ds[2] : 1, cy = ds[ds.size() - 2], cx = ds[ds.size() - 1];
  const std::size_t oz = deep ? offset[0] : 0, oy = offset[offset.size() - 2], ox = offset[offset.size() - 1];
  (void)sz;
  T* out = dst.data() + item * cz * cy * cx;
  for (std::size_t z = 0; z < cz; ++z)
    for (std::size_t y = 0; y < cy; ++y) {
      const T* row = src.data() + ((z + oz) * sy + (y + oy)) * sx + ox;
      std::copy_n(row, cx, out + (z * cy + y) * cx);
    }
}

}  // namespace detail

/// Extracts the crop at `offset` from a (1, 1, spatial...) field.
template <std::floating_point T>
Field<T> crop(const Field<T>& src, const std::vector<std::size_t>& offset, const Shape& crop_size) {
  Shape s{1, 1};
  s.insert(s.end(), crop_size.begin(), crop_size.end());
  Field<T> out(s);
  detail::copy_crop(src, out, 0, offset);
  return out;
}

/// `images_per_batch` distinct images (drawn with replacement only when the
/// pool is smaller), `crops_per_image` uniformly placed crops from each.
template <std::floating_point T>
Batch<T> sample_minibatch(const std::vector<Case<T>>& cases, const std::vector<std::size_t>& pool,
                          std::size_t crops_per_image, std::size_t images_per_batch, const Shape& crop_size,
                          Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("sample_minibatch: empty case pool");
  if (crops_per_image == 0 || images_per_batch == 0) throw std::invalid_argument("sample_minibatch: empty batch");
  const Shape spatial = cases.at(pool[0]).image.spatial_shape();
  if (crop_size.size() != spatial.size()) throw std::invalid_argument("sample_minibatch: crop rank mismatch");
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    if (crop_size[a] > spatial[a] || crop_size[a] == 0) {
      throw std::invalid_argument("sample_minibatch: crop extent " + std::to_string(crop_size[a]) + " on axis " +
                                  std::to_string(a) + " exceeds image extent " + std::to_string(spatial[a]));
    }
  }
  std::vector<std::size_t> chosen;
  if (images_per_batch <= pool.size()) {
    std::vector<std::size_t> order = pool;
    for (std::size_t i = 0; i < images_per_batch; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, order.size() - 1);
      std::swap(order[i], order[d(rng)]);
      chosen.push_back(order[i]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    for (std::size_t i = 0; i < images_per_batch; ++i) chosen.push_back(pool[d(rng)]);
  }
  const std::size_t B = crops_per_image * images_per_batch;
  Shape s{B, 1};
  s.insert(s.end(), crop_size.begin(), crop_size.end());
  Batch<T> batch{Field<T>(s), Field<T>(s), {}};
  std::size_t item = 0;
  for (std::size_t idx : chosen) {
    for (std::size_t k = 0; k < crops_per_image; ++k, ++item) {
      std::vector<std::size_t> off(spatial.size());
      for (std::size_t a = 0; a < spatial.size(); ++a) {
        off[a] = std::uniform_int_distribution<std::size_t>(0, spatial[a] - crop_size[a])(rng);
      }
      detail::copy_crop(cases[idx].image, batch.images, item, off);
      detail::copy_crop(cases[idx].mask, batch.masks, item, off);
      batch.sources.push_back({idx, std::move(off)});
    }
  }
  return batch;
}

/// Full images of the listed cases stacked along the batch axis, in order.
template <std::floating_point T>
Batch<T> stack_cases(const std::vector<Case<T>>& cases, const std::vector<std::size_t>& pool) {
  if (pool.empty()) throw std::invalid_argument("stack_cases: empty case pool");
  const Shape spatial = cases.at(pool[0]).image.spatial_shape();
  Shape s{pool.size(), 1};
  s.insert(s.end(), spatial.begin(), spatial.end());
  Batch<T> b{Field<T>(s), Field<T>(s), {}};
  const std::size_t plane = shape_volume(spatial);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& c = cases.at(pool[i]);
    if (c.image.spatial_shape() != spatial) throw std::invalid_argument("stack_cases: cases differ in shape");
    std::copy_n(c.image.data(), plane, b.images.data() + i * plane);
    std::copy_n(c.mask.data(), plane, b.masks.data() + i * plane);
    b.sources.push_back({pool[i], std::vector<std::size_t>(spatial.size(), 0)});
  }
  return b;
}

struct AugmentConfig {
  double intensity_shift = 0.1;  // shift ~ U(-s, s)
  double contrast = 0.1;         // gain ~ U(1 - c, 1 + c) about the crop mean
  double noise_sigma = 0.05;
};

/// Per-crop intensity shift, contrast change about the crop mean and
/// additive Gaussian noise. Masks are left alone.
template <std::floating_point T>
void augment(Batch<T>& batch, const AugmentConfig& cfg, Rng& rng) {
  const std::size_t B = batch.images.shape()[0];
  const std::size_t per = batch.images.size() / B;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double shift = cfg.intensity_shift * unit(rng);
    const double gain = 1.0 + cfg.contrast * unit(rng);
    T* px = batch.images.data() + b * per;
    double mean = 0;
    for (std::size_t i = 0; i < per; ++i) mean += px[i];
    mean /= static_cast<double>(per);
    for (std::size_t i = 0; i < per; ++i) {
      double v = px[i] + (gain - 1.0) * (px[i] - mean) + shift;
      if (cfg.noise_sigma > 0) v += cfg.noise_sigma * noise(rng);
      px[i] = static_cast<T>(v);
    }
  }
}

// ---------------------------------------------------------------------------
// Case files (little-endian):
//   "FEDSNCAS"  u32 version  u32 spatial_rank  u64 dims[rank]  u32 dtype(1 = f64)
//   f64 image[prod(dims)]  u8 mask[prod(dims)]

inline constexpr char kCaseMagic[8] = {'F', 'E', 'D', 'S', 'N', 'C', 'A', 'S'};

template <std::floating_point T>
void write_case(const std::string& path, const Case<T>& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  const Shape spatial = c.image.spatial_shape();
  os.write(kCaseMagic, sizeof(kCaseMagic));
  io::put<std::uint32_t>(os, 1);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(spatial.size()));
  for (std::size_t d : spatial) io::put<std::uint64_t>(os, d);
  io::put<std::uint32_t>(os, 1);
  for (T v : c.image.values()) io::put<double>(os, static_cast<double>(v));
  for (T v : c.mask.values()) io::put<std::uint8_t>(os, v != T{0} ? 1 : 0);
  if (!os) throw std::runtime_error("write_case: stream error on " + path);
}

template <std::floating_point T>
Case<T> read_case(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCaseMagic, 8) != 0) throw std::runtime_error(path + ": bad magic");
  if (io::get<std::uint32_t>(is, "version") != 1) throw std::runtime_error(path + ": unsupported version");
  const auto rank = io::get<std::uint32_t>(is, "rank");
  if (rank != 2 && rank != 3) throw std::runtime_error(path + ": bad spatial rank");
  Shape s{1, 1};
  for (std::uint32_t i = 0; i < rank; ++i) s.push_back(io::get<std::uint64_t>(is, "dims"));
  if (io::get<std::uint32_t>(is, "dtype") != 1) throw std::runtime_error(path + ": unsupported dtype");
  Case<T> c{Field<T>(s), Field<T>(s), {}, 0};
  for (T& v : c.image.values()) v = static_cast<T>(io::get<double>(is, "image"));
  for (T& v : c.mask.values()) v = io::get<std::uint8_t>(is, "mask") ? T{1} : T{0};
  return c;
}

inline nlohmann::json to_json(const SiteProfile& p) {
  return {{"id", p.id},
          {"name", p.name},
          {"size_min", p.size_min},
          {"size_max", p.size_max},
          {"ratio_min", p.ratio_min},
          {"ratio_max", p.ratio_max},
          {"offset", p.offset},
          {"gain", p.gain},
          {"noise_sigma", p.noise_sigma},
          {"case_count", p.case_count},
          {"objects_min", p.objects_min},
          {"objects_max", p.objects_max},
          {"edge_sharpness", p.edge_sharpness}};
}

inline SiteProfile site_profile_from_json(const nlohmann::json& j) {
  SiteProfile p;
  p.id = j.at("id").get<std::string>();
  p.name = j.value("name", p.id);
  p.size_min = j.value("size_min", p.size_min);
  p.size_max = j.value("size_max", p.size_max);
  p.ratio_min = j.value("ratio_min", p.ratio_min);
  p.ratio_max = j.value("ratio_max", p.ratio_max);
  p.offset = j.value("offset", p.offset);
  p.gain = j.value("gain", p.gain);
  p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
  p.case_count = j.value("case_count", p.case_count);
  p.objects_min = j.value("objects_min", p.objects_min);
  p.objects_max = j.value("objects_max", p.objects_max);
  p.edge_sharpness = j.value("edge_sharpness", p.edge_sharpness);
  return p;
}

}  // namespace fedsn
