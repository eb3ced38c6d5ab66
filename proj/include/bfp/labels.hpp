#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <vector>

#include "bfp/tensor.hpp"

namespace bfp {

struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), values(h * w, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x) {
    return values[y * width + x];
  }
  bool at(std::size_t y, std::size_t x) const {
    return values[y * width + x] != 0;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values) n += v != 0;
    return n;
  }
};

namespace detail {

constexpr double kEdtInf = 1e18;

// Felzenszwalb-Huttenlocher 1D squared distance transform (lower envelope of
// parabolas). f holds squared distances, overwritten in place.
inline void edt_1d(std::vector<double>& f, std::vector<double>& d,
                   std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -kEdtInf;
  z[1] = kEdtInf;
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) /
          (2.0 * q - 2.0 * v[k]);
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kEdtInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = double(q - v[k]) * (q - v[k]) + f[v[k]];
  }
  for (int q = 0; q < n; ++q) f[q] = d[q];
}

}  // namespace detail

// Exact squared Euclidean distance from every pixel to the nearest set pixel
// (set[i] != 0). Pixels with no set pixel anywhere get kEdtInf.
inline std::vector<double> squared_edt(std::size_t h, std::size_t w,
                                       const std::vector<std::uint8_t>& set) {
  std::vector<double> grid(h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    grid[i] = set[i] ? 0.0 : detail::kEdtInf;

  const std::size_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);

  for (std::size_t x = 0; x < w; ++x) {  // columns
    f.resize(h);
    for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    detail::edt_1d(f, d, v, z);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = f[y];
  }
  for (std::size_t y = 0; y < h; ++y) {  // rows
    f.resize(w);
    for (std::size_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
    detail::edt_1d(f, d, v, z);
    for (std::size_t x = 0; x < w; ++x) grid[y * w + x] = f[x];
  }
  return grid;
}

// Squared distance from each non-ignore pixel to the nearest pixel carrying a
// different non-ignore label. Ignore pixels get kEdtInf.
inline std::vector<double> squared_distance_to_differing(const LabelMap& labels) {
  const std::size_t h = labels.height, w = labels.width;
  std::set<int> classes;
  for (int v : labels.values)
    if (v != labels.ignore_value) classes.insert(v);

  std::vector<double> best(h * w, detail::kEdtInf);
  std::vector<std::uint8_t> set(h * w);
  for (int c : classes) {
    for (std::size_t i = 0; i < h * w; ++i) set[i] = labels.values[i] == c;
    const std::vector<double> dist = squared_edt(h, w, set);
    for (std::size_t i = 0; i < h * w; ++i) {
      if (labels.values[i] != c && labels.values[i] != labels.ignore_value)
        best[i] = std::min(best[i], dist[i]);
    }
  }
  return best;
}

// Relabel every pixel whose Euclidean distance to the nearest differing
// non-ignore label is strictly below radius to the boundary class N.
// Ignore pixels are left untouched and never act as differing sources.
inline LabelMap generate_boundary_labels(const LabelMap& labels, double radius) {
  if (radius <= 0) detail::fail("generate_boundary_labels: radius must be > 0");
  LabelMap out = labels;
  out.num_classes = labels.num_classes + 1;
  const int boundary_class = labels.num_classes;
  const std::vector<double> d2 = squared_distance_to_differing(labels);
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < d2.size(); ++i) {
    if (labels.values[i] != labels.ignore_value && d2[i] < r2)
      out.values[i] = boundary_class;
  }
  return out;
}

// True exactly where the boundary rule holds for the given band width.
inline Mask trimap_band_mask(const LabelMap& labels, double band) {
  if (band <= 0) detail::fail("trimap_band_mask: band must be > 0");
  Mask mask(labels.height, labels.width);
  const std::vector<double> d2 = squared_distance_to_differing(labels);
  const double b2 = band * band;
  for (std::size_t i = 0; i < d2.size(); ++i)
    mask.values[i] = labels.values[i] != labels.ignore_value && d2[i] < b2;
  return mask;
}

}  // namespace bfp
