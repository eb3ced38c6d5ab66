#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bfp/rng.hpp"
#include "bfp/tensor.hpp"

namespace bfp {

// Desk-scale stand-in for a segmentation dataset: random ellipses and
// rectangles on a background, one base color per class plus pixel noise,
// with a label map that matches the rendered image exactly.
template <typename T>
struct SynthScene {
  Tensor<T> image;  // 3xHxW in [0,1]
  LabelMap labels;  // N classes, no ignore pixels at generation time
};

namespace detail {

inline void class_color(int c, double rgb[3]) {
  static const double palette[8][3] = {
      {0.15, 0.15, 0.18}, {0.85, 0.25, 0.20}, {0.20, 0.70, 0.25},
      {0.25, 0.35, 0.85}, {0.85, 0.75, 0.20}, {0.70, 0.25, 0.75},
      {0.25, 0.75, 0.75}, {0.90, 0.55, 0.25}};
  for (int i = 0; i < 3; ++i) rgb[i] = palette[c % 8][i];
}

}  // namespace detail

template <typename T>
SynthScene<T> synth_scene(Rng& rng, std::size_t size, int num_classes) {
  const std::size_t h = size, w = size;
  SynthScene<T> scene{Tensor<T>({3, h, w}), LabelMap(h, w, num_classes)};
  auto paint = [&](std::size_t y, std::size_t x, int cls) {
    double rgb[3];
    detail::class_color(cls, rgb);
    scene.labels.at(y, x) = cls;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double noise = rng.uniform(-0.06, 0.06);
      scene.image.at3(ch, y, x) =
          static_cast<T>(std::clamp(rgb[ch] + noise, 0.0, 1.0));
    }
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) paint(y, x, 0);

  const bool too_small = size < 8;  // background-only scene is still valid
  if (!too_small) {
    for (int cls = 1; cls < num_classes; ++cls) {
      if (!rng.coin(0.85)) continue;
      const double cy = rng.uniform(0.2, 0.8) * h;
      const double cx = rng.uniform(0.2, 0.8) * w;
      const double ry = std::max(1.0, rng.uniform(0.10, 0.28) * h);
      const double rx = std::max(1.0, rng.uniform(0.10, 0.28) * w);
      const bool ellipse = rng.coin();
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          const bool inside = ellipse ? (dy * dy + dx * dx <= 1.0)
                                      : (std::abs(dy) <= 1.0 &&
                                         std::abs(dx) <= 1.0);
          if (inside) paint(y, x, cls);
        }
      }
    }
  }
  return scene;
}

template <typename T>
std::vector<SynthScene<T>> synth_dataset(std::uint64_t seed, std::size_t count,
                                         std::size_t size, int num_classes) {
  if (num_classes < 2)
    detail::fail("synth_dataset: num_classes must be >= 2");
  Rng rng(seed);
  std::vector<SynthScene<T>> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    scenes.push_back(synth_scene<T>(rng, size, num_classes));
  return scenes;
}

// ---------------------------------------------------------------------------
// Augmentation primitives: bilinear image resize, nearest label resize.

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t oh,
                          std::size_t ow) {
  const std::size_t c = img.extent(0), h = img.extent(1), w = img.extent(2);
  Tensor<T> out({c, oh, ow});
  for (std::size_t y = 0; y < oh; ++y) {
    const double sy = oh > 1 ? (y + 0.5) * h / oh - 0.5 : 0.0;
    const double fy = std::clamp(sy, 0.0, double(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < ow; ++x) {
      const double sx = ow > 1 ? (x + 0.5) * w / ow - 0.5 : 0.0;
      const double fx = std::clamp(sx, 0.0, double(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v00 = img.at3(ch, y0, x0), v01 = img.at3(ch, y0, x1);
        const double v10 = img.at3(ch, y1, x0), v11 = img.at3(ch, y1, x1);
        out.at3(ch, y, x) = static_cast<T>((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                           wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

inline LabelMap resize_nearest(const LabelMap& labels, std::size_t oh,
                               std::size_t ow) {
  LabelMap out(oh, ow, labels.num_classes, labels.ignore_value);
  for (std::size_t y = 0; y < oh; ++y) {
    const std::size_t sy = std::min(
        labels.height - 1, static_cast<std::size_t>(y * labels.height / oh));
    for (std::size_t x = 0; x < ow; ++x) {
      const std::size_t sx = std::min(
          labels.width - 1, static_cast<std::size_t>(x * labels.width / ow));
      out.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

template <typename T>
void hflip_inplace(Tensor<T>& img, LabelMap& labels) {
  const std::size_t c = img.extent(0), h = img.extent(1), w = img.extent(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w / 2; ++x)
        std::swap(img.at3(ch, y, x), img.at3(ch, y, w - 1 - x));
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      std::swap(labels.at(y, x), labels.at(y, w - 1 - x));
}

// Random flip + random resize in [0.5, 2], then crop or zero/ignore-pad back
// to the original extent. All randomness comes from rng.
template <typename T>
SynthScene<T> augment(const SynthScene<T>& scene, Rng& rng) {
  const std::size_t h = scene.labels.height, w = scene.labels.width;
  SynthScene<T> out{scene.image, scene.labels};
  if (rng.coin()) hflip_inplace(out.image, out.labels);
  const double scale = rng.uniform(0.5, 2.0);
  const std::size_t nh = std::max<std::size_t>(1, std::lround(h * scale));
  const std::size_t nw = std::max<std::size_t>(1, std::lround(w * scale));
  Tensor<T> rimg = resize_bilinear(out.image, nh, nw);
  LabelMap rlab = resize_nearest(out.labels, nh, nw);
  SynthScene<T> result{Tensor<T>({3, h, w}),
                       LabelMap(h, w, scene.labels.num_classes,
                                scene.labels.ignore_value)};
  for (auto& v : result.labels.values) v = scene.labels.ignore_value;
  // Offsets of the crop window (source) or the paste position (dest).
  const std::size_t oy = nh > h ? rng.below(static_cast<std::uint32_t>(nh - h + 1)) : 0;
  const std::size_t ox = nw > w ? rng.below(static_cast<std::uint32_t>(nw - w + 1)) : 0;
  const std::size_t py = nh < h ? rng.below(static_cast<std::uint32_t>(h - nh + 1)) : 0;
  const std::size_t px = nw < w ? rng.below(static_cast<std::uint32_t>(w - nw + 1)) : 0;
  const std::size_t ch = std::min(nh, h), cw = std::min(nw, w);
  for (std::size_t y = 0; y < ch; ++y) {
    for (std::size_t x = 0; x < cw; ++x) {
      for (std::size_t c = 0; c < 3; ++c)
        result.image.at3(c, py + y, px + x) = rimg.at3(c, oy + y, ox + x);
      result.labels.at(py + y, px + x) = rlab.at(oy + y, ox + x);
    }
  }
  return result;
}

}  // namespace bfp
