#pragma once

#include <optional>
#include <vector>

#include "bfp/labels.hpp"
#include "bfp/tensor.hpp"

namespace bfp {

struct IoUReport {
  // nullopt: class absent from both prediction and ground truth.
  std::vector<std::optional<double>> per_class;
  // nullopt: empty evaluation region or no class present.
  std::optional<double> miou;
};

inline IoUReport evaluate_miou(const LabelMap& pred, const LabelMap& gt,
                               int num_classes, const Mask* mask = nullptr) {
  if (pred.height != gt.height || pred.width != gt.width)
    detail::fail("evaluate_miou: shape mismatch");
  std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0);
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    if (gt.values[i] == gt.ignore_value) continue;
    if (mask && !mask->values[i]) continue;
    for (int c = 0; c < num_classes; ++c) {
      const bool p = pred.values[i] == c;
      const bool g = gt.values[i] == c;
      inter[c] += p && g;
      uni[c] += p || g;
    }
  }
  IoUReport rep;
  rep.per_class.resize(num_classes);
  double sum = 0;
  std::size_t present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (uni[c] == 0) continue;
    rep.per_class[c] = double(inter[c]) / double(uni[c]);
    sum += *rep.per_class[c];
    ++present;
  }
  if (present > 0) rep.miou = sum / present;
  return rep;
}

// mIoU restricted to bands of increasing width around ground-truth
// boundaries.
inline std::vector<std::optional<double>> evaluate_trimap(
    const LabelMap& pred, const LabelMap& gt, int num_classes,
    const std::vector<double>& band_widths) {
  std::vector<std::optional<double>> out;
  out.reserve(band_widths.size());
  for (double band : band_widths) {
    const Mask mask = trimap_band_mask(gt, band);
    out.push_back(evaluate_miou(pred, gt, num_classes, &mask).miou);
  }
  return out;
}

}  // namespace bfp
