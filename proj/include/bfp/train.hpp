#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bfp/dataset.hpp"
#include "bfp/labels.hpp"
#include "bfp/metrics.hpp"
#include "bfp/model.hpp"
#include "bfp/optim.hpp"

namespace bfp {

struct TrainConfig {
  ModelConfig model;
  std::size_t steps = 2000;
  std::size_t total_iters = 0;  // 0: same as steps
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t dataset_count = 12;
  std::size_t image_size = 64;
  std::uint64_t dataset_seed = 100;
  bool augment = true;
  unsigned threads = 1;
  std::vector<double> trimap_bands = {1.5, 3.0, 5.0, 8.0};
  std::size_t smooth_window = 20;
};

struct MetricsReport {
  std::vector<double> loss_curve;  // total loss per step
  double initial_loss_smoothed = 0;
  double final_loss_smoothed = 0;
  std::vector<std::optional<double>> per_class_iou;
  std::optional<double> miou;
  std::optional<double> boundary_iou;  // boundary class of the (N+1) head
  std::vector<double> trimap_bands;
  std::vector<std::optional<double>> trimap_miou;
  double boundary_conf_on_boundary = 0;
  double boundary_conf_off_boundary = 0;
  double final_beta = 0;

  bool operator==(const MetricsReport&) const = default;
};

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["initial_loss_smoothed"] = r.initial_loss_smoothed;
  j["final_loss_smoothed"] = r.final_loss_smoothed;
  j["miou"] = opt(r.miou);
  j["boundary_iou"] = opt(r.boundary_iou);
  j["per_class_iou"] = nlohmann::json::array();
  for (const auto& v : r.per_class_iou) j["per_class_iou"].push_back(opt(v));
  j["trimap_bands"] = r.trimap_bands;
  j["trimap_miou"] = nlohmann::json::array();
  for (const auto& v : r.trimap_miou) j["trimap_miou"].push_back(opt(v));
  j["boundary_conf_on_boundary"] = r.boundary_conf_on_boundary;
  j["boundary_conf_off_boundary"] = r.boundary_conf_off_boundary;
  j["final_beta"] = r.final_beta;
  j["steps"] = r.loss_curve.size();
  if (!r.loss_curve.empty()) {
    j["first_loss"] = r.loss_curve.front();
    j["last_loss"] = r.loss_curve.back();
  }
  return j;
}

namespace detail {

inline double window_mean(const std::vector<double>& v, std::size_t begin,
                          std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return end > begin ? s / (end - begin) : 0.0;
}

}  // namespace detail

// Evaluation over un-augmented scenes with the current model: mIoU, trimap
// bands, and the mean boundary confidence on/off generated boundary pixels.
template <typename T>
void evaluate_into(const Model<T>& m, const std::vector<SynthScene<T>>& scenes,
                   const TrainConfig& cfg, MetricsReport& rep,
                   unsigned threads = 1) {
  const int n = m.cfg.num_classes;
  std::vector<std::size_t> inter(n, 0), uni(n, 0);
  std::vector<std::size_t> binter(1, 0), buni(1, 0);
  std::vector<double> band_inter, band_sum;
  rep.trimap_bands = cfg.trimap_bands;
  rep.trimap_miou.assign(cfg.trimap_bands.size(), std::nullopt);
  std::vector<std::vector<std::size_t>> tinter(cfg.trimap_bands.size(),
                                               std::vector<std::size_t>(n, 0)),
      tuni(cfg.trimap_bands.size(), std::vector<std::size_t>(n, 0));
  double conf_on = 0, conf_off = 0;
  std::size_t n_on = 0, n_off = 0;
  std::size_t bi = 0, bu = 0;

  for (const auto& scene : scenes) {
    ModelState<T> st = model_forward(m, scene.image, threads);
    const LabelMap pred = predict_labels(st.scores1);
    const LabelMap gt = scene.labels;
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
      if (gt.values[i] == gt.ignore_value) continue;
      for (int c = 0; c < n; ++c) {
        inter[c] += pred.values[i] == c && gt.values[i] == c;
        uni[c] += pred.values[i] == c || gt.values[i] == c;
      }
    }
    const LabelMap gtb = generate_boundary_labels(gt, m.cfg.boundary_radius);
    const LabelMap pred2 = predict_labels(st.scores2);
    for (std::size_t i = 0; i < gtb.values.size(); ++i) {
      if (gtb.values[i] == gtb.ignore_value) continue;
      const bool pg = pred2.values[i] == n, gg = gtb.values[i] == n;
      bi += pg && gg;
      bu += pg || gg;
      if (gg) {
        conf_on += st.b[i];
        ++n_on;
      } else {
        conf_off += st.b[i];
        ++n_off;
      }
    }
    for (std::size_t bidx = 0; bidx < cfg.trimap_bands.size(); ++bidx) {
      const Mask mask = trimap_band_mask(gt, cfg.trimap_bands[bidx]);
      for (std::size_t i = 0; i < gt.values.size(); ++i) {
        if (gt.values[i] == gt.ignore_value || !mask.values[i]) continue;
        for (int c = 0; c < n; ++c) {
          tinter[bidx][c] += pred.values[i] == c && gt.values[i] == c;
          tuni[bidx][c] += pred.values[i] == c || gt.values[i] == c;
        }
      }
    }
  }
  rep.per_class_iou.assign(n, std::nullopt);
  double sum = 0;
  std::size_t present = 0;
  for (int c = 0; c < n; ++c) {
    if (uni[c] == 0) continue;
    rep.per_class_iou[c] = double(inter[c]) / double(uni[c]);
    sum += *rep.per_class_iou[c];
    ++present;
  }
  rep.miou = present ? std::optional<double>(sum / present) : std::nullopt;
  rep.boundary_iou =
      bu ? std::optional<double>(double(bi) / double(bu)) : std::nullopt;
  for (std::size_t bidx = 0; bidx < cfg.trimap_bands.size(); ++bidx) {
    double s = 0;
    std::size_t pr = 0;
    for (int c = 0; c < n; ++c) {
      if (tuni[bidx][c] == 0) continue;
      s += double(tinter[bidx][c]) / double(tuni[bidx][c]);
      ++pr;
    }
    if (pr) rep.trimap_miou[bidx] = s / pr;
  }
  rep.boundary_conf_on_boundary = n_on ? conf_on / n_on : 0.0;
  rep.boundary_conf_off_boundary = n_off ? conf_off / n_off : 0.0;
  rep.final_beta = m.beta[0];
}

template <typename T>
MetricsReport train(Model<T>& m, const std::vector<SynthScene<T>>& scenes,
                    const TrainConfig& cfg) {
  MetricsReport rep;
  const std::size_t total =
      cfg.total_iters ? cfg.total_iters : std::max<std::size_t>(cfg.steps, 1);
  OptimizerState<T> opt;
  opt.base_lr = static_cast<T>(cfg.base_lr);
  opt.momentum = static_cast<T>(cfg.momentum);
  opt.weight_decay = static_cast<T>(cfg.weight_decay);
  opt.total_iters = total;
  std::vector<Tensor<T>*> params = m.parameters();
  opt.init(params);

  Model<T> grads = zeros_like(m);
  std::vector<Tensor<T>*> grad_ptrs;
  {
    std::vector<Tensor<T>*> gp = grads.parameters();
    grad_ptrs = gp;
  }
  Rng aug_rng(m.cfg.seed * 7919 + 17);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t idx = aug_rng.below(
        static_cast<std::uint32_t>(scenes.size()));
    SynthScene<T> sample =
        cfg.augment ? augment(scenes[idx], aug_rng) : scenes[idx];
    const LabelMap gtb =
        generate_boundary_labels(sample.labels, m.cfg.boundary_radius);
    ModelState<T> st = model_forward(m, sample.image, cfg.threads);
    for (auto* g : grad_ptrs) g->fill(T(0));
    grads.beta.fill(T(0));
    const LossBreakdown<T> loss =
        model_loss_and_grads(m, st, sample.labels, gtb, &grads);
    if (!std::isfinite(static_cast<double>(loss.total))) {
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(step));
    }
    rep.loss_curve.push_back(static_cast<double>(loss.total));
    std::vector<const Tensor<T>*> cg(grad_ptrs.begin(), grad_ptrs.end());
    sgd_poly_step(params, cg, opt, step);
    if (m.cfg.gated) m.beta[0] = std::clamp(m.beta[0], T(0), T(1));
  }

  const std::size_t wnd = std::min(cfg.smooth_window,
                                   std::max<std::size_t>(rep.loss_curve.size(), 1));
  if (!rep.loss_curve.empty()) {
    rep.initial_loss_smoothed = detail::window_mean(rep.loss_curve, 0, wnd);
    rep.final_loss_smoothed = detail::window_mean(
        rep.loss_curve, rep.loss_curve.size() - wnd, rep.loss_curve.size());
  }
  evaluate_into(m, scenes, cfg, rep, cfg.threads);
  return rep;
}

// ---------------------------------------------------------------------------
// Ablation grid over gating variants, shared seed set.

struct AblationRow {
  std::string variant;
  std::uint64_t seed;
  MetricsReport report;
};

inline void apply_variant(ModelConfig& cfg, const std::string& variant) {
  if (variant == "gated") {
    cfg.gated = true;
  } else if (variant == "ungated") {
    cfg.gated = false;
  } else if (variant == "beta-frozen") {
    cfg.gated = true;
    cfg.beta_frozen = true;
  } else if (variant == "first-stage-ungated") {
    cfg.gated = true;
    cfg.gate_first_stage = false;
  } else {
    detail::fail("unknown ablation variant: " + variant);
  }
}

template <typename T>
std::vector<AblationRow> ablation_grid(const TrainConfig& base,
                                       const std::vector<std::string>& variants,
                                       const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      apply_variant(cfg.model, variant);
      cfg.model.seed = seed;
      auto scenes = synth_dataset<T>(cfg.dataset_seed, cfg.dataset_count,
                                     cfg.image_size, cfg.model.num_classes);
      Model<T> m = build_model<T>(cfg.model);
      rows.push_back({variant, seed, train(m, scenes, cfg)});
    }
  }
  return rows;
}

}  // namespace bfp
