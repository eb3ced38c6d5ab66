#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bfp/confidence.hpp"
#include "bfp/ops.hpp"
#include "bfp/optim.hpp"
#include "bfp/rng.hpp"
#include "bfp/scan.hpp"
#include "bfp/tensor.hpp"

namespace bfp {

struct ModelConfig {
  std::size_t channels = 8;
  std::vector<std::size_t> dilations = {1, 1, 2};  // backbone depth
  int num_classes = 5;  // N; the boundary head has N+1 outputs
  double boundary_radius = 3.0;
  double alpha = 20.0;
  double gamma = 4.0;
  double beta_init = 1.0;
  double lambda = 1.0;  // weight of the boundary-head loss
  std::size_t scan_k = 1;
  std::uint64_t seed = 7;
  bool gated = true;
  bool beta_frozen = false;
  bool gate_first_stage = true;
  // Blocks the gating-path gradient into the boundary scores (ablation).
  bool stop_gradient_into_boundary = false;
};

// Backbone conv stack -> boundary head (N+1 scores, loss 2) -> gate ->
// BFP over the backbone features -> semantic head (N scores, loss 1).
template <typename T>
struct Model {
  ModelConfig cfg;
  std::vector<Tensor<T>> bb_kernel;  // [0]: Cx3x3x3, rest: CxCx3x3
  std::vector<Tensor<T>> bb_bias;
  Tensor<T> head1_w, head1_b;  // N x C, N
  Tensor<T> head2_w, head2_b;  // (N+1) x C, N+1
  BfpParams<T> bfp;
  Tensor<T> beta;  // one element, clamped to [0,1] after each step

  GateParams<T> gate() const {
    return {static_cast<T>(cfg.alpha), static_cast<T>(cfg.gamma), beta[0]};
  }

  // Fixed parameter order; the optimizer and gradient mirrors rely on it.
  // Beta is listed only when it is actually trainable.
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (std::size_t i = 0; i < bb_kernel.size(); ++i) {
      out.push_back(&bb_kernel[i]);
      out.push_back(&bb_bias[i]);
    }
    out.push_back(&head1_w);
    out.push_back(&head1_b);
    out.push_back(&head2_w);
    out.push_back(&head2_b);
    for (ScanParams<T>* sp : {&bfp.s, &bfp.n, &bfp.se, &bfp.sw, &bfp.ne,
                              &bfp.nw}) {
      out.push_back(&sp->U);
      out.push_back(&sp->W);
      if (sp->What.size() != 0) out.push_back(&sp->What);
      out.push_back(&sp->delta);
    }
    out.push_back(&bfp.fuse_w);
    out.push_back(&bfp.fuse_b);
    if (cfg.gated && !cfg.beta_frozen) out.push_back(&beta);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->size();
    return n;
  }
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
  if (cfg.channels == 0 || cfg.num_classes < 2 || cfg.dilations.empty())
    detail::fail("build_model: inconsistent config");
  Model<T> m;
  m.cfg = cfg;
  Rng rng(cfg.seed);
  const std::size_t c = cfg.channels;
  std::size_t cin = 3;
  for (std::size_t d : cfg.dilations) {
    (void)d;
    m.bb_kernel.emplace_back(std::vector<std::size_t>{c, cin, 3, 3});
    m.bb_bias.emplace_back(std::vector<std::size_t>{c});
    init_uniform(m.bb_kernel.back(), cin * 9, rng);
    init_uniform(m.bb_bias.back(), cin * 9, rng);
    cin = c;
  }
  const std::size_t n = static_cast<std::size_t>(cfg.num_classes);
  m.head1_w = Tensor<T>({n, c});
  m.head1_b = Tensor<T>({n});
  m.head2_w = Tensor<T>({n + 1, c});
  m.head2_b = Tensor<T>({n + 1});
  init_uniform(m.head1_w, c, rng);
  init_uniform(m.head1_b, c, rng);
  init_uniform(m.head2_w, c, rng);
  init_uniform(m.head2_b, c, rng);
  m.bfp = make_bfp_params<T>(c, cfg.scan_k);
  m.bfp.gate_first_stage = cfg.gate_first_stage;
  for (ScanParams<T>* sp : {&m.bfp.s, &m.bfp.n, &m.bfp.se, &m.bfp.sw,
                            &m.bfp.ne, &m.bfp.nw}) {
    init_uniform(sp->U, c * cfg.scan_k, rng);
    init_uniform(sp->W, c * cfg.scan_k, rng);
    if (sp->What.size() != 0) init_uniform(sp->What, c * cfg.scan_k, rng);
    init_uniform(sp->delta, c, rng);
  }
  init_uniform(m.bfp.fuse_w, 4 * c, rng);
  init_uniform(m.bfp.fuse_b, 4 * c, rng);
  m.beta = Tensor<T>({1}, static_cast<T>(cfg.beta_init));
  return m;
}

// Parameter-shaped zero mirror used as the gradient accumulator.
template <typename T>
Model<T> zeros_like(const Model<T>& m) {
  Model<T> g;
  g.cfg = m.cfg;
  for (std::size_t i = 0; i < m.bb_kernel.size(); ++i) {
    g.bb_kernel.emplace_back(m.bb_kernel[i].shape());
    g.bb_bias.emplace_back(m.bb_bias[i].shape());
  }
  g.head1_w = Tensor<T>(m.head1_w.shape());
  g.head1_b = Tensor<T>(m.head1_b.shape());
  g.head2_w = Tensor<T>(m.head2_w.shape());
  g.head2_b = Tensor<T>(m.head2_b.shape());
  g.bfp = make_bfp_params<T>(m.cfg.channels, m.cfg.scan_k);
  g.bfp.gate_first_stage = m.bfp.gate_first_stage;
  g.beta = Tensor<T>({1});
  return g;
}

template <typename T>
struct ModelState {
  std::vector<Tensor<T>> bb_out;  // post-ReLU output of every backbone layer
  Tensor<T> image;
  Tensor<T> scores2;  // (N+1) x H x W
  Tensor<T> soft2;
  Tensor<T> b, p;     // empty when ungated
  BfpState<T> bfp;
  Tensor<T> bfp_out;
  Tensor<T> scores1;  // N x H x W
};

template <typename T>
ModelState<T> model_forward(const Model<T>& m, const Tensor<T>& image,
                            unsigned threads = 1) {
  ModelState<T> st;
  st.image = image;
  const Tensor<T>* x = &image;
  for (std::size_t l = 0; l < m.bb_kernel.size(); ++l) {
    Tensor<T> z = conv2d(*x, m.bb_kernel[l], m.bb_bias[l], m.cfg.dilations[l]);
    st.bb_out.push_back(relu(z));
    x = &st.bb_out.back();
  }
  const Tensor<T>& features = st.bb_out.back();
  st.scores2 = pointwise_linear(features, m.head2_w, m.head2_b);
  st.soft2 = softmax_channels(st.scores2);
  const std::size_t n = static_cast<std::size_t>(m.cfg.num_classes);
  const std::size_t hw = features.extent(1) * features.extent(2);
  st.b = Tensor<T>({features.extent(1), features.extent(2)});
  std::copy(st.soft2.data() + n * hw, st.soft2.data() + (n + 1) * hw,
            st.b.data());
  const Tensor<T>* p = nullptr;
  if (m.cfg.gated) {
    st.p = propagation_confidence(st.b, m.gate());
    p = &st.p;
  }
  auto bfp_res = bfp_forward(features, m.bfp, p, threads);
  st.bfp = std::move(bfp_res.state);
  st.bfp_out = std::move(bfp_res.out);
  st.scores1 = pointwise_linear(st.bfp_out, m.head1_w, m.head1_b);
  return st;
}

template <typename T>
LabelMap predict_labels(const Tensor<T>& scores, int ignore_value = 255) {
  const std::size_t c = scores.extent(0), h = scores.extent(1),
                    w = scores.extent(2);
  const std::size_t hw = h * w;
  LabelMap out(h, w, static_cast<int>(c), ignore_value);
  for (std::size_t px = 0; px < hw; ++px) {
    int best = 0;
    T bv = scores[px];
    for (std::size_t ch = 1; ch < c; ++ch) {
      if (scores[ch * hw + px] > bv) {
        bv = scores[ch * hw + px];
        best = static_cast<int>(ch);
      }
    }
    out.values[px] = best;
  }
  return out;
}

template <typename T>
struct LossBreakdown {
  T total, loss1, loss2;
};

// Total loss = loss1 + lambda * loss2; gradients are accumulated into the
// parameter mirror `grads` (beta gradient lands in grads.beta even when
// beta is frozen -- the optimizer just never sees it).
template <typename T>
LossBreakdown<T> model_loss_and_grads(const Model<T>& m,
                                      const ModelState<T>& st,
                                      const LabelMap& gt,
                                      const LabelMap& gt_boundary,
                                      Model<T>* grads) {
  LossBreakdown<T> loss{};
  loss.loss1 = cross_entropy_masked(st.scores1, gt);
  loss.loss2 = cross_entropy_masked(st.scores2, gt_boundary);
  loss.total = loss.loss1 + static_cast<T>(m.cfg.lambda) * loss.loss2;
  if (!grads) return loss;

  const Tensor<T>& features = st.bb_out.back();
  const std::size_t n = static_cast<std::size_t>(m.cfg.num_classes);
  const std::size_t hw = features.extent(1) * features.extent(2);

  // Head 1 and the BFP module.
  Tensor<T> d_s1 = cross_entropy_masked_vjp(T(1), st.scores1, gt);
  auto h1 = pointwise_linear_vjp(d_s1, st.bfp_out, m.head1_w);
  grads->head1_w += h1.weight;
  grads->head1_b += h1.bias;
  auto bg = bfp_backward(h1.input, m.bfp, st.bfp);
  for (auto [dst, src] :
       {std::pair{&grads->bfp.s, &bg.s}, {&grads->bfp.n, &bg.n},
        {&grads->bfp.se, &bg.se}, {&grads->bfp.sw, &bg.sw},
        {&grads->bfp.ne, &bg.ne}, {&grads->bfp.nw, &bg.nw}}) {
    dst->U += src->U;
    dst->W += src->W;
    if (dst->What.size() != 0) dst->What += src->What;
    dst->delta += src->delta;
  }
  grads->bfp.fuse_w += bg.fuse_w;
  grads->bfp.fuse_b += bg.fuse_b;

  // Head 2: cross-entropy path plus (when gated) the gating path through p.
  Tensor<T> d_s2 =
      cross_entropy_masked_vjp(static_cast<T>(m.cfg.lambda), st.scores2,
                               gt_boundary);
  if (m.cfg.gated && bg.p.size() != 0) {
    auto gate_g = propagation_confidence_vjp(bg.p, st.b, m.gate());
    grads->beta[0] += gate_g.beta;
    if (!m.cfg.stop_gradient_into_boundary) {
      Tensor<T> up(st.soft2.shape());
      std::copy(gate_g.b.data(), gate_g.b.data() + hw, up.data() + n * hw);
      d_s2 += softmax_channels_vjp(up, st.soft2);
    }
  }
  auto h2 = pointwise_linear_vjp(d_s2, features, m.head2_w);
  grads->head2_w += h2.weight;
  grads->head2_b += h2.bias;

  // Backbone: features feed both the BFP module and head 2.
  Tensor<T> d_x = bg.features;
  d_x += h2.input;
  for (std::size_t l = m.bb_kernel.size(); l-- > 0;) {
    Tensor<T> d_pre = relu_vjp(d_x, st.bb_out[l]);
    const Tensor<T>& layer_in = l == 0 ? st.image : st.bb_out[l - 1];
    auto cg = conv2d_vjp(d_pre, layer_in, m.bb_kernel[l], m.cfg.dilations[l]);
    grads->bb_kernel[l] += cg.kernel;
    grads->bb_bias[l] += cg.bias;
    d_x = std::move(cg.input);
  }
  return loss;
}

}  // namespace bfp
