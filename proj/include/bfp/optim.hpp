#pragma once

#include <cmath>
#include <vector>

#include "bfp/rng.hpp"
#include "bfp/tensor.hpp"

namespace bfp {

// Momentum SGD with the poly learning-rate schedule
//   lr = base_lr * (1 - iter/total_iters)^0.9
// Weight decay is added to the gradient before the momentum update
// (classical coupled form). Momentum 0.9 and weight decay 1e-4 defaults.
template <typename T>
struct OptimizerState {
  T base_lr = T(0.01);
  std::size_t total_iters = 1;
  T momentum = T(0.9);
  T weight_decay = T(1e-4);
  std::vector<Tensor<T>> velocity;  // one buffer per parameter, zero-init

  void init(const std::vector<Tensor<T>*>& params) {
    velocity.clear();
    velocity.reserve(params.size());
    for (const auto* p : params) velocity.emplace_back(p->shape());
  }
};

template <typename T>
T poly_lr(T base_lr, std::size_t iter, std::size_t total_iters) {
  const T frac = T(1) - static_cast<T>(iter) / static_cast<T>(total_iters);
  return base_lr * std::pow(frac, T(0.9));
}

template <typename T>
void sgd_poly_step(const std::vector<Tensor<T>*>& params,
                   const std::vector<const Tensor<T>*>& grads,
                   OptimizerState<T>& state, std::size_t iter) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    detail::fail("sgd_poly_step: parameter/gradient/state count mismatch");
  }
  if (iter >= state.total_iters) {
    detail::fail("sgd_poly_step: iter " + std::to_string(iter) +
                 " >= total_iters " + std::to_string(state.total_iters));
  }
  const T lr = poly_lr(state.base_lr, iter, state.total_iters);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = *grads[i];
    Tensor<T>& v = state.velocity[i];
    p.require_same_shape(g, "sgd_poly_step");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const T eff = g[j] + state.weight_decay * p[j];
      v[j] = state.momentum * v[j] + eff;
      p[j] -= lr * v[j];
    }
  }
}

// Scaled uniform init in +-sqrt(1/fan_in).
template <typename T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace bfp
