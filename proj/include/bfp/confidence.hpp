#pragma once

#include <algorithm>
#include <cmath>

#include "bfp/ops.hpp"
#include "bfp/tensor.hpp"

namespace bfp {

// Gate constants are fixed; beta is the learnable mixing weight, kept in
// [0,1] by clamping after every optimizer step so p stays a probability.
template <typename T>
struct GateParams {
  T alpha = T(20);
  T gamma = T(4);
  T beta = T(1);
};

// Channel N of the per-pixel softmax over (N+1)-class scores.
template <typename T>
Tensor<T> boundary_confidence(const Tensor<T>& scores) {
  if (scores.extent(0) < 2)
    detail::fail("boundary_confidence: needs at least 2 channels");
  const std::size_t c = scores.extent(0);
  const std::size_t h = scores.extent(1), w = scores.extent(2);
  Tensor<T> soft = softmax_channels(scores);
  Tensor<T> b({h, w});
  const T* last = soft.data() + (c - 1) * h * w;
  std::copy(last, last + h * w, b.data());
  return b;
}

// Computes alpha*b - gamma with the product rounded before the subtraction.
// FMA contraction would keep the unrounded product, so b = gamma/alpha would
// no longer map to exactly 1 - beta/2.
template <typename T>
#if defined(__GNUC__) && !defined(__clang__)
__attribute__((optimize("fp-contract=off")))
#endif
inline T gate_argument(T b, const GateParams<T>& gp) {
  return gp.alpha * b - gp.gamma;
}

// p = 1 - beta * sigmoid(alpha*b - gamma), elementwise.
template <typename T>
Tensor<T> propagation_confidence(const Tensor<T>& b, const GateParams<T>& gp) {
  Tensor<T> p(b.shape());
  for (std::size_t i = 0; i < b.size(); ++i)
    p[i] = T(1) - gp.beta * sigmoid_scalar(gate_argument(b[i], gp));
  return p;
}

template <typename T>
struct GateGrads {
  Tensor<T> b;  // d loss / d boundary confidence
  T beta;       // d loss / d beta
};

template <typename T>
GateGrads<T> propagation_confidence_vjp(const Tensor<T>& upstream,
                                        const Tensor<T>& b,
                                        const GateParams<T>& gp) {
  upstream.require_same_shape(b, "propagation_confidence_vjp");
  GateGrads<T> g{Tensor<T>(b.shape()), T(0)};
  for (std::size_t i = 0; i < b.size(); ++i) {
    const T s = sigmoid_scalar(gate_argument(b[i], gp));
    g.b[i] = -upstream[i] * gp.beta * s * (T(1) - s) * gp.alpha;
    g.beta -= upstream[i] * s;
  }
  return g;
}

template <typename T>
void clamp_beta(GateParams<T>& gp) {
  gp.beta = std::clamp(gp.beta, T(0), T(1));
}

}  // namespace bfp
