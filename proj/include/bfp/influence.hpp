#pragma once

#include <cmath>
#include <functional>

#include "bfp/labels.hpp"
#include "bfp/tensor.hpp"

namespace bfp {

// Dependency-structure fingerprint of a scan: which input pixels reach which
// output pixels. Built by perturbing one input pixel at a time (channel 0,
// +eps) and recording every output pixel that moves, so one table costs
// H*W + 1 forward evaluations and serves all probes.
template <typename T>
class InfluenceTable {
 public:
  using ScanFn = std::function<Tensor<T>(const Tensor<T>&)>;

  InfluenceTable(const ScanFn& scan, const Tensor<T>& base, T eps, T tol)
      : h_(base.extent(1)), w_(base.extent(2)), bits_(h_ * w_ * h_ * w_, 0) {
    const Tensor<T> base_out = scan(base);
    const std::size_t hw = h_ * w_;
    const std::size_t cout = base_out.extent(0);
    Tensor<T> probe = base;
    for (std::size_t in_px = 0; in_px < hw; ++in_px) {
      probe[in_px] = base[in_px] + eps;
      const Tensor<T> out = scan(probe);
      probe[in_px] = base[in_px];
      for (std::size_t out_px = 0; out_px < hw; ++out_px) {
        bool moved = false;
        for (std::size_t c = 0; c < cout && !moved; ++c)
          moved = std::abs(out[c * hw + out_px] - base_out[c * hw + out_px]) > tol;
        if (moved) bits_[out_px * hw + in_px] = 1;
      }
    }
  }

  // Mask of input pixels influencing output (r, c).
  Mask mask_for(std::size_t r, std::size_t c) const {
    Mask m(h_, w_);
    const std::size_t hw = h_ * w_;
    const std::size_t base = (r * w_ + c) * hw;
    for (std::size_t i = 0; i < hw; ++i) m.values[i] = bits_[base + i];
    return m;
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

  bool operator==(const InfluenceTable& o) const { return bits_ == o.bits_; }

 private:
  std::size_t h_, w_;
  std::vector<std::uint8_t> bits_;
};

template <typename T>
Mask influence_mask(const typename InfluenceTable<T>::ScanFn& scan,
                    const Tensor<T>& base, std::size_t probe_r,
                    std::size_t probe_c, T eps = T(1e-3), T tol = T(1e-9)) {
  return InfluenceTable<T>(scan, base, eps, tol).mask_for(probe_r, probe_c);
}

}  // namespace bfp
