#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "bfp/tensor.hpp"

namespace bfp {

enum class Axis { Row, Column };  // Row: along width. Column: along height.

namespace detail {

template <typename T>
void check_conv1d_shapes(const Tensor<T>& in, const Tensor<T>& ker,
                         const Tensor<T>& bias) {
  if (in.rank() != 3 || ker.rank() != 3) {
    fail("conv1d_axis: input must be CxHxW " + shape_str(in.shape()) +
         ", kernel CoutxCinxk " + shape_str(ker.shape()));
  }
  if (ker.extent(1) != in.extent(0)) {
    fail("conv1d_axis: kernel Cin=" + std::to_string(ker.extent(1)) +
         " does not match input C=" + std::to_string(in.extent(0)));
  }
  if (ker.extent(2) % 2 == 0) {
    fail("conv1d_axis: kernel extent k=" + std::to_string(ker.extent(2)) +
         " must be odd");
  }
  if (bias.size() != ker.extent(0)) {
    fail("conv1d_axis: bias size " + std::to_string(bias.size()) +
         " does not match Cout=" + std::to_string(ker.extent(0)));
  }
}

}  // namespace detail

// 1D cross-correlation of a line held in strided storage.
// in element (ci, t)  = in[ci * in_cstride + t * estride]
// out element (co, t) = out[co * out_cstride + t * estride]
// Zero padding of (k-1)/2 on both ends; accumulates into out.
// Only output positions in [t_begin, t_end) are touched, so disjoint ranges
// may run on different threads with bit-identical results.
template <typename T>
void conv1d_line_accum_range(const T* in, T* out, const T* ker,
                             std::size_t cin, std::size_t cout,
                             std::size_t len, std::size_t k,
                             std::size_t in_cstride, std::size_t out_cstride,
                             std::size_t estride, std::size_t t_begin,
                             std::size_t t_end) {
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t co = 0; co < cout; ++co) {
    T* orow = out + co * out_cstride;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* irow = in + ci * in_cstride;
      const T* kk = ker + (co * cin + ci) * k;
      for (std::size_t u = 0; u < k; ++u) {
        const T w = kk[u];
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(u) - off;
        const std::size_t lo = std::max(
            t_begin, shift < 0 ? static_cast<std::size_t>(-shift) : 0);
        const std::size_t hi = std::min(
            t_end, shift > 0 ? len - static_cast<std::size_t>(shift) : len);
        for (std::size_t t = lo; t < hi; ++t) {
          orow[t * estride] += w * irow[(t + shift) * estride];
        }
      }
    }
  }
}

template <typename T>
void conv1d_line_accum(const T* in, T* out, const T* ker, std::size_t cin,
                       std::size_t cout, std::size_t len, std::size_t k,
                       std::size_t in_cstride, std::size_t out_cstride,
                       std::size_t estride) {
  conv1d_line_accum_range(in, out, ker, cin, cout, len, k, in_cstride,
                          out_cstride, estride, std::size_t(0), len);
}

// Blocked out-of-place transpose of a rows x cols plane with explicit row /
// column strides:
//   dst[c * dst_cstride + r] = src[r * src_rstride + c]
template <typename T>
void transpose_plane(const T* src, T* dst, std::size_t rows, std::size_t cols,
                     std::size_t src_rstride, std::size_t dst_cstride) {
  constexpr std::size_t B = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += B) {
    const std::size_t r1 = std::min(rows, r0 + B);
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c)
          dst[c * dst_cstride + r] = src[r * src_rstride + c];
    }
  }
}

// Register-blocked k=1 special case of conv1d_line_accum_range:
//   out[co][t] += sum_ci w[co*cin+ci] * in[ci*in_stride + t],  t in [t0,t1)
// Per-element accumulation order (ci ascending) matches the generic kernel,
// so results are bit-identical regardless of blocking or thread chunking.
namespace detail {

// One register tile: one output channel by B positions, accumulating over all
// cin input channels with the accumulators held in registers.
template <std::size_t B, typename T>
inline void matmul_tile(const T* in, T* orow, const T* wrow, std::size_t cin,
                        std::size_t in_stride, std::size_t t) {
  T acc[B];
  for (std::size_t j = 0; j < B; ++j) acc[j] = orow[t + j];
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const T wv = wrow[ci];
    const T* irow = in + ci * in_stride + t;
    for (std::size_t j = 0; j < B; ++j) acc[j] += wv * irow[j];
  }
  for (std::size_t j = 0; j < B; ++j) orow[t + j] = acc[j];
}

}  // namespace detail

// Scan callers pad their lines so [t0, t1) covers whole 32-wide tiles; the
// smaller tail tiles only run for unpadded callers such as the pointwise
// projection.
template <typename T>
void matmul_line_accum(const T* in, T* out, const T* wmat, std::size_t cin,
                       std::size_t cout, std::size_t in_stride,
                       std::size_t out_stride, std::size_t t0, std::size_t t1,
                       std::size_t w_rstride = 0) {
  if (w_rstride == 0) w_rstride = cin;
  for (std::size_t co = 0; co < cout; ++co) {
    T* orow = out + co * out_stride;
    const T* wrow = wmat + co * w_rstride;
    std::size_t t = t0;
    for (; t + 32 <= t1; t += 32)
      detail::matmul_tile<32>(in, orow, wrow, cin, in_stride, t);
    for (; t + 8 <= t1; t += 8)
      detail::matmul_tile<8>(in, orow, wrow, cin, in_stride, t);
    for (; t + 2 <= t1; t += 2)
      detail::matmul_tile<2>(in, orow, wrow, cin, in_stride, t);
    for (; t < t1; ++t)
      detail::matmul_tile<1>(in, orow, wrow, cin, in_stride, t);
  }
}

// Kernel adjoint of conv1d_line_accum: accumulates d_ker from d_out and the
// saved input line. The input adjoint is conv1d_line_transpose_accum below.
template <typename T>
void conv1d_line_kernel_vjp_accum(const T* in, const T* d_out, T* d_ker,
                                  std::size_t cin, std::size_t cout,
                                  std::size_t len, std::size_t k,
                                  std::size_t in_cstride,
                                  std::size_t out_cstride,
                                  std::size_t estride) {
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t co = 0; co < cout; ++co) {
    const T* grow = d_out + co * out_cstride;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* irow = in + ci * in_cstride;
      for (std::size_t u = 0; u < k; ++u) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(u) - off;
        const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const std::size_t hi =
            shift > 0 ? len - static_cast<std::size_t>(shift) : len;
        T ksum = T(0);
        for (std::size_t t = lo; t < hi; ++t) {
          ksum += grow[t * estride] * irow[(t + shift) * estride];
        }
        d_ker[(co * cin + ci) * k + u] += ksum;
      }
    }
  }
}

// Input adjoint of conv1d_line_accum: transpose correlation with the kernel.
template <typename T>
void conv1d_line_transpose_accum(const T* d_out, T* d_in, const T* ker,
                                 std::size_t cin, std::size_t cout,
                                 std::size_t len, std::size_t k,
                                 std::size_t in_cstride,
                                 std::size_t out_cstride,
                                 std::size_t estride) {
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    T* dirow = d_in + ci * in_cstride;
    for (std::size_t co = 0; co < cout; ++co) {
      const T* grow = d_out + co * out_cstride;
      const T* kk = ker + (co * cin + ci) * k;
      for (std::size_t u = 0; u < k; ++u) {
        const T w = kk[u];
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(u) - off;
        // forward: out[t] += w * in[t + shift]  =>  d_in[s] += w * d_out[s - shift]
        const std::size_t lo = shift > 0 ? static_cast<std::size_t>(shift) : 0;
        const std::size_t hi =
            shift < 0 ? len - static_cast<std::size_t>(-shift) : len;
        for (std::size_t s = lo; s < hi; ++s) {
          dirow[s * estride] += w * grow[(s - shift) * estride];
        }
      }
    }
  }
}

// 1D cross-correlation of every row (Axis::Row) or column (Axis::Column) of a
// CxHxW tensor, mixing channels, zero padding of (k-1)/2.
template <typename T>
Tensor<T> conv1d_axis(const Tensor<T>& in, const Tensor<T>& ker,
                      const Tensor<T>& bias, Axis axis) {
  detail::check_conv1d_shapes(in, ker, bias);
  const std::size_t cin = in.extent(0), h = in.extent(1), w = in.extent(2);
  const std::size_t cout = ker.extent(0), k = ker.extent(2);
  Tensor<T> out({cout, h, w});
  for (std::size_t co = 0; co < cout; ++co) {
    T* p = out.data() + co * h * w;
    std::fill(p, p + h * w, bias[co]);
  }
  if (axis == Axis::Row) {
    for (std::size_t y = 0; y < h; ++y) {
      conv1d_line_accum(in.data() + y * w, out.data() + y * w, ker.data(), cin,
                        cout, w, k, h * w, h * w, std::size_t(1));
    }
  } else {
    for (std::size_t x = 0; x < w; ++x) {
      conv1d_line_accum(in.data() + x, out.data() + x, ker.data(), cin, cout,
                        h, k, h * w, h * w, w);
    }
  }
  return out;
}

template <typename T>
struct Conv1dGrads {
  Tensor<T> input, kernel, bias;
};

template <typename T>
Conv1dGrads<T> conv1d_axis_vjp(const Tensor<T>& upstream, const Tensor<T>& in,
                               const Tensor<T>& ker, Axis axis) {
  const std::size_t cin = in.extent(0), h = in.extent(1), w = in.extent(2);
  const std::size_t cout = ker.extent(0), k = ker.extent(2);
  if (upstream.shape() != std::vector<std::size_t>{cout, h, w}) {
    detail::fail("conv1d_axis_vjp: upstream shape " +
                 detail::shape_str(upstream.shape()) + " != output shape [" +
                 std::to_string(cout) + "x" + std::to_string(h) + "x" +
                 std::to_string(w) + "]");
  }
  Conv1dGrads<T> g{Tensor<T>(in.shape()), Tensor<T>(ker.shape()),
                   Tensor<T>({cout})};
  for (std::size_t co = 0; co < cout; ++co) {
    const T* p = upstream.data() + co * h * w;
    T acc = T(0);
    for (std::size_t i = 0; i < h * w; ++i) acc += p[i];
    g.bias[co] = acc;
  }
  const std::size_t len = axis == Axis::Row ? w : h;
  const std::size_t estride = axis == Axis::Row ? 1 : w;
  const std::size_t nlines = axis == Axis::Row ? h : w;
  const std::size_t lstride = axis == Axis::Row ? w : 1;
  for (std::size_t l = 0; l < nlines; ++l) {
    const std::size_t base = l * lstride;
    conv1d_line_kernel_vjp_accum(in.data() + base, upstream.data() + base,
                                 g.kernel.data(), cin, cout, len, k, h * w,
                                 h * w, estride);
    conv1d_line_transpose_accum(upstream.data() + base, g.input.data() + base,
                                ker.data(), cin, cout, len, k, h * w, h * w,
                                estride);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

// Uses the forward output: out > 0 iff pre-activation > 0.
template <typename T>
Tensor<T> relu_vjp(const Tensor<T>& upstream, const Tensor<T>& out) {
  upstream.require_same_shape(out, "relu_vjp");
  Tensor<T> g(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    g[i] = out[i] > T(0) ? upstream[i] : T(0);
  return g;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
  return out;
}

template <typename T>
Tensor<T> sigmoid_vjp(const Tensor<T>& upstream, const Tensor<T>& out) {
  upstream.require_same_shape(out, "sigmoid_vjp");
  Tensor<T> g(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    g[i] = upstream[i] * out[i] * (T(1) - out[i]);
  return g;
}

// ---------------------------------------------------------------------------
// Per-pixel channel softmax, max-stabilized.

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& scores) {
  const std::size_t c = scores.extent(0), h = scores.extent(1),
                    w = scores.extent(2);
  const std::size_t hw = h * w;
  Tensor<T> out(scores.shape());
  for (std::size_t px = 0; px < hw; ++px) {
    T m = scores[px];
    for (std::size_t ch = 1; ch < c; ++ch)
      m = std::max(m, scores[ch * hw + px]);
    T z = T(0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T e = std::exp(scores[ch * hw + px] - m);
      out[ch * hw + px] = e;
      z += e;
    }
    const T inv = T(1) / z;
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + px] *= inv;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_channels_vjp(const Tensor<T>& upstream,
                               const Tensor<T>& softmax_out) {
  upstream.require_same_shape(softmax_out, "softmax_channels_vjp");
  const std::size_t c = softmax_out.extent(0);
  const std::size_t hw = softmax_out.extent(1) * softmax_out.extent(2);
  Tensor<T> g(softmax_out.shape());
  for (std::size_t px = 0; px < hw; ++px) {
    T dot = T(0);
    for (std::size_t ch = 0; ch < c; ++ch)
      dot += upstream[ch * hw + px] * softmax_out[ch * hw + px];
    for (std::size_t ch = 0; ch < c; ++ch) {
      g[ch * hw + px] =
          softmax_out[ch * hw + px] * (upstream[ch * hw + px] - dot);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Masked per-pixel cross entropy over channel scores.
// Mean over non-ignored pixels of -log softmax(scores)[target]; empty mean
// is defined as 0.

template <typename T>
T cross_entropy_masked(const Tensor<T>& scores, const LabelMap& target) {
  const std::size_t c = scores.extent(0), h = scores.extent(1),
                    w = scores.extent(2);
  if (target.height != h || target.width != w) {
    detail::fail("cross_entropy_masked: target " +
                 std::to_string(target.height) + "x" +
                 std::to_string(target.width) + " vs scores " +
                 detail::shape_str(scores.shape()));
  }
  const std::size_t hw = h * w;
  T total = T(0);
  std::size_t count = 0;
  for (std::size_t px = 0; px < hw; ++px) {
    const int t = target.values[px];
    if (t == target.ignore_value) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      detail::fail("cross_entropy_masked: target class " + std::to_string(t) +
                   " out of range [0," + std::to_string(c) + ")");
    }
    T m = scores[px];
    for (std::size_t ch = 1; ch < c; ++ch)
      m = std::max(m, scores[ch * hw + px]);
    T z = T(0);
    for (std::size_t ch = 0; ch < c; ++ch)
      z += std::exp(scores[ch * hw + px] - m);
    total += std::log(z) + m - scores[static_cast<std::size_t>(t) * hw + px];
    ++count;
  }
  return count == 0 ? T(0) : total / static_cast<T>(count);
}

// Gradient of cross_entropy_masked w.r.t. scores, scaled by upstream.
template <typename T>
Tensor<T> cross_entropy_masked_vjp(T upstream, const Tensor<T>& scores,
                                   const LabelMap& target) {
  const std::size_t c = scores.extent(0);
  const std::size_t hw = scores.extent(1) * scores.extent(2);
  Tensor<T> g(scores.shape());
  std::size_t count = 0;
  for (std::size_t px = 0; px < hw; ++px)
    if (target.values[px] != target.ignore_value) ++count;
  if (count == 0) return g;
  const T scale = upstream / static_cast<T>(count);
  for (std::size_t px = 0; px < hw; ++px) {
    const int t = target.values[px];
    if (t == target.ignore_value) continue;
    T m = scores[px];
    for (std::size_t ch = 1; ch < c; ++ch)
      m = std::max(m, scores[ch * hw + px]);
    T z = T(0);
    for (std::size_t ch = 0; ch < c; ++ch)
      z += std::exp(scores[ch * hw + px] - m);
    const T inv = T(1) / z;
    for (std::size_t ch = 0; ch < c; ++ch) {
      T p = std::exp(scores[ch * hw + px] - m) * inv;
      if (static_cast<std::size_t>(t) == ch) p -= T(1);
      g[ch * hw + px] = scale * p;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Per-pixel linear map (1x1 convolution): out[co] = sum_ci wt[co][ci]*in[ci]+b.

template <typename T>
Tensor<T> pointwise_linear(const Tensor<T>& in, const Tensor<T>& wt,
                           const Tensor<T>& bias) {
  const std::size_t cin = in.extent(0);
  const std::size_t hw = in.extent(1) * in.extent(2);
  const std::size_t cout = wt.extent(0);
  if (wt.extent(1) != cin) {
    detail::fail("pointwise_linear: weight Cin=" + std::to_string(wt.extent(1)) +
                 " vs input C=" + std::to_string(cin));
  }
  Tensor<T> out({cout, in.extent(1), in.extent(2)});
  for (std::size_t co = 0; co < cout; ++co) {
    T* orow = out.data() + co * hw;
    std::fill(orow, orow + hw, bias[co]);
  }
  // Tile over positions so the cin-wide input slab stays cache-resident while
  // it is reused for every output channel.  Tiling does not change the
  // per-element accumulation order.
  constexpr std::size_t kTile = 512;
  for (std::size_t t0 = 0; t0 < hw; t0 += kTile) {
    const std::size_t t1 = std::min(hw, t0 + kTile);
    matmul_line_accum(in.data(), out.data(), wt.data(), cin, cout, hw, hw, t0,
                      t1);
  }
  return out;
}

template <typename T>
struct PointwiseGrads {
  Tensor<T> input, weight, bias;
};

template <typename T>
PointwiseGrads<T> pointwise_linear_vjp(const Tensor<T>& upstream,
                                       const Tensor<T>& in,
                                       const Tensor<T>& wt) {
  const std::size_t cin = in.extent(0);
  const std::size_t hw = in.extent(1) * in.extent(2);
  const std::size_t cout = wt.extent(0);
  PointwiseGrads<T> g{Tensor<T>(in.shape()), Tensor<T>(wt.shape()),
                      Tensor<T>({cout})};
  for (std::size_t co = 0; co < cout; ++co) {
    const T* grow = upstream.data() + co * hw;
    T acc = T(0);
    for (std::size_t px = 0; px < hw; ++px) acc += grow[px];
    g.bias[co] = acc;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T w = wt[co * cin + ci];
      const T* irow = in.data() + ci * hw;
      T* dirow = g.input.data() + ci * hw;
      T wacc = T(0);
      for (std::size_t px = 0; px < hw; ++px) {
        wacc += grow[px] * irow[px];
        dirow[px] += w * grow[px];
      }
      g.weight[co * cin + ci] = wacc;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dilated 2D convolution, stride 1, zero "same" padding.
// kernel: Cout x Cin x kh x kw.

template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& ker,
                 const Tensor<T>& bias, std::size_t dilation) {
  const std::size_t cin = in.extent(0), h = in.extent(1), w = in.extent(2);
  const std::size_t cout = ker.extent(0), kh = ker.extent(2),
                    kw = ker.extent(3);
  if (ker.extent(1) != cin) {
    detail::fail("conv2d: kernel Cin=" + std::to_string(ker.extent(1)) +
                 " vs input C=" + std::to_string(cin));
  }
  const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(kh / 2 * dilation);
  const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(kw / 2 * dilation);
  Tensor<T> out({cout, h, w});
  for (std::size_t co = 0; co < cout; ++co) {
    T* oplane = out.data() + co * h * w;
    std::fill(oplane, oplane + h * w, bias[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* iplane = in.data() + ci * h * w;
      const T* kk = ker.data() + (co * cin + ci) * kh * kw;
      for (std::size_t uy = 0; uy < kh; ++uy) {
        const std::ptrdiff_t dy =
            static_cast<std::ptrdiff_t>(uy * dilation) - oy;
        for (std::size_t ux = 0; ux < kw; ++ux) {
          const std::ptrdiff_t dx =
              static_cast<std::ptrdiff_t>(ux * dilation) - ox;
          const T kw_val = kk[uy * kw + ux];
          const std::size_t ylo = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
          const std::size_t yhi =
              dy > 0 ? h - static_cast<std::size_t>(dy) : h;
          const std::size_t xlo = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t xhi =
              dx > 0 ? w - static_cast<std::size_t>(dx) : w;
          for (std::size_t y = ylo; y < yhi; ++y) {
            T* orow = oplane + y * w;
            const T* irow = iplane + (y + dy) * w + dx;
            for (std::size_t x = xlo; x < xhi; ++x)
              orow[x] += kw_val * irow[x];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> input, kernel, bias;
};

template <typename T>
Conv2dGrads<T> conv2d_vjp(const Tensor<T>& upstream, const Tensor<T>& in,
                          const Tensor<T>& ker, std::size_t dilation) {
  const std::size_t cin = in.extent(0), h = in.extent(1), w = in.extent(2);
  const std::size_t cout = ker.extent(0), kh = ker.extent(2),
                    kw = ker.extent(3);
  const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(kh / 2 * dilation);
  const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(kw / 2 * dilation);
  Conv2dGrads<T> g{Tensor<T>(in.shape()), Tensor<T>(ker.shape()),
                   Tensor<T>({cout})};
  for (std::size_t co = 0; co < cout; ++co) {
    const T* gplane = upstream.data() + co * h * w;
    T acc = T(0);
    for (std::size_t i = 0; i < h * w; ++i) acc += gplane[i];
    g.bias[co] = acc;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* iplane = in.data() + ci * h * w;
      T* diplane = g.input.data() + ci * h * w;
      const T* kk = ker.data() + (co * cin + ci) * kh * kw;
      T* dkk = g.kernel.data() + (co * cin + ci) * kh * kw;
      for (std::size_t uy = 0; uy < kh; ++uy) {
        const std::ptrdiff_t dy =
            static_cast<std::ptrdiff_t>(uy * dilation) - oy;
        for (std::size_t ux = 0; ux < kw; ++ux) {
          const std::ptrdiff_t dx =
              static_cast<std::ptrdiff_t>(ux * dilation) - ox;
          const T kw_val = kk[uy * kw + ux];
          const std::size_t ylo = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
          const std::size_t yhi =
              dy > 0 ? h - static_cast<std::size_t>(dy) : h;
          const std::size_t xlo = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t xhi =
              dx > 0 ? w - static_cast<std::size_t>(dx) : w;
          T kacc = T(0);
          for (std::size_t y = ylo; y < yhi; ++y) {
            const T* grow = gplane + y * w;
            const T* irow = iplane + (y + dy) * w + dx;
            T* dirow = diplane + (y + dy) * w + dx;
            for (std::size_t x = xlo; x < xhi; ++x) {
              kacc += grow[x] * irow[x];
              dirow[x] += kw_val * grow[x];
            }
          }
          dkk[uy * kw + ux] += kacc;
        }
      }
    }
  }
  return g;
}

}  // namespace bfp
