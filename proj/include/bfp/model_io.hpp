#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "bfp/model.hpp"
#include "bfp/tensor_io.hpp"

namespace bfp {

namespace detail {

// Every tensor of the model in a fixed order, independent of which ones the
// optimizer currently trains, so saved files stay readable across configs.
template <typename T>
std::vector<Tensor<T>*> all_model_tensors(Model<T>& m) {
  std::vector<Tensor<T>*> out;
  for (std::size_t i = 0; i < m.bb_kernel.size(); ++i) {
    out.push_back(&m.bb_kernel[i]);
    out.push_back(&m.bb_bias[i]);
  }
  out.push_back(&m.head1_w);
  out.push_back(&m.head1_b);
  out.push_back(&m.head2_w);
  out.push_back(&m.head2_b);
  for (ScanParams<T>* sp : {&m.bfp.s, &m.bfp.n, &m.bfp.se, &m.bfp.sw,
                            &m.bfp.ne, &m.bfp.nw}) {
    out.push_back(&sp->U);
    out.push_back(&sp->W);
    if (sp->What.size() != 0) out.push_back(&sp->What);
    out.push_back(&sp->delta);
  }
  out.push_back(&m.bfp.fuse_w);
  out.push_back(&m.bfp.fuse_b);
  out.push_back(&m.beta);
  return out;
}

}  // namespace detail

template <typename T>
void save_model(const std::string& path, Model<T>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) detail::fail("cannot open for writing: " + path);
  for (Tensor<T>* t : detail::all_model_tensors(m)) write_tensor(os, *t);
  if (!os) detail::fail("write failed: " + path);
}

// Loads weights into a model freshly built from `cfg`; shapes must agree.
template <typename T>
Model<T> load_model(const std::string& path, const ModelConfig& cfg) {
  Model<T> m = build_model<T>(cfg);
  std::ifstream is(path, std::ios::binary);
  if (!is) detail::fail("cannot open: " + path);
  for (Tensor<T>* t : detail::all_model_tensors(m)) {
    Tensor<T> read = read_tensor<T>(is);
    if (read.shape() != t->shape())
      detail::fail("model file does not match config: " + path);
    *t = std::move(read);
  }
  return m;
}

}  // namespace bfp
