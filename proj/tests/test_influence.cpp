#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "bfp/influence.hpp"
#include "bfp/scan.hpp"

using bfp::ScanDirection;
using bfp::Tensor;

namespace {

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937& g, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(d(g));
}

// Positive generic weights with a bias large enough to keep every ReLU
// active, so the dependency structure is fully visible.
bfp::DagParams<double> linear_dag(std::size_t c, std::mt19937& g) {
  auto dp = bfp::make_dag_params<double>(c, c);
  fill_uniform(dp.U, g, 0.05, 0.25);
  fill_uniform(dp.Wv, g, 0.05, 0.2);
  fill_uniform(dp.Wh, g, 0.05, 0.2);
  fill_uniform(dp.Wd, g, 0.05, 0.2);
  for (auto& v : dp.delta.values()) v = 10.0;
  return dp;
}

bfp::ScanParams<double> linear_scan(std::size_t c, bool second,
                                    std::mt19937& g) {
  auto sp = bfp::make_scan_params<double>(c, c, 1, second);
  fill_uniform(sp.U, g, 0.05, 0.25);
  fill_uniform(sp.W, g, 0.05, 0.2);
  if (second) fill_uniform(sp.What, g, 0.05, 0.2);
  for (auto& v : sp.delta.values()) v = 10.0;
  return sp;
}

}  // namespace

TEST_CASE("DAG-SE influence is the upper-left quadrant") {
  std::mt19937 g(7);
  std::size_t c = 3, h = 5, w = 5;
  auto dp = linear_dag(c, g);
  Tensor<double> base({c, h, w});
  fill_uniform(base, g, 0.1, 0.5);
  auto fn = [&](const Tensor<double>& in) {
    return bfp::dag_scan(in, dp, bfp::DagDirection::SE).h;
  };
  bfp::InfluenceTable<double> tab(fn, base, 1e-3, 1e-9);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t cc = 0; cc < w; ++cc) {
      auto m = tab.mask_for(r, cc);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          CHECK(int(m.values[y * w + x]) == ((y <= r && x <= cc) ? 1 : 0));
    }
}

TEST_CASE("UAG composition equals the DAG direction at every probe") {
  std::mt19937 g(11);
  std::size_t c = 3, h = 6, w = 6;
  Tensor<double> base({c, h, w});
  fill_uniform(base, g, 0.1, 0.5);
  const std::pair<ScanDirection, bfp::DagDirection> pairs[] = {
      {ScanDirection::SE, bfp::DagDirection::SE},
      {ScanDirection::SW, bfp::DagDirection::SW},
      {ScanDirection::NE, bfp::DagDirection::NE},
      {ScanDirection::NW, bfp::DagDirection::NW},
  };
  for (auto [second_dir, dag_dir] : pairs) {
    const bool north = second_dir == ScanDirection::NE ||
                       second_dir == ScanDirection::NW;
    auto first = linear_scan(c, false, g);
    auto second = linear_scan(c, true, g);
    auto dp = linear_dag(c, g);
    auto uag = [&](const Tensor<double>& in) {
      auto s = bfp::uag_scan(in, first,
                             north ? ScanDirection::N : ScanDirection::S,
                             static_cast<const Tensor<double>*>(nullptr));
      return bfp::uag_scan_second(s.h, second, second_dir,
                                  static_cast<const Tensor<double>*>(nullptr))
          .h;
    };
    auto dag = [&](const Tensor<double>& in) {
      return bfp::dag_scan(in, dp, dag_dir).h;
    };
    bfp::InfluenceTable<double> tu(uag, base, 1e-3, 1e-9);
    bfp::InfluenceTable<double> td(dag, base, 1e-3, 1e-9);
    CHECK(tu == td);
  }
}

TEST_CASE("closed gate shrinks every influence mask to one pixel") {
  std::mt19937 g(13);
  std::size_t c = 3, h = 5, w = 5;
  auto params = bfp::make_bfp_params<double>(c, 1);
  for (auto* sp : {&params.s, &params.n, &params.se, &params.sw, &params.ne,
                   &params.nw}) {
    fill_uniform(sp->U, g, 0.05, 0.3);
    fill_uniform(sp->W, g, 0.05, 0.2);
    if (sp->What.size()) fill_uniform(sp->What, g, 0.05, 0.2);
    for (auto& v : sp->delta.values()) v = 10.0;
  }
  fill_uniform(params.fuse_w, g, 0.05, 0.3);
  Tensor<double> base({c, h, w});
  fill_uniform(base, g, 0.1, 0.5);
  Tensor<double> pz({h, w}, 0.0);
  auto fn = [&](const Tensor<double>& in) {
    return bfp::bfp_forward(in, params, &pz).out;
  };
  bfp::InfluenceTable<double> tab(fn, base, 1e-3, 1e-9);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t cc = 0; cc < w; ++cc) {
      auto m = tab.mask_for(r, cc);
      for (std::size_t i = 0; i < h * w; ++i)
        CHECK(int(m.values[i]) == (i == r * w + cc ? 1 : 0));
    }
}

TEST_CASE("probe at the origin of an SE composition sees only itself") {
  std::mt19937 g(17);
  std::size_t c = 2, h = 4, w = 4;
  auto first = linear_scan(c, false, g);
  auto second = linear_scan(c, true, g);
  Tensor<double> base({c, h, w});
  fill_uniform(base, g, 0.1, 0.5);
  auto uag = [&](const Tensor<double>& in) {
    auto s = bfp::uag_scan(in, first, ScanDirection::S,
                           static_cast<const Tensor<double>*>(nullptr));
    return bfp::uag_scan_second(s.h, second, ScanDirection::SE,
                                static_cast<const Tensor<double>*>(nullptr))
        .h;
  };
  auto m = bfp::influence_mask<double>(uag, base, 0, 0);
  for (std::size_t i = 0; i < h * w; ++i)
    CHECK(int(m.values[i]) == (i == 0 ? 1 : 0));
}

TEST_CASE("raising a single gate value cannot reduce influence magnitude") {
  std::mt19937 g(19);
  std::size_t c = 2, h = 5, w = 5;
  auto second = linear_scan(c, true, g);
  Tensor<double> base({c, h, w});
  fill_uniform(base, g, 0.1, 0.5);
  // |d out(2,4) / d in(2,1)| as a function of the gate value at (2,2)
  const double eps = 1e-5;
  auto grad_mag = [&](double gate_val) {
    Tensor<double> p({h, w}, 1.0);
    p[2 * w + 2] = gate_val;
    Tensor<double> up = base, dn = base;
    up[2 * w + 1] += eps;
    dn[2 * w + 1] -= eps;
    auto a = bfp::uag_scan_second(up, second, ScanDirection::SE, &p);
    auto b = bfp::uag_scan_second(dn, second, ScanDirection::SE, &p);
    return std::abs((a.h[2 * w + 4] - b.h[2 * w + 4]) / (2 * eps));
  };
  double prev = -1.0;
  for (double gate = 0.0; gate <= 1.0001; gate += 0.25) {
    const double mag = grad_mag(std::min(gate, 1.0));
    CHECK(mag >= prev - 1e-12);
    prev = mag;
  }
}
