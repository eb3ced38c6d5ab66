#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "bfp/scan.hpp"

using bfp::ScanDirection;
using bfp::Tensor;

namespace {

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937& g, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(d(g));
}

bfp::ScanParams<double> unit_params(bool second) {
  auto p = bfp::make_scan_params<double>(1, 1, 1, second);
  p.U[0] = 1.0;
  p.W[0] = 1.0;
  if (second) p.What[0] = 1.0;
  return p;
}

}  // namespace

TEST_CASE("count_steps formulas") {
  auto a = bfp::count_steps(45, 60);
  CHECK(a.dag_total == 10800);
  CHECK(a.uag_total == 330);
  auto b = bfp::count_steps(90, 120);
  CHECK(b.dag_total == 43200);
  CHECK(b.uag_total == 660);
  // doubling both extents quadruples DAG loops and doubles UAG loops
  CHECK(b.dag_total == 4 * a.dag_total);
  CHECK(b.uag_total == 2 * a.uag_total);
  CHECK_THROWS(bfp::count_steps(0, 4));
}

TEST_CASE("first-stage S scan hand unrolling") {
  // single column (1,2,3), U=W=1, delta=0: running relu'd prefix sums
  auto p = unit_params(false);
  Tensor<double> x({1, 3, 1}, {1.0, 2.0, 3.0});
  auto r = bfp::uag_scan(x, p, ScanDirection::S,
                         static_cast<const Tensor<double>*>(nullptr));
  CHECK(r.steps.sequential_steps == 3);
  CHECK(r.h[0] == Catch::Approx(1.0));
  CHECK(r.h[1] == Catch::Approx(3.0));
  CHECK(r.h[2] == Catch::Approx(6.0));
}

TEST_CASE("first-stage N scan mirrors S") {
  auto p = unit_params(false);
  Tensor<double> x({1, 3, 1}, {3.0, 2.0, 1.0});
  auto r = bfp::uag_scan(x, p, ScanDirection::N,
                         static_cast<const Tensor<double>*>(nullptr));
  CHECK(r.h[2] == Catch::Approx(1.0));
  CHECK(r.h[1] == Catch::Approx(3.0));
  CHECK(r.h[0] == Catch::Approx(6.0));
}

TEST_CASE("second-stage SE scan hand unrolling with diagonal shift") {
  // 2x2 all-ones, k=1, U=W=What=1, delta=0, ungated:
  // column 0: (1,1); column 1 row 0: 1+1 = 2; row 1: 1+1+1 = 3
  auto p = unit_params(true);
  Tensor<double> x({1, 2, 2}, {1.0, 1.0, 1.0, 1.0});
  auto r = bfp::uag_scan_second(x, p, ScanDirection::SE,
                                static_cast<const Tensor<double>*>(nullptr));
  CHECK(r.steps.sequential_steps == 2);
  CHECK(r.h[0] == Catch::Approx(1.0));  // (0,0)
  CHECK(r.h[2] == Catch::Approx(1.0));  // (1,0)
  CHECK(r.h[1] == Catch::Approx(2.0));  // (0,1)
  CHECK(r.h[3] == Catch::Approx(3.0));  // (1,1)
}

TEST_CASE("second-stage with zero diagonal weight reduces to a row scan") {
  // What = 0 turns the SE scan into a plain eastward recurrence, which equals
  // running the S scan on the transposed image and transposing back.
  std::mt19937 g(5);
  std::size_t c = 3, h = 4, w = 6;
  auto p2 = bfp::make_scan_params<double>(c, c, 1, true);
  fill_uniform(p2.U, g, -0.6, 0.6);
  fill_uniform(p2.W, g, -0.5, 0.5);
  fill_uniform(p2.delta, g, -0.2, 0.2);
  // same weights as a first-stage scan
  auto p1 = bfp::make_scan_params<double>(c, c, 1, false);
  p1.U = p2.U;
  p1.W = p2.W;
  p1.delta = p2.delta;

  Tensor<double> x({c, h, w});
  fill_uniform(x, g, -1, 1);
  Tensor<double> xt({c, w, h});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        xt[ch * h * w + xx * h + y] = x[ch * h * w + y * w + xx];

  auto east = bfp::uag_scan_second(x, p2, ScanDirection::SE,
                                   static_cast<const Tensor<double>*>(nullptr));
  auto south = bfp::uag_scan(xt, p1, ScanDirection::S,
                             static_cast<const Tensor<double>*>(nullptr));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        CHECK(east.h[ch * h * w + y * w + xx] ==
              Catch::Approx(south.h[ch * h * w + xx * h + y]).margin(1e-12));
}

TEST_CASE("gate identities hold bit-exactly") {
  std::mt19937 g(17);
  std::size_t c = 4, h = 7, w = 9;
  Tensor<float> x({c, h, w});
  fill_uniform(x, g, -1, 1);
  auto params = bfp::make_bfp_params<float>(c, 1);
  for (auto* sp : {&params.s, &params.n, &params.se, &params.sw, &params.ne,
                   &params.nw}) {
    fill_uniform(sp->U, g, -0.5, 0.5);
    fill_uniform(sp->W, g, -0.4, 0.4);
    if (sp->What.size()) fill_uniform(sp->What, g, -0.4, 0.4);
    fill_uniform(sp->delta, g, -0.2, 0.2);
  }
  fill_uniform(params.fuse_w, g, -0.4, 0.4);
  fill_uniform(params.fuse_b, g, -0.2, 0.2);

  auto ungated = bfp::bfp_forward(
      x, params, static_cast<const Tensor<float>*>(nullptr), 1);

  SECTION("p == 1 equals ungated") {
    Tensor<float> pone({h, w}, 1.0f);
    auto gated = bfp::bfp_forward(x, params, &pone, 1);
    CHECK(gated.out.values() == ungated.out.values());
  }
  SECTION("scan steps are recorded") {
    CHECK(ungated.state.total_steps == 2 * h + 4 * w);
  }
}

TEST_CASE("p == 0 makes columns independent in the second stage") {
  std::mt19937 g(23);
  std::size_t c = 2, h = 5, w = 6;
  auto p2 = bfp::make_scan_params<double>(c, c, 1, true);
  fill_uniform(p2.U, g, -0.5, 0.5);
  fill_uniform(p2.W, g, -0.5, 0.5);
  fill_uniform(p2.What, g, -0.5, 0.5);
  fill_uniform(p2.delta, g, -0.2, 0.2);
  Tensor<double> x({c, h, w});
  fill_uniform(x, g, -1, 1);
  Tensor<double> pz({h, w}, 0.0);
  auto base = bfp::uag_scan_second(x, p2, ScanDirection::SE, &pz);
  // changing column 0 of the input must not move any other column
  Tensor<double> x2 = x;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) x2[ch * h * w + y * w] += 0.7;
  auto moved = bfp::uag_scan_second(x2, p2, ScanDirection::SE, &pz);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 1; xx < w; ++xx)
        CHECK(moved.h[ch * h * w + y * w + xx] ==
              base.h[ch * h * w + y * w + xx]);
}

TEST_CASE("dag_scan with zero recurrent weights is the U-term") {
  std::mt19937 g(31);
  std::size_t c = 3, h = 4, w = 4;
  auto dp = bfp::make_dag_params<double>(c, c);
  fill_uniform(dp.U, g, -0.5, 0.5);
  fill_uniform(dp.delta, g, 0.1, 0.5);
  Tensor<double> x({c, h, w});
  fill_uniform(x, g, 0.1, 1.0);
  auto r = bfp::dag_scan(x, dp, bfp::DagDirection::SE);
  CHECK(r.steps.sequential_steps == h * w);
  const std::size_t hw = h * w;
  for (std::size_t px = 0; px < hw; ++px)
    for (std::size_t co = 0; co < c; ++co) {
      double want = dp.delta[co];
      for (std::size_t ci = 0; ci < c; ++ci)
        want += dp.U[co * c + ci] * x[ci * hw + px];
      want = want > 0 ? want : 0;
      CHECK(r.h[co * hw + px] == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("scans are bit-identical across thread counts") {
  std::mt19937 g(41);
  std::size_t c = 8, h = 13, w = 37;
  Tensor<float> x({c, h, w});
  fill_uniform(x, g, -1, 1);
  Tensor<float> p({h, w});
  fill_uniform(p, g, 0.0, 1.0);
  auto params = bfp::make_bfp_params<float>(c, 1);
  for (auto* sp : {&params.s, &params.n, &params.se, &params.sw, &params.ne,
                   &params.nw}) {
    fill_uniform(sp->U, g, -0.5, 0.5);
    fill_uniform(sp->W, g, -0.4, 0.4);
    if (sp->What.size()) fill_uniform(sp->What, g, -0.4, 0.4);
    fill_uniform(sp->delta, g, -0.2, 0.2);
  }
  fill_uniform(params.fuse_w, g, -0.4, 0.4);
  fill_uniform(params.fuse_b, g, -0.2, 0.2);
  auto r1 = bfp::bfp_forward(x, params, &p, 1);
  auto r2 = bfp::bfp_forward(x, params, &p, 2);
  auto r3 = bfp::bfp_forward(x, params, &p, 3);
  auto r7 = bfp::bfp_forward(x, params, &p, 7);
  CHECK(r1.out.values() == r2.out.values());
  CHECK(r1.out.values() == r3.out.values());
  CHECK(r1.out.values() == r7.out.values());
}

TEST_CASE("fuse_four closed forms") {
  std::mt19937 g(53);
  std::size_t c = 2, h = 2, w = 2;
  Tensor<double> a({c, h, w}), b({c, h, w}), d({c, h, w}), e({c, h, w});
  fill_uniform(a, g, -1, 1);
  fill_uniform(b, g, -1, 1);
  fill_uniform(d, g, -1, 1);
  fill_uniform(e, g, -1, 1);
  Tensor<double> bias({c});

  SECTION("averaging projection gives the elementwise mean") {
    Tensor<double> proj({c, 4 * c});
    for (std::size_t co = 0; co < c; ++co)
      for (std::size_t part = 0; part < 4; ++part)
        proj[co * 4 * c + part * c + co] = 0.25;
    auto out = bfp::fuse_four(a, b, d, e, proj, bias);
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] ==
            Catch::Approx((a[i] + b[i] + d[i] + e[i]) / 4).margin(1e-12));
  }
  SECTION("identity block selects one input") {
    Tensor<double> proj({c, 4 * c});
    for (std::size_t co = 0; co < c; ++co)
      proj[co * 4 * c + 2 * c + co] = 1.0;  // third part (N.E slot)
    auto out = bfp::fuse_four(a, b, d, e, proj, bias);
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == Catch::Approx(d[i]).margin(1e-12));
  }
  SECTION("random projection matches explicit matrix product") {
    Tensor<double> proj({c, 4 * c});
    fill_uniform(proj, g, -1, 1);
    fill_uniform(bias, g, -1, 1);
    auto out = bfp::fuse_four(a, b, d, e, proj, bias);
    const Tensor<double>* parts[4] = {&a, &b, &d, &e};
    for (std::size_t px = 0; px < h * w; ++px)
      for (std::size_t co = 0; co < c; ++co) {
        double want = bias[co];
        for (std::size_t part = 0; part < 4; ++part)
          for (std::size_t ci = 0; ci < c; ++ci)
            want += proj[co * 4 * c + part * c + ci] *
                    (*parts[part])[ci * h * w + px];
        CHECK(out[co * h * w + px] == Catch::Approx(want).margin(1e-12));
      }
  }
}
