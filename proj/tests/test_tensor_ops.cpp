#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bfp/ops.hpp"
#include "bfp/optim.hpp"
#include "bfp/rng.hpp"

using bfp::Tensor;

TEST_CASE("conv1d_axis same-padding identity case") {
  // [1,2,3] * [1,1,1] with zero padding -> [3,6,5]
  Tensor<double> x({1, 1, 3}, {1.0, 2.0, 3.0});
  Tensor<double> k({1, 1, 3}, {1.0, 1.0, 1.0});
  Tensor<double> b({1});
  auto y = bfp::conv1d_axis(x, k, b, bfp::Axis::Row);
  CHECK(y[0] == Catch::Approx(3.0));
  CHECK(y[1] == Catch::Approx(6.0));
  CHECK(y[2] == Catch::Approx(5.0));
}

TEST_CASE("conv1d_axis k=1 is a per-position linear map") {
  bfp::Rng rng(3);
  Tensor<double> x({3, 4, 5});
  for (auto& v : x.values()) v = rng.uniform(-1, 1);
  Tensor<double> k({2, 3, 1});
  for (auto& v : k.values()) v = rng.uniform(-1, 1);
  Tensor<double> b({2}, {0.25, -0.5});
  auto y = bfp::conv1d_axis(x, k, b, bfp::Axis::Row);
  const std::size_t hw = 20;
  for (std::size_t px = 0; px < hw; ++px) {
    for (std::size_t co = 0; co < 2; ++co) {
      double want = b[co];
      for (std::size_t ci = 0; ci < 3; ++ci)
        want += k[co * 3 + ci] * x[ci * hw + px];
      CHECK(y[co * hw + px] == Catch::Approx(want).margin(1e-12));
    }
  }
}

TEST_CASE("relu clamps negatives") {
  Tensor<double> x({1, 1, 4}, {-2.0, -0.0, 0.5, 3.0});
  auto y = bfp::relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.5);
  CHECK(y[3] == 3.0);
}

TEST_CASE("sigmoid closed-form values") {
  Tensor<double> x({1, 1, 3}, {0.0, -4.0, 4.0});
  auto y = bfp::sigmoid(x);
  CHECK(y[0] == Catch::Approx(0.5));
  CHECK(y[1] == Catch::Approx(0.0179862099620916));
  CHECK(y[2] == Catch::Approx(0.9820137900379084));
}

TEST_CASE("softmax closed forms") {
  SECTION("uniform logits give uniform probabilities") {
    Tensor<double> s({4, 1, 1}, {0.7, 0.7, 0.7, 0.7});
    auto p = bfp::softmax_channels(s);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == Catch::Approx(0.25));
  }
  SECTION("logits (0, 0, ln 2)") {
    Tensor<double> s({3, 1, 1}, {0.0, 0.0, std::log(2.0)});
    auto p = bfp::softmax_channels(s);
    CHECK(p[0] == Catch::Approx(0.25));
    CHECK(p[1] == Catch::Approx(0.25));
    CHECK(p[2] == Catch::Approx(0.5));
  }
  SECTION("shift invariance") {
    Tensor<double> a({3, 1, 1}, {1.0, 2.0, 3.0});
    Tensor<double> b({3, 1, 1}, {101.0, 102.0, 103.0});
    auto pa = bfp::softmax_channels(a);
    auto pb = bfp::softmax_channels(b);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(pa[i] == Catch::Approx(pb[i]));
  }
}

TEST_CASE("masked cross entropy closed forms") {
  SECTION("probability 0.75 on the target class") {
    // softmax of (ln 3, 0) = (0.75, 0.25)
    Tensor<double> s({2, 1, 1}, {std::log(3.0), 0.0});
    bfp::LabelMap gt(1, 1, 2);
    gt.values[0] = 0;
    CHECK(bfp::cross_entropy_masked(s, gt) ==
          Catch::Approx(0.2876820724517809));
  }
  SECTION("uniform scores give ln C") {
    Tensor<double> s({5, 1, 2});
    bfp::LabelMap gt(1, 2, 5);
    gt.values = {3, 1};
    CHECK(bfp::cross_entropy_masked(s, gt) == Catch::Approx(std::log(5.0)));
  }
  SECTION("ignore pixels drop out of the mean") {
    Tensor<double> s({2, 1, 2}, {std::log(3.0), 5.0, 0.0, 5.0});
    bfp::LabelMap gt(1, 2, 2);
    gt.values = {0, 255};
    CHECK(bfp::cross_entropy_masked(s, gt) ==
          Catch::Approx(0.2876820724517809));
  }
}

TEST_CASE("pointwise_linear matches per-pixel matrix product") {
  bfp::Rng rng(11);
  Tensor<double> x({3, 2, 2});
  for (auto& v : x.values()) v = rng.uniform(-1, 1);
  Tensor<double> w({2, 3});
  for (auto& v : w.values()) v = rng.uniform(-1, 1);
  Tensor<double> b({2}, {0.1, -0.2});
  auto y = bfp::pointwise_linear(x, w, b);
  for (std::size_t px = 0; px < 4; ++px)
    for (std::size_t co = 0; co < 2; ++co) {
      double want = b[co];
      for (std::size_t ci = 0; ci < 3; ++ci)
        want += w[co * 3 + ci] * x[ci * 4 + px];
      CHECK(y[co * 4 + px] == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("poly learning-rate schedule closed form") {
  CHECK(bfp::poly_lr(0.01, 0, 100) == Catch::Approx(0.01));
  // halfway: 0.01 * 0.5^0.9
  CHECK(bfp::poly_lr(0.01, 50, 100) == Catch::Approx(0.005358867312681466));
}

TEST_CASE("tensor shape errors are reported") {
  Tensor<double> x({2, 2, 2});
  Tensor<double> k({2, 3, 1});  // channel mismatch
  Tensor<double> b({2});
  CHECK_THROWS(bfp::conv1d_axis(x, k, b, bfp::Axis::Row));
  Tensor<double> keven({2, 2, 2});  // even kernel extent
  CHECK_THROWS(bfp::conv1d_axis(x, keven, b, bfp::Axis::Row));
}
