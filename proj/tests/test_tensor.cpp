#include <doctest.h>

#include <cmath>
#include <numeric>

#include "lrt/tensor_ops.hpp"
#include "oracles.hpp"

using namespace lrt;

TEST_SUITE("tensor") {
  TEST_CASE("construction and shape errors") {
    CHECK_THROWS_AS(Tensor<double>({2, 3}, std::vector<double>(5)), ShapeError);
    const Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 6);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK(t.reshaped({3, 2}).at(2, 1) == 6);
    CHECK_THROWS(Tensor<double>({2, 2}).item());
    CHECK(shape_str({2, 3}) == "[2x3]");
  }

  TEST_CASE("matmul matches the triple loop and rejects bad shapes") {
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
      const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
      const auto a = oracle::random<double>({m, k}, rng);
      const auto b = oracle::random<double>({k, n}, rng);
      CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-14);
    }
    CHECK_THROWS_AS(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
    CHECK_THROWS_AS(add(Tensor<double>({2, 3}), Tensor<double>({3, 2})), ShapeError);
  }

  TEST_CASE("identity and transpose") {
    Rng rng(12);
    const auto a = oracle::random<double>({4, 6}, rng);
    Tensor<double> eye({6, 6});
    for (std::size_t i = 0; i < 6; ++i) eye.at(i, i) = 1;
    CHECK(matmul(a, eye) == a);
    CHECK(transpose(transpose(a)) == a);
    CHECK(transpose(a).at(5, 3) == a.at(3, 5));
  }

  TEST_CASE("elementwise ops and reductions") {
    const Tensor<double> a({2, 2}, {1, -2, 3, -4});
    const Tensor<double> b({2, 2}, {5, 6, 7, 8});
    CHECK(add(a, b) == Tensor<double>({2, 2}, {6, 4, 10, 4}));
    CHECK(sub(a, b) == Tensor<double>({2, 2}, {-4, -8, -4, -12}));
    CHECK(mul(a, b) == Tensor<double>({2, 2}, {5, -12, 21, -32}));
    CHECK(scale(a, 2.0) == Tensor<double>({2, 2}, {2, -4, 6, -8}));
    CHECK(relu(a) == Tensor<double>({2, 2}, {1, 0, 3, 0}));
    CHECK(add_row_vector(a, Tensor<double>({2}, {10, 20})) ==
          Tensor<double>({2, 2}, {11, 18, 13, 16}));
    CHECK(sum_rows(a) == Tensor<double>({2}, {4, -6}));
    CHECK(sum(a) == -2);
    CHECK_THROWS_AS(add_row_vector(a, Tensor<double>({3})), ShapeError);
  }

  TEST_CASE("softmax rows sum to one and masked entries are exactly zero") {
    Rng rng(13);
    const auto x = oracle::random<double>({5, 7}, rng, -4, 4);
    const auto y = softmax_lastdim(x);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0, ref_den = 0.0;
      for (std::size_t j = 0; j < 7; ++j) ref_den += std::exp(x.at(i, j));
      for (std::size_t j = 0; j < 7; ++j) {
        s += y.at(i, j);
        CHECK(y.at(i, j) == doctest::Approx(std::exp(x.at(i, j)) / ref_den).epsilon(1e-12));
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
    const AttentionMask causal = AttentionMask::causal(5);
    const auto m = softmax_lastdim(oracle::random<double>({5, 5}, rng), &causal);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        if (j > i) CHECK(m.at(i, j) == 0.0);
        s += m.at(i, j);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
    CHECK(m.at(0, 0) == 1.0);
  }

  TEST_CASE("softmax of a fully masked row is an error") {
    AttentionMask mask(2, 3);
    for (std::size_t j = 0; j < 3; ++j) mask.set(1, j, true);
    CHECK_THROWS_AS(softmax_lastdim(Tensor<double>({2, 3}), &mask), MaskError);
    CHECK_THROWS_AS(softmax_lastdim(Tensor<double>({2, 4}), &mask), ShapeError);
  }

  TEST_CASE("mask builders") {
    const auto c = AttentionMask::causal(3);
    CHECK(!c.at(1, 1));
    CHECK(c.at(1, 2));
    const auto p = AttentionMask::key_padding(2, 4, 3);
    CHECK(!p.at(0, 2));
    CHECK(p.at(1, 3));
    const auto u = AttentionMask::causal(4) | AttentionMask::key_padding(4, 4, 2);
    CHECK(u.at(3, 2));
    CHECK(!u.at(3, 1));
    CHECK(u.at(0, 1));
  }

  TEST_CASE("log_softmax equals log of softmax") {
    Rng rng(14);
    const auto x = oracle::random<double>({3, 6}, rng, -30, 30);
    const auto a = log_softmax_lastdim(x);
    const auto b = softmax_lastdim(x);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (b[i] > 1e-300) CHECK(a[i] == doctest::Approx(std::log(b[i])).epsilon(1e-10));
    }
  }

  TEST_CASE("layer norm statistics") {
    Rng rng(15);
    const auto x = oracle::random<double>({4, 64}, rng, -3, 5);
    const auto y = layer_norm(x, Tensor<double>::filled({64}, 1.0), Tensor<double>({64}), 1e-5);
    for (std::size_t i = 0; i < 4; ++i) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 64; ++j) mean += y.at(i, j);
      mean /= 64;
      for (std::size_t j = 0; j < 64; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
      var /= 64;
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
    const auto c = layer_norm(Tensor<double>::filled({1, 8}, 3.0), Tensor<double>::filled({8}, 2.0),
                              Tensor<double>::filled({8}, 0.5), 1e-5);
    for (double v : c.data()) CHECK(v == doctest::Approx(0.5));
  }

  TEST_CASE("conv2d matches the sliding-window oracle") {
    Rng rng(16);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t c = 1 + rng.below(3), co = 1 + rng.below(4);
      const std::size_t h = 3 + rng.below(6), w = 3 + rng.below(6), pad = rng.below(2);
      const auto x = oracle::random<double>({c, h, w}, rng);
      const auto k = oracle::random<double>({co, c, 3, 3}, rng);
      const auto b = oracle::random<double>({co}, rng);
      std::size_t oh = 0, ow = 0;
      const auto ref = oracle::conv2d(x.vec(), c, h, w, k.vec(), co, 3, 3, b.vec(), pad, &oh, &ow);
      const auto y = conv2d(x, k, b, 1, pad);
      REQUIRE(y.shape() == Shape{co, oh, ow});
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("im2col and col2im are adjoint") {
    Rng rng(17);
    const Conv2dGeometry g{2, 5, 4, 3, 3, 1, 1};
    const auto x = oracle::random<double>({2, 5, 4}, rng);
    const auto cols = im2col(x, g);
    const auto z = oracle::random<double>(cols.shape(), rng);
    const auto back = col2im(z, g);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * z[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  TEST_CASE("max pool selects window maxima and drops remainders") {
    const Tensor<double> x({1, 3, 5}, {1, 5, 2, 0, 9,  //
                                       3, 4, 8, 1, 9,  //
                                       7, 7, 7, 7, 7});
    std::vector<std::size_t> arg;
    const auto y = max_pool2d(x, 2, &arg);
    CHECK(y.shape() == Shape{1, 1, 2});
    CHECK(y[0] == 5);
    CHECK(y[1] == 8);
    CHECK(arg == std::vector<std::size_t>{1, 7});
    CHECK_THROWS_AS(max_pool2d(Tensor<double>({1, 1, 4}), 2), ShapeError);
  }

  TEST_CASE("concat and slice round trip") {
    Rng rng(18);
    const auto a = oracle::random<double>({3, 2}, rng);
    const auto b = oracle::random<double>({3, 5}, rng);
    const std::vector<Tensor<double>> parts{a, b};
    const auto c = concat_lastdim<double>(parts);
    CHECK(c.shape() == Shape{3, 7});
    CHECK(slice_lastdim(c, 0, 2) == a);
    CHECK(slice_lastdim(c, 2, 5) == b);
    const std::vector<Tensor<double>> rows{a, a};
    const auto r = concat_rows<double>(rows);
    CHECK(slice_rows(r, 3, 3) == a);
    CHECK_THROWS_AS(slice_lastdim(c, 5, 3), ShapeError);
  }
}
