#include <doctest.h>

#include <functional>

#include "lrt/autograd.hpp"
#include "oracles.hpp"

using namespace lrt;
using V = Var<double>;

namespace {

// Contracts `out` with a fixed random weight so every output element matters.
V contract(const V& out, Rng& rng) {
  return ag::sum(ag::mul(out, V::constant(oracle::random<double>(out.shape(), rng))));
}

double op_error(const std::vector<Shape>& shapes, const std::function<V(std::vector<V>&)>& f,
                std::uint64_t seed) {
  Rng rng(seed);
  std::vector<V> params;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    params.push_back(V::parameter(oracle::random<double>(shapes[i], rng), static_cast<int>(i)));
  }
  Rng wrng(seed + 1000);
  const Tensor<double> w = [&] {
    std::vector<V> p = params;
    return oracle::random<double>(f(p).shape(), wrng);
  }();
  const auto loss = [&] {
    return ag::sum(ag::mul(f(params), V::constant(w)));
  };
  const FiniteDiffResult r = finite_diff_check<double>(loss, params, 1e-5);
  CHECK(r.kinks == 0);
  return r.max_rel_error;
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("gradient of sum(W x) is x broadcast") {
    Rng rng(1);
    const auto x = oracle::random<double>({3, 1}, rng);
    const V w = V::parameter(oracle::random<double>({2, 3}, rng), 0);
    const auto g = backward(ag::sum(ag::matmul(w, V::constant(x))));
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) CHECK(g.at(0).at(i, j) == doctest::Approx(x[j]));
    }
  }

  TEST_CASE("gradient of the squared norm is 2W") {
    Rng rng(2);
    const V w = V::parameter(oracle::random<double>({3, 4}, rng), 7);
    const auto g = backward(ag::sum(ag::mul(w, w)));
    for (std::size_t i = 0; i < 12; ++i) CHECK(g.at(7)[i] == 2.0 * w.value()[i]);
  }

  TEST_CASE("quadratic finite difference is exact") {
    std::vector<V> p{V::parameter(Tensor<double>::scalar(3.0), 0)};
    const auto r = finite_diff_check<double>([&] { return ag::mul(p[0], p[0]); }, p, 1e-3);
    CHECK(r.analytic == 6.0);
    CHECK(r.max_rel_error < 1e-12);
    CHECK_THROWS(finite_diff_check<double>([&] { return ag::mul(p[0], p[0]); }, p, 0.0));
  }

  TEST_CASE("backward rejects non-scalar losses") {
    const V w = V::parameter(Tensor<double>({2, 2}), 0);
    CHECK_THROWS(backward(w));
  }

  TEST_CASE("shared subexpressions accumulate") {
    const V w = V::parameter(Tensor<double>({1}, {1.5}), 0);
    const V y = ag::mul(w, w);
    const auto g = backward(ag::sum(ag::add(y, ag::mul(y, w))));
    CHECK(g.at(0)[0] == doctest::Approx(2 * 1.5 + 3 * 1.5 * 1.5));
  }

  TEST_CASE("no-grad mode records nothing") {
    const V w = V::parameter(Tensor<double>({2}, {1, 2}), 0);
    NoGradGuard guard;
    const V y = ag::mul(w, w);
    CHECK(!y.requires_grad());
    CHECK(y.node()->inputs.empty());
  }

  TEST_CASE("every differentiable op passes finite differences") {
    const double tol = 1e-5;
    CHECK(op_error({{3, 4}, {4, 5}}, [](auto& p) { return ag::matmul(p[0], p[1]); }, 1) < tol);
    CHECK(op_error({{3, 4}}, [](auto& p) { return ag::transpose(p[0]); }, 2) < tol);
    CHECK(op_error({{3, 4}, {3, 4}}, [](auto& p) { return ag::add(p[0], p[1]); }, 3) < tol);
    CHECK(op_error({{3, 4}, {3, 4}}, [](auto& p) { return ag::mul(p[0], p[1]); }, 4) < tol);
    CHECK(op_error({{3, 4}}, [](auto& p) { return ag::scale(p[0], 0.7); }, 5) < tol);
    CHECK(op_error({{3, 4}, {4}}, [](auto& p) { return ag::add_bias(p[0], p[1]); }, 6) < tol);
    CHECK(op_error({{3, 4}}, [](auto& p) { return ag::relu(p[0]); }, 7) < tol);
    CHECK(op_error({{4, 6}}, [](auto& p) { return ag::softmax<double>(p[0], nullptr); }, 8) < tol);
    const AttentionMask causal = AttentionMask::causal(5);
    CHECK(op_error({{5, 5}}, [&](auto& p) { return ag::softmax<double>(p[0], &causal); }, 9) < tol);
    CHECK(op_error({{3, 6}, {6}, {6}},
                   [](auto& p) { return ag::layer_norm<double>(p[0], p[1], p[2], 1e-5); }, 10) < tol);
    CHECK(op_error({{2, 5, 4}, {3, 2, 3, 3}, {3}},
                   [](auto& p) { return ag::conv2d<double>(p[0], p[1], p[2], 1, 1); }, 11) < tol);
    CHECK(op_error({{2, 4, 6}}, [](auto& p) { return ag::max_pool2d<double>(p[0], 2); }, 12) < tol);
    CHECK(op_error({{3, 2}, {3, 4}},
                   [](auto& p) {
                     return ag::concat_lastdim<double>(std::span<const V>(p.data(), 2));
                   },
                   13) < tol);
    CHECK(op_error({{3, 6}}, [](auto& p) { return ag::slice_lastdim(p[0], 2, 3); }, 14) < tol);
    CHECK(op_error({{2, 3}, {4, 3}},
                   [](auto& p) { return ag::concat_rows<double>(std::span<const V>(p.data(), 2)); },
                   15) < tol);
    CHECK(op_error({{5, 3}}, [](auto& p) { return ag::slice_rows(p[0], 1, 3); }, 16) < tol);
    CHECK(op_error({{2, 6}}, [](auto& p) { return ag::reshape(p[0], {3, 4}); }, 17) < tol);
    CHECK(op_error({{2, 3, 4}}, [](auto& p) { return ag::frames_to_rows(p[0]); }, 18) < tol);
    const std::vector<int> ids{2, 0, 2, 4};
    CHECK(op_error({{5, 3}}, [&](auto& p) { return ag::embedding<double>(p[0], ids); }, 19) < tol);
    const std::vector<int> targets{1, 0, 3, 2};
    CHECK(op_error({{4, 5}}, [&](auto& p) { return ag::nll_sum<double>(p[0], targets, 0); }, 20) <
          tol);
  }

  TEST_CASE("blocked attention logits receive zero gradient") {
    Rng rng(21);
    const AttentionMask causal = AttentionMask::causal(4);
    const V x = V::parameter(oracle::random<double>({4, 4}, rng), 0);
    const auto g = backward(contract(ag::softmax<double>(x, &causal), rng));
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = i + 1; j < 4; ++j) CHECK(g.at(0).at(i, j) == 0.0);
    }
  }

  TEST_CASE("frames_to_rows layout") {
    Tensor<double> x({2, 3, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
    const auto y = ag::frames_to_rows(V::constant(x)).value();
    CHECK(y.shape() == Shape{3, 4});
    // row t = [c0 (t, :), c1 (t, :)]
    CHECK(y.at(1, 0) == x[0 * 6 + 1 * 2 + 0]);
    CHECK(y.at(1, 3) == x[1 * 6 + 1 * 2 + 1]);
  }
}
