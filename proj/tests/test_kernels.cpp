#include <doctest.h>

#include <cmath>
#include <vector>

#include "lrt/kernels.hpp"
#include "lrt/tensor_ops.hpp"
#include "oracles.hpp"

using namespace lrt;

namespace {

template <typename T>
void check_gemm(std::size_t m, std::size_t k, std::size_t n, Rng& rng) {
  const Tensor<T> a = oracle::random<T>({m, k}, rng);
  const Tensor<T> b = oracle::random<T>({k, n}, rng);
  const Tensor<T> ref = oracle::matmul(a, b);
  Tensor<T> cs({m, n}), cv({m, n});
  kernels::scalar::gemm(a.ptr(), k, b.ptr(), n, cs.ptr(), n, m, k, n);
  const double tol = (sizeof(T) == 4 ? 1e-6 : 1e-14) * static_cast<double>(k);
  CHECK(oracle::max_abs_diff(cs, ref) <= tol);
  if (kernels::avx2_available()) {
    kernels::avx2::gemm(a.ptr(), k, b.ptr(), n, cv.ptr(), n, m, k, n);
    CHECK(oracle::max_abs_diff(cv, ref) <= tol);
    CHECK(oracle::max_abs_diff(cv, cs) <= tol);
  }
}

template <typename T>
void check_elementwise(std::size_t n, Rng& rng) {
  const Tensor<T> x = oracle::random<T>({n}, rng);
  Tensor<T> y0 = oracle::random<T>({n}, rng);
  Tensor<T> ys = y0, yv = y0;
  kernels::scalar::add_inplace(ys.ptr(), x.ptr(), n);
  for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == y0[i] + x[i]);
  Tensor<T> rs({n}), ss({n});
  kernels::scalar::relu(rs.ptr(), x.ptr(), n);
  kernels::scalar::scale(ss.ptr(), x.ptr(), T(0.37), n);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(rs[i] == (x[i] > 0 ? x[i] : T(0)));
    CHECK(ss[i] == T(0.37) * x[i]);
  }
  if (!kernels::avx2_available()) return;
  kernels::avx2::add_inplace(yv.ptr(), x.ptr(), n);
  Tensor<T> rv({n}), sv({n});
  kernels::avx2::relu(rv.ptr(), x.ptr(), n);
  kernels::avx2::scale(sv.ptr(), x.ptr(), T(0.37), n);
  CHECK(yv == ys);
  CHECK(rv == rs);
  CHECK(sv == ss);
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("gemm variants agree with the triple loop") {
    Rng rng(1);
    const std::size_t dims[] = {1, 2, 3, 5, 7, 8, 9, 15, 16, 17, 31, 33, 64, 65};
    for (std::size_t m : dims) {
      for (std::size_t n : dims) {
        check_gemm<float>(m, 1 + (m * 7 + n) % 40, n, rng);
        check_gemm<double>(m, 1 + (m * 5 + n) % 40, n, rng);
      }
    }
    check_gemm<float>(128, 300, 97, rng);
    check_gemm<double>(97, 257, 130, rng);
  }

  TEST_CASE("gemm honours leading dimensions") {
    Rng rng(2);
    const Tensor<double> big = oracle::random<double>({10, 12}, rng);
    const Tensor<double> b = oracle::random<double>({5, 4}, rng);
    for (auto isa : {kernels::Isa::kScalar, kernels::Isa::kAvx2}) {
      if (isa == kernels::Isa::kAvx2 && !kernels::avx2_available()) continue;
      kernels::ScopedIsa scoped(isa);
      Tensor<double> c({6, 4});
      // Rows 2..7, cols 3..7 of `big`.
      kernels::gemm(big.ptr() + 2 * 12 + 3, 12, b.ptr(), 4, c.ptr(), 4, 6, 5, 4);
      for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < 5; ++p) s += big.at(2 + i, 3 + p) * b.at(p, j);
          CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
      }
    }
  }

  TEST_CASE("elementwise variants are bit-identical") {
    Rng rng(3);
    for (std::size_t n : {1, 3, 4, 7, 8, 9, 16, 31, 100, 1025}) {
      check_elementwise<float>(n, rng);
      check_elementwise<double>(n, rng);
    }
  }

  TEST_CASE("dispatch follows the active isa") {
    {
      kernels::ScopedIsa scoped(kernels::Isa::kScalar);
      CHECK(kernels::active_isa() == kernels::Isa::kScalar);
    }
    CHECK(kernels::isa_name(kernels::Isa::kScalar) == "scalar");
    CHECK(kernels::isa_name(kernels::Isa::kAvx2) == "avx2");
  }

  TEST_CASE("matmul result does not depend on isa beyond rounding") {
    Rng rng(4);
    const Tensor<float> a = oracle::random<float>({37, 53}, rng);
    const Tensor<float> b = oracle::random<float>({53, 29}, rng);
    Tensor<float> s, v;
    {
      kernels::ScopedIsa scoped(kernels::Isa::kScalar);
      s = matmul(a, b);
    }
    if (kernels::avx2_available()) {
      kernels::ScopedIsa scoped(kernels::Isa::kAvx2);
      v = matmul(a, b);
      CHECK(oracle::max_abs_diff(s, v) < 1e-5);
    }
  }

  TEST_CASE("matmul is identical across thread counts") {
    Rng rng(5);
    const Tensor<double> a = oracle::random<double>({200, 70}, rng);
    const Tensor<double> b = oracle::random<double>({70, 90}, rng);
    const std::size_t saved = kernels::thread_count();
    kernels::set_thread_count(1);
    const Tensor<double> one = matmul(a, b);
    kernels::set_thread_count(3);
    const Tensor<double> three = matmul(a, b);
    kernels::set_thread_count(saved);
    CHECK(one == three);
  }

  TEST_CASE("mac counter counts tensor matmuls") {
    Rng rng(6);
    kernels::reset_mac_count();
    matmul(oracle::random<double>({3, 4}, rng), oracle::random<double>({4, 5}, rng));
    CHECK(kernels::mac_count() == 60);
  }
}
