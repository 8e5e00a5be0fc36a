// AVX2/FMA variants. This file is compiled with -mavx2 -mfma and is only
// entered after avx2_available() returned true. Keep it free of standard
// library templates so no AVX-encoded inline function leaks into other TUs.

#include <cstddef>

#include "lrt/kernels.hpp"

#if defined(LRT_HAVE_AVX2_TU)

#include <immintrin.h>

namespace lrt::kernels::avx2 {
namespace {

inline __m256 load(const float* p) { return _mm256_loadu_ps(p); }
inline __m256d load(const double* p) { return _mm256_loadu_pd(p); }
inline void store(float* p, __m256 v) { _mm256_storeu_ps(p, v); }
inline void store(double* p, __m256d v) { _mm256_storeu_pd(p, v); }
inline __m256 bcast(float x) { return _mm256_set1_ps(x); }
inline __m256d bcast(double x) { return _mm256_set1_pd(x); }
inline __m256 fmadd(__m256 a, __m256 b, __m256 c) {
  return _mm256_fmadd_ps(a, b, c);
}
inline __m256d fmadd(__m256d a, __m256d b, __m256d c) {
  return _mm256_fmadd_pd(a, b, c);
}
inline __m256 zero(float) { return _mm256_setzero_ps(); }
inline __m256d zero(double) { return _mm256_setzero_pd(); }
inline float fma1(float a, float b, float c) { return __builtin_fmaf(a, b, c); }
inline double fma1(double a, double b, double c) {
  return __builtin_fma(a, b, c);
}

template <typename T>
struct Lanes;
template <>
struct Lanes<float> {
  using Vec = __m256;
  static constexpr std::size_t kWidth = 8;
};
template <>
struct Lanes<double> {
  using Vec = __m256d;
  static constexpr std::size_t kWidth = 4;
};

// MR rows x (NV * width) columns register tile, full reduction over k.
template <typename T, int MR, int NV>
inline void tile(const T* a, std::size_t lda, const T* b, std::size_t ldb,
                 T* c, std::size_t ldc, std::size_t k) {
  using Vec = typename Lanes<T>::Vec;
  constexpr std::size_t W = Lanes<T>::kWidth;
  Vec acc[MR][NV];
  for (int i = 0; i < MR; ++i) {
    for (int v = 0; v < NV; ++v) acc[i][v] = zero(T{});
  }
  for (std::size_t p = 0; p < k; ++p) {
    Vec bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = load(b + p * ldb + v * W);
    for (int i = 0; i < MR; ++i) {
      const Vec av = bcast(a[i * lda + p]);
      for (int v = 0; v < NV; ++v) acc[i][v] = fmadd(av, bv[v], acc[i][v]);
    }
  }
  for (int i = 0; i < MR; ++i) {
    for (int v = 0; v < NV; ++v) store(c + i * ldc + v * W, acc[i][v]);
  }
}

// Column tail narrower than one vector: same fused multiply-add per element.
template <typename T, int MR>
inline void tail(const T* a, std::size_t lda, const T* b, std::size_t ldb,
                 T* c, std::size_t ldc, std::size_t k, std::size_t cols) {
  for (int i = 0; i < MR; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        acc = fma1(a[i * lda + p], b[p * ldb + j], acc);
      }
      c[i * ldc + j] = acc;
    }
  }
}

template <typename T, int MR>
inline void row_block(const T* a, std::size_t lda, const T* b, std::size_t ldb,
                      T* c, std::size_t ldc, std::size_t k, std::size_t n) {
  constexpr std::size_t W = Lanes<T>::kWidth;
  std::size_t j = 0;
  for (; j + 2 * W <= n; j += 2 * W) tile<T, MR, 2>(a, lda, b + j, ldb, c + j, ldc, k);
  for (; j + W <= n; j += W) tile<T, MR, 1>(a, lda, b + j, ldb, c + j, ldc, k);
  if (j < n) tail<T, MR>(a, lda, b + j, ldb, c + j, ldc, k, n - j);
}

template <typename T>
void gemm_impl(const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
               std::size_t ldc, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<T, 4>(a + i * lda, lda, b, ldb, c + i * ldc, ldc, k, n);
  switch (m - i) {
    case 3: row_block<T, 3>(a + i * lda, lda, b, ldb, c + i * ldc, ldc, k, n); break;
    case 2: row_block<T, 2>(a + i * lda, lda, b, ldb, c + i * ldc, ldc, k, n); break;
    case 1: row_block<T, 1>(a + i * lda, lda, b, ldb, c + i * ldc, ldc, k, n); break;
    default: break;
  }
}

}  // namespace

void gemm(const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n) {
  gemm_impl(a, lda, b, ldb, c, ldc, m, k, n);
}

void gemm(const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n) {
  gemm_impl(a, lda, b, ldb, c, ldc, m, k, n);
}

void add_inplace(float* y, const float* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) y[i] += x[i];
}

void add_inplace(double* y, const double* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] += x[i];
}

// max_ps(x, 0) returns 0 for NaN inputs, matching the scalar `x > 0 ? x : 0`.
void relu(float* y, const float* x, std::size_t n) {
  const __m256 z = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu(double* y, const double* x, std::size_t n) {
  const __m256d z = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void scale(float* y, const float* x, float s, std::size_t n) {
  const __m256 sv = _mm256_set1_ps(s);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), sv));
  for (; i < n; ++i) y[i] = s * x[i];
}

void scale(double* y, const double* x, double s, std::size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), sv));
  for (; i < n; ++i) y[i] = s * x[i];
}

}  // namespace lrt::kernels::avx2

#else  // no AVX2 translation unit on this target; dispatcher never calls these

namespace lrt::kernels::avx2 {
void gemm(const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n) {
  scalar::gemm(a, lda, b, ldb, c, ldc, m, k, n);
}
void gemm(const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n) {
  scalar::gemm(a, lda, b, ldb, c, ldc, m, k, n);
}
void add_inplace(float* y, const float* x, std::size_t n) { scalar::add_inplace(y, x, n); }
void add_inplace(double* y, const double* x, std::size_t n) { scalar::add_inplace(y, x, n); }
void relu(float* y, const float* x, std::size_t n) { scalar::relu(y, x, n); }
void relu(double* y, const double* x, std::size_t n) { scalar::relu(y, x, n); }
void scale(float* y, const float* x, float s, std::size_t n) { scalar::scale(y, x, s, n); }
void scale(double* y, const double* x, double s, std::size_t n) { scalar::scale(y, x, s, n); }
}  // namespace lrt::kernels::avx2

#endif
