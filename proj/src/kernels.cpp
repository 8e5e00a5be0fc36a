#include "lrt/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace lrt::kernels {

namespace scalar {

namespace {

template <typename T>
void gemm_impl(const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
               std::size_t ldc, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    std::fill(crow, crow + n, T{0});
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
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
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}
void add_inplace(double* y, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}
void relu(float* y, const float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}
void relu(double* y, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void scale(float* y, const float* x, float s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = s * x[i];
}
void scale(double* y, const double* x, double s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = s * x[i];
}

}  // namespace scalar

namespace {

bool detect_avx2() {
#if defined(LRT_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  const bool have = detect_avx2();
  if (const char* env = std::getenv("LRT_KERNEL")) {
    const std::string v(env);
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && have) return Isa::kAvx2;
  }
  return have ? Isa::kAvx2 : Isa::kScalar;
}

std::size_t initial_threads() {
  if (const char* env = std::getenv("LRT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

std::atomic<Isa>& isa_state() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

std::atomic<std::size_t>& thread_state() {
  static std::atomic<std::size_t> n{initial_threads()};
  return n;
}

thread_local std::uint64_t t_macs = 0;

// Below this many multiply-adds a gemm stays on the calling thread.
constexpr std::size_t kParallelMacs = std::size_t{1} << 21;

template <typename T>
void gemm_dispatch(const T* a, std::size_t lda, const T* b, std::size_t ldb,
                   T* c, std::size_t ldc, std::size_t m, std::size_t k,
                   std::size_t n) {
  if (m == 0 || n == 0) return;
  const Isa isa = active_isa();
  auto run = [&](std::size_t j0, std::size_t j1) {
    if (isa == Isa::kAvx2) {
      avx2::gemm(a, lda, b + j0, ldb, c + j0, ldc, m, k, j1 - j0);
    } else {
      scalar::gemm(a, lda, b + j0, ldb, c + j0, ldc, m, k, j1 - j0);
    }
  };
  std::size_t threads = thread_count();
  if (threads <= 1 || m * k * n < kParallelMacs || n < 64) {
    run(0, n);
    return;
  }
  // Column split in multiples of 16 keeps every element's reduction intact.
  threads = std::min(threads, n / 16);
  const std::size_t chunk = ((n + threads - 1) / threads + 15) / 16 * 16;
  std::vector<std::thread> pool;
  for (std::size_t j0 = chunk; j0 < n; j0 += chunk) {
    pool.emplace_back(run, j0, std::min(n, j0 + chunk));
  }
  run(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

bool avx2_available() {
  static const bool have = detect_avx2();
  return have;
}

Isa active_isa() { return isa_state().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::kAvx2 && !avx2_available()) isa = Isa::kScalar;
  isa_state().store(isa, std::memory_order_relaxed);
}

std::size_t thread_count() { return thread_state().load(std::memory_order_relaxed); }

void set_thread_count(std::size_t n) {
  thread_state().store(std::max<std::size_t>(1, n), std::memory_order_relaxed);
}

void gemm(const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n) {
  gemm_dispatch(a, lda, b, ldb, c, ldc, m, k, n);
}

void gemm(const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n) {
  gemm_dispatch(a, lda, b, ldb, c, ldc, m, k, n);
}

#define LRT_DISPATCH(fn, ...)                                      \
  if (active_isa() == Isa::kAvx2) {                                \
    avx2::fn(__VA_ARGS__);                                         \
  } else {                                                         \
    scalar::fn(__VA_ARGS__);                                       \
  }

void add_inplace(float* y, const float* x, std::size_t n) { LRT_DISPATCH(add_inplace, y, x, n) }
void add_inplace(double* y, const double* x, std::size_t n) { LRT_DISPATCH(add_inplace, y, x, n) }
void relu(float* y, const float* x, std::size_t n) { LRT_DISPATCH(relu, y, x, n) }
void relu(double* y, const double* x, std::size_t n) { LRT_DISPATCH(relu, y, x, n) }
void scale(float* y, const float* x, float s, std::size_t n) { LRT_DISPATCH(scale, y, x, s, n) }
void scale(double* y, const double* x, double s, std::size_t n) { LRT_DISPATCH(scale, y, x, s, n) }

#undef LRT_DISPATCH

std::uint64_t mac_count() { return t_macs; }
void reset_mac_count() { t_macs = 0; }
void add_macs(std::uint64_t n) { t_macs += n; }

}  // namespace lrt::kernels
