#pragma once
// Inner-loop kernels with a scalar reference implementation and an AVX2/FMA
// variant selected at runtime. Every variant sums over the reduction index in
// ascending order, so a given element of a product depends only on its own
// row of A and column of B regardless of blocking or threading.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace lrt::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

/// True when the CPU and the build both support the AVX2/FMA variant.
bool avx2_available();

/// The variant used by the dispatching entry points. Chosen once from the
/// environment (LRT_KERNEL=scalar|avx2|auto, default auto) and overridable.
Isa active_isa();
void set_active_isa(Isa isa);

/// Worker threads used by gemm; read from LRT_THREADS (default 1).
std::size_t thread_count();
void set_thread_count(std::size_t n);

// C[m x n] = A[m x k] * B[k x n]; leading dimensions are row strides.
void gemm(const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n);
void gemm(const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n);

// y[i] += x[i]
void add_inplace(float* y, const float* x, std::size_t n);
void add_inplace(double* y, const double* x, std::size_t n);

// y[i] = max(0, x[i])
void relu(float* y, const float* x, std::size_t n);
void relu(double* y, const double* x, std::size_t n);

// y[i] = s * x[i]
void scale(float* y, const float* x, float s, std::size_t n);
void scale(double* y, const double* x, double s, std::size_t n);

namespace scalar {
void gemm(const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n);
void gemm(const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n);
void add_inplace(float* y, const float* x, std::size_t n);
void add_inplace(double* y, const double* x, std::size_t n);
void relu(float* y, const float* x, std::size_t n);
void relu(double* y, const double* x, std::size_t n);
void scale(float* y, const float* x, float s, std::size_t n);
void scale(double* y, const double* x, double s, std::size_t n);
}  // namespace scalar

namespace avx2 {
void gemm(const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n);
void gemm(const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc, std::size_t m, std::size_t k,
          std::size_t n);
void add_inplace(float* y, const float* x, std::size_t n);
void add_inplace(double* y, const double* x, std::size_t n);
void relu(float* y, const float* x, std::size_t n);
void relu(double* y, const double* x, std::size_t n);
void scale(float* y, const float* x, float s, std::size_t n);
void scale(double* y, const double* x, double s, std::size_t n);
}  // namespace avx2

/// Multiply-accumulate counter bumped by every tensor-level matmul on the
/// calling thread. Used to verify analytic FLOP accounting.
std::uint64_t mac_count();
void reset_mac_count();
void add_macs(std::uint64_t n);

/// Restores the previous ISA on scope exit.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : saved_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(saved_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa saved_;
};

}  // namespace lrt::kernels
