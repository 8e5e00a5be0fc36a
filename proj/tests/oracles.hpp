#pragma once
// Independent reference computations for the test suites. Nothing here calls
// into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "lrt/random.hpp"
#include "lrt/tensor.hpp"

namespace oracle {

template <typename T>
lrt::Tensor<T> random(lrt::Shape shape, lrt::Rng& rng, double lo = -1.0, double hi = 1.0) {
  lrt::Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const lrt::Tensor<T>& a, const lrt::Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

// Triple loop, long double accumulation.
template <typename T>
lrt::Tensor<T> matmul(const lrt::Tensor<T>& a, const lrt::Tensor<T>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  lrt::Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a.at(i, p)) * b.at(p, j);
      c.at(i, j) = static_cast<T>(s);
    }
  }
  return c;
}

// Direct sliding-window correlation of x [C x H x W] with k [Co x C x kh x kw].
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t c, std::size_t h,
                                  std::size_t w, const std::vector<double>& k, std::size_t co,
                                  std::size_t kh, std::size_t kw, const std::vector<double>& bias,
                                  std::size_t pad, std::size_t* oh_out, std::size_t* ow_out) {
  const std::size_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  std::vector<double> y(co * oh * ow, 0.0);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t u = 0; u < kh; ++u) {
            for (std::size_t v = 0; v < kw; ++v) {
              const long yy = static_cast<long>(i + u) - static_cast<long>(pad);
              const long xx = static_cast<long>(j + v) - static_cast<long>(pad);
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
              s += k[((o * c + ch) * kh + u) * kw + v] * x[(ch * h + yy) * w + xx];
            }
          }
        }
        y[(o * oh + i) * ow + j] = s;
      }
    }
  }
  *oh_out = oh;
  *ow_out = ow;
  return y;
}

// Singular values of a (rows x cols) matrix by power iteration on A^T A with
// deflation.
inline std::vector<double> singular_values(std::vector<double> a, std::size_t rows,
                                           std::size_t cols, std::size_t count) {
  std::vector<double> g(cols * cols, 0.0);
  for (std::size_t i = 0; i < cols; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += a[r * cols + i] * a[r * cols + j];
      g[i * cols + j] = s;
    }
  }
  std::vector<double> out;
  lrt::Rng rng(7);
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<double> v(cols);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < 5000; ++it) {
      std::vector<double> nv(cols, 0.0);
      for (std::size_t i = 0; i < cols; ++i) {
        for (std::size_t j = 0; j < cols; ++j) nv[i] += g[i * cols + j] * v[j];
      }
      double norm = 0.0;
      for (double x : nv) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (auto& x : nv) x /= norm;
      double delta = 0.0;
      for (std::size_t i = 0; i < cols; ++i) delta += std::abs(nv[i] - v[i]);
      v = nv;
      lambda = norm;
      if (delta < 1e-15) break;
    }
    out.push_back(std::sqrt(std::max(lambda, 0.0)));
    for (std::size_t i = 0; i < cols; ++i) {
      for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] -= lambda * v[i] * v[j];
    }
  }
  return out;
}

// O(n^2) discrete Fourier transform magnitudes of a real frame zero padded to n.
inline std::vector<double> dft_magnitude(const std::vector<double>& frame, std::size_t n) {
  std::vector<double> mag(n / 2 + 1);
  const double pi = std::acos(-1.0);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> s = 0.0;
    for (std::size_t t = 0; t < frame.size(); ++t) {
      s += frame[t] * std::polar(1.0, -2.0 * pi * static_cast<double>(k * t) / static_cast<double>(n));
    }
    mag[k] = std::abs(s);
  }
  return mag;
}

struct Alignment {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t errors() const { return substitutions + deletions + insertions; }
};

// Full Levenshtein table with a backtrace that recovers the edit operations.
inline Alignment align(const std::u32string& hyp, const std::u32string& ref) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)});
    }
  }
  Alignment a;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      a.substitutions += ref[i - 1] != hyp[j - 1];
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++a.deletions;
      --i;
    } else {
      ++a.insertions;
      --j;
    }
  }
  return a;
}

}  // namespace oracle
