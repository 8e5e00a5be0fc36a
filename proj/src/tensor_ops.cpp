#include "lrt/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lrt/kernels.hpp"

namespace lrt {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D, got " +
                                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  Tensor<T> c({m, n});
  kernels::gemm(a.ptr(), k, b.ptr(), n, c.ptr(), n, m, k, n);
  kernels::add_macs(static_cast<std::uint64_t>(m) * k * n);
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> t({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  }
  return t;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "add");
  Tensor<T> c = a;
  kernels::add_inplace(c.ptr(), b.ptr(), c.size());
  return c;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  return c;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> c(a.shape());
  kernels::scale(c.ptr(), a.ptr(), s, a.size());
  return c;
}

template <typename T>
Tensor<T> add_row_vector(const Tensor<T>& a, const Tensor<T>& bias) {
  const std::size_t n = a.shape().back();
  require(bias.size() == n, "add_row_vector: bias length " + std::to_string(bias.size()) +
                                " vs last extent " + std::to_string(n));
  Tensor<T> c = a;
  for (std::size_t off = 0; off < c.size(); off += n) {
    kernels::add_inplace(c.ptr() + off, bias.ptr(), n);
  }
  return c;
}

template <typename T>
Tensor<T> sum_rows(const Tensor<T>& a) {
  const std::size_t n = a.shape().back();
  Tensor<T> s({n});
  for (std::size_t off = 0; off < a.size(); off += n) {
    kernels::add_inplace(s.ptr(), a.ptr() + off, n);
  }
  return s;
}

template <typename T>
T sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return s;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  kernels::relu(y.ptr(), x.ptr(), x.size());
  return y;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const AttentionMask* mask) {
  const std::size_t n = x.shape().back();
  const std::size_t rows_per_matrix = x.rank() >= 2 ? x.shape()[x.rank() - 2] : 1;
  if (mask) {
    require(x.rank() >= 2 && mask->rows == rows_per_matrix && mask->cols == n,
            "softmax_lastdim: mask " + std::to_string(mask->rows) + "x" +
                std::to_string(mask->cols) + " vs input " + shape_str(x.shape()));
  }
  Tensor<T> y(x.shape());
  std::vector<T> logits(n);
  const std::size_t total_rows = x.size() / n;
  for (std::size_t r = 0; r < total_rows; ++r) {
    const T* in = x.ptr() + r * n;
    T* out = y.ptr() + r * n;
    const std::size_t mrow = r % rows_per_matrix;
    bool any_open = !mask;
    for (std::size_t j = 0; j < n; ++j) {
      const bool blocked = mask && mask->at(mrow, j);
      any_open = any_open || !blocked;
      logits[j] = blocked ? in[j] + static_cast<T>(kMaskedLogit) : in[j];
    }
    if (!any_open) throw MaskError("softmax_lastdim: every position in a row is masked");
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, logits[j]);
    T denom = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(logits[j] - mx);
      denom += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= denom;
    if (mask) {
      for (std::size_t j = 0; j < n; ++j) {
        if (mask->at(mrow, j)) out[j] = 0;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
  const std::size_t n = x.shape().back();
  Tensor<T> y(x.shape());
  for (std::size_t off = 0; off < x.size(); off += n) {
    const T* in = x.ptr() + off;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
    T denom = 0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(in[j] - mx);
    const T lse = mx + std::log(denom);
    for (std::size_t j = 0; j < n; ++j) y[off + j] = in[j] - lse;
  }
  return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& shift, T eps) {
  const std::size_t n = x.shape().back();
  require(gain.size() == n && shift.size() == n,
          "layer_norm: gain/shift length must equal last extent " + std::to_string(n));
  Tensor<T> y(x.shape());
  for (std::size_t off = 0; off < x.size(); off += n) {
    const T* in = x.ptr() + off;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(n);
    const T rstd = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      y[off + j] = (in[j] - mean) * rstd * gain[j] + shift[j];
    }
  }
  return y;
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& x, const Conv2dGeometry& g) {
  require(x.rank() == 3 && x.dim(0) == g.channels && x.dim(1) == g.height && x.dim(2) == g.width,
          "im2col: input " + shape_str(x.shape()) + " does not match geometry");
  require(g.height + 2 * g.pad >= g.kernel_h && g.width + 2 * g.pad >= g.kernel_w,
          "im2col: input smaller than kernel");
  const std::size_t oh = g.out_h(), ow = g.out_w();
  Tensor<T> cols({g.channels * g.kernel_h * g.kernel_w, oh * ow});
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = cols.ptr() + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t oj = 0; oj < ow; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = ii >= 0 && jj >= 0 &&
                                ii < static_cast<std::ptrdiff_t>(g.height) &&
                                jj < static_cast<std::ptrdiff_t>(g.width);
            row[oi * ow + oj] = inside ? x[(c * g.height + ii) * g.width + jj] : T{0};
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const Conv2dGeometry& g) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  require(cols.rank() == 2 && cols.dim(0) == g.channels * g.kernel_h * g.kernel_w &&
              cols.dim(1) == oh * ow,
          "col2im: columns " + shape_str(cols.shape()) + " do not match geometry");
  Tensor<T> x({g.channels, g.height, g.width});
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = cols.ptr() + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t oj = 0; oj < ow; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(g.width)) continue;
            x[(c * g.height + ii) * g.width + jj] += row[oi * ow + oj];
          }
        }
      }
    }
  }
  return x;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels,
                 const Tensor<T>& bias, std::size_t stride, std::size_t pad) {
  require(x.rank() == 3, "conv2d: input must be [C x H x W], got " + shape_str(x.shape()));
  require(kernels.rank() == 4 && kernels.dim(1) == x.dim(0),
          "conv2d: kernels " + shape_str(kernels.shape()) + " do not match input " +
              shape_str(x.shape()));
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t co = kernels.dim(0);
  require(bias.empty() || bias.size() == co, "conv2d: bias length must equal output channels");
  const Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), kernels.dim(2), kernels.dim(3), stride, pad};
  const Tensor<T> cols = im2col(x, g);
  const Tensor<T> kmat = kernels.reshaped({co, g.channels * g.kernel_h * g.kernel_w});
  Tensor<T> out = matmul(kmat, cols);
  if (!bias.empty()) {
    const std::size_t hw = g.out_h() * g.out_w();
    for (std::size_t c = 0; c < co; ++c) {
      for (std::size_t p = 0; p < hw; ++p) out[c * hw + p] += bias[c];
    }
  }
  return std::move(out).reshaped({co, g.out_h(), g.out_w()});
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window,
                     std::vector<std::size_t>* argmax) {
  require(x.rank() == 3, "max_pool2d: input must be [C x H x W], got " + shape_str(x.shape()));
  require(window >= 1 && x.dim(1) >= window && x.dim(2) >= window,
          "max_pool2d: window larger than input " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / window, ow = w / window;
  Tensor<T> y({c, oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (ch * h + i * window) * w + j * window;
        for (std::size_t di = 0; di < window; ++di) {
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = (ch * h + i * window + di) * w + j * window + dj;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + i) * ow + j;
        y[o] = x[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> concat_lastdim(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "concat_lastdim: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(Shape(p.shape().begin(), p.shape().end() - 1) == lead,
            "concat_lastdim: leading extents differ");
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.shape().back();
      std::copy_n(p.ptr() + r * w, w, out.ptr() + r * total + off);
      off += w;
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t start, std::size_t width) {
  const std::size_t n = x.shape().back();
  require(width >= 1 && start + width <= n, "slice_lastdim: range [" + std::to_string(start) +
                                                 ", " + std::to_string(start + width) +
                                                 ") outside extent " + std::to_string(n));
  Shape out_shape = x.shape();
  out_shape.back() = width;
  Tensor<T> out(out_shape);
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.ptr() + r * n + start, width, out.ptr() + r * width);
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Tensor<T> out({rows, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.ptr() + off);
    off += p.size();
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  require(count >= 1 && start + count <= x.rows(), "slice_rows: range outside " + shape_str(x.shape()));
  const std::size_t n = x.cols();
  std::vector<T> data(x.ptr() + start * n, x.ptr() + (start + count) * n);
  return Tensor<T>({count, n}, std::move(data));
}

#define LRT_INSTANTIATE(T)                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> add_row_vector(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sum_rows(const Tensor<T>&);                                              \
  template T sum(const Tensor<T>&);                                                           \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> softmax_lastdim(const Tensor<T>&, const AttentionMask*);                 \
  template Tensor<T> log_softmax_lastdim(const Tensor<T>&);                                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> im2col(const Tensor<T>&, const Conv2dGeometry&);                         \
  template Tensor<T> col2im(const Tensor<T>&, const Conv2dGeometry&);                         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                     \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::vector<std::size_t>*);    \
  template Tensor<T> concat_lastdim(std::span<const Tensor<T>>);                              \
  template Tensor<T> slice_lastdim(const Tensor<T>&, std::size_t, std::size_t);               \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                 \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);

LRT_INSTANTIATE(float)
LRT_INSTANTIATE(double)

#undef LRT_INSTANTIATE

}  // namespace lrt
