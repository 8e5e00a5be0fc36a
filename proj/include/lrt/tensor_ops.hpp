#pragma once
// Value-level tensor primitives. Every function validates shapes and throws
// ShapeError on mismatch. Results are bit-deterministic for a given element
// type, kernel ISA and input.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "lrt/tensor.hpp"

namespace lrt {

/// A softmax row with every position blocked has no valid distribution.
class MaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Logit offset applied to blocked positions before normalization.
inline constexpr double kMaskedLogit = -1e9;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
/// a + bias broadcast over every leading index; bias length == last extent.
template <typename T>
Tensor<T> add_row_vector(const Tensor<T>& a, const Tensor<T>& bias);
/// Column sums of a tensor viewed as (numel / last) x last.
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& a);
template <typename T>
T sum(const Tensor<T>& a);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Softmax over the last extent. With a mask, the last two extents of x must
/// equal the mask shape; blocked entries come out exactly zero.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const AttentionMask* mask = nullptr);
template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& shift, T eps);

struct Conv2dGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, pad;
  std::size_t out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
};

/// Unfolds x [C x H x W] to columns [C*kh*kw x out_h*out_w].
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, const Conv2dGeometry& g);
/// Adjoint of im2col: scatters columns back to [C x H x W].
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const Conv2dGeometry& g);

/// x [C x H x W], kernels [Co x C x kh x kw], bias [Co] or empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels,
                 const Tensor<T>& bias, std::size_t stride, std::size_t pad);

/// Non-overlapping max pooling of x [C x H x W] with a square window;
/// trailing rows/cols that do not fill a window are dropped. When argmax is
/// non-null it receives the flat input index of each selected element.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window,
                     std::vector<std::size_t>* argmax = nullptr);

template <typename T>
Tensor<T> concat_lastdim(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t start, std::size_t width);
/// Stacks 2-D tensors with equal column count.
template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count);

}  // namespace lrt
