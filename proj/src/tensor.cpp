#include "lrt/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <utility>

namespace lrt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), T{0});
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (shape_.size() != 2) throw ShapeError("expected a 2-D tensor, got " + shape_str(shape_));
  return shape_[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (shape_.size() != 2) throw ShapeError("expected a 2-D tensor, got " + shape_str(shape_));
  return shape_[1];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

template class Tensor<float>;
template class Tensor<double>;

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m.set(i, j, true);
  }
  return m;
}

AttentionMask AttentionMask::key_padding(std::size_t rows, std::size_t cols,
                                         std::size_t valid_keys) {
  AttentionMask m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = valid_keys; j < cols; ++j) m.set(i, j, true);
  }
  return m;
}

AttentionMask AttentionMask::operator|(const AttentionMask& other) const {
  if (rows != other.rows || cols != other.cols) throw ShapeError("mask shapes differ");
  AttentionMask m = *this;
  for (std::size_t i = 0; i < blocked.size(); ++i) m.blocked[i] |= other.blocked[i];
  return m;
}

}  // namespace lrt
