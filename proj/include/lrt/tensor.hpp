#pragma once
// Dense row-major tensor and attention mask value types.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrt {

using Shape = std::vector<std::size_t>;

/// Raised on any shape incompatibility.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  /// Empty placeholder (no shape, no data).
  Tensor() = default;
  /// Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor filled(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  bool empty() const { return shape_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  /// Rows/cols of a 2-D tensor (throws otherwise).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return data_[r * shape_.back() + c];
  }

  /// The single element of a one-element tensor.
  T item() const;

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Boolean (query_len x key_len) mask; true blocks the position.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> blocked;

  AttentionMask() = default;
  AttentionMask(std::size_t r, std::size_t c)
      : rows(r), cols(c), blocked(r * c, 0) {}

  bool at(std::size_t i, std::size_t j) const { return blocked[i * cols + j] != 0; }
  void set(std::size_t i, std::size_t j, bool b) { blocked[i * cols + j] = b ? 1 : 0; }

  /// Blocks every key position j > i.
  static AttentionMask causal(std::size_t n);
  /// Blocks key positions j >= valid_keys for every query.
  static AttentionMask key_padding(std::size_t rows, std::size_t cols,
                                   std::size_t valid_keys);
  /// Union of two masks of equal shape.
  AttentionMask operator|(const AttentionMask& other) const;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace lrt
