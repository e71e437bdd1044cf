#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saek/error.hpp"

namespace saek {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor. The scalar type doubles as the precision tag:
/// training runs on TensorT<float>, gradient checks on TensorT<double>.
///
/// Invariants: the shape is non-empty, every extent is >= 1, and
/// numel(shape) == data.size().
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() : shape_{1}, data_(1, T{0}) {}
  explicit TensorT(Shape shape, T fill = T{0});
  TensorT(Shape shape, std::vector<T> data);

  static TensorT scalar(T value) { return TensorT(Shape{1}, std::vector<T>{value}); }
  static TensorT from(Shape shape, std::initializer_list<T> values) {
    return TensorT(std::move(shape), std::vector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  /// Multi-index access, bounds checked.
  T at(std::initializer_list<std::size_t> index) const;
  T& at(std::initializer_list<std::size_t> index);

  TensorT reshape(Shape shape) const;

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(out));
  }

  std::optional<std::size_t> first_non_finite() const;
  bool all_finite() const { return !first_non_finite().has_value(); }
  /// Throws NumericError naming `what` and the offending flat index.
  void check_finite(const std::string& what) const;

  friend bool operator==(const TensorT& a, const TensorT& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

enum class Binary { add, sub, mul, div, max };
enum class Reduction { sum, mean, max };

/// How `b` lines up with `a` in a binary op. Only three forms exist.
enum class Broadcast { same, scalar, channel };

/// Classifies the broadcast form or throws ShapeError naming both shapes.
Broadcast broadcast_kind(const Shape& a, const Shape& b);

template <typename T>
TensorT<T> elementwise(const TensorT<T>& a, const TensorT<T>& b, Binary mode);

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a);

template <typename T>
TensorT<T> concat(std::span<const TensorT<T>> parts, std::size_t axis);

/// Extracts [offset, offset + extent) along `axis`.
template <typename T>
TensorT<T> slice(const TensorT<T>& a, std::size_t axis, std::size_t offset, std::size_t extent);

template <typename T>
struct ReduceResult {
  TensorT<T> values;
  /// Flat source indices of the maxima (max mode only).
  std::vector<std::size_t> argmax;
};

/// Reduces along `axis`, or over everything when `axis` is empty (result
/// has shape {1}). Argmax ties go to the lowest flat index.
template <typename T>
ReduceResult<T> reduce(const TensorT<T>& a, std::optional<std::size_t> axis, Reduction mode);

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor);

}  // namespace saek
