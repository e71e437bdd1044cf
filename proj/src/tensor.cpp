#include "saek/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace saek {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extent must be >= 1, got " + to_string(shape));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) for strided loops.
struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
}

}  // namespace

template <typename T>
TensorT<T>::TensorT(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(numel(shape_), fill);
}

template <typename T>
TensorT<T>::TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (numel(shape_) != data_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t TensorT<T>::dim(std::size_t axis) const {
  check_axis(shape_, axis);
  return shape_[axis];
}

template <typename T>
std::size_t TensorT<T>::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch for " + to_string(shape_));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range for " + to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename T>
T TensorT<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

template <typename T>
T& TensorT<T>::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(index)];
}

template <typename T>
TensorT<T> TensorT<T>::reshape(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return TensorT(std::move(shape), data_);
}

template <typename T>
std::optional<std::size_t> TensorT<T>::first_non_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) return i;
  }
  return std::nullopt;
}

template <typename T>
void TensorT<T>::check_finite(const std::string& what) const {
  if (auto bad = first_non_finite()) {
    throw NumericError(what + ": non-finite value at flat index " + std::to_string(*bad));
  }
}

Broadcast broadcast_kind(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (b.size() == 1 && b[0] == 1) return Broadcast::scalar;
  if (b.size() == 1 && a.size() >= 2 && a[1] == b[0]) return Broadcast::channel;
  throw ShapeError("shape mismatch: " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
TensorT<T> elementwise(const TensorT<T>& a, const TensorT<T>& b, Binary mode) {
  const Broadcast kind = broadcast_kind(a.shape(), b.shape());
  TensorT<T> out(a.shape());
  const std::size_t channels = a.rank() >= 2 ? a.shape()[1] : 1;
  const std::size_t inner = kind == Broadcast::channel ? a.size() / (a.shape()[0] * channels) : 1;
  auto rhs = [&](std::size_t i) -> T {
    switch (kind) {
      case Broadcast::same: return b[i];
      case Broadcast::scalar: return b[0];
      case Broadcast::channel: return b[(i / inner) % channels];
    }
    return T{0};
  };
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T r = rhs(i);
    switch (mode) {
      case Binary::add: y[i] = x[i] + r; break;
      case Binary::sub: y[i] = x[i] - r; break;
      case Binary::mul: y[i] = x[i] * r; break;
      case Binary::div:
        if (r == T{0}) throw NumericError("division by zero at element " + std::to_string(i));
        y[i] = x[i] / r;
        break;
      case Binary::max: y[i] = std::max(x[i], r); break;
    }
  }
  return out;
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul dimension mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  TensorT<T> c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[p * n + j];
    }
  }
  return c;
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d needs rank 2, got " + to_string(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  TensorT<T> t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

template <typename T>
TensorT<T> concat(std::span<const TensorT<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of an empty list");
  const Shape& first = parts[0].shape();
  check_axis(first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
    out_shape[axis] += s[axis];
  }
  TensorT<T> out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const AxisSplit ps = split_at(p.shape(), axis);
    const std::size_t run = ps.extent * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o) {
      std::copy_n(p.data().begin() + o * run, run,
                  out.data().begin() + o * os.extent * os.inner + offset * os.inner);
    }
    offset += ps.extent;
  }
  return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, std::size_t axis, std::size_t offset, std::size_t extent) {
  check_axis(a.shape(), axis);
  if (extent == 0 || offset + extent > a.shape()[axis]) {
    throw ShapeError("slice [" + std::to_string(offset) + ", +" + std::to_string(extent) + ") out of range for " +
                     to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = extent;
  TensorT<T> out(out_shape);
  const AxisSplit s = split_at(a.shape(), axis);
  const std::size_t run = extent * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(a.data().begin() + o * s.extent * s.inner + offset * s.inner, run, out.data().begin() + o * run);
  }
  return out;
}

template <typename T>
ReduceResult<T> reduce(const TensorT<T>& a, std::optional<std::size_t> axis, Reduction mode) {
  AxisSplit s{1, a.size(), 1};
  Shape out_shape{1};
  if (axis) {
    check_axis(a.shape(), *axis);
    s = split_at(a.shape(), *axis);
    out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
    if (out_shape.empty()) out_shape = {1};
  }
  ReduceResult<T> r{TensorT<T>(out_shape), {}};
  if (mode == Reduction::max) r.argmax.resize(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      const std::size_t dst = o * s.inner + in;
      if (mode == Reduction::max) {
        std::size_t best = base;
        for (std::size_t e = 1; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          if (a[idx] > a[best]) best = idx;
        }
        r.values[dst] = a[best];
        r.argmax[dst] = best;
      } else {
        T acc{0};
        for (std::size_t e = 0; e < s.extent; ++e) acc += a[base + e * s.inner];
        r.values[dst] = mode == Reduction::mean ? acc / static_cast<T>(s.extent) : acc;
      }
    }
  }
  return r;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
  TensorT<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

#define SAEK_INSTANTIATE(T)                                                                               \
  template class TensorT<T>;                                                                              \
  template TensorT<T> elementwise(const TensorT<T>&, const TensorT<T>&, Binary);                          \
  template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                                       \
  template TensorT<T> transpose2d(const TensorT<T>&);                                                     \
  template TensorT<T> concat(std::span<const TensorT<T>>, std::size_t);                                   \
  template TensorT<T> slice(const TensorT<T>&, std::size_t, std::size_t, std::size_t);                    \
  template ReduceResult<T> reduce(const TensorT<T>&, std::optional<std::size_t>, Reduction);              \
  template TensorT<T> scale(const TensorT<T>&, T);

SAEK_INSTANTIATE(float)
SAEK_INSTANTIATE(double)

#undef SAEK_INSTANTIATE

}  // namespace saek
