#pragma once

// Parallel compute kernels. Every kernel parallelizes with OpenMP over
// output elements only, so each output value is produced by one thread with
// a reduction order that does not depend on the thread count. The serial
// direct-summation versions in reference.hpp are the test oracles.

#include <cstddef>
#include <optional>

#include "saek/tensor.hpp"

namespace saek::kernels {

enum class Trans { no, yes };

/// C(m x n) = op(A)(m x k) * op(B)(k x n), optionally added to C.
/// Row-major with explicit leading dimensions.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

/// Window geometry shared by convolution, pooling and the column transforms.
struct Window {
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  /// floor((in + 2 pad - k) / stride) + 1; throws ShapeError when < 1.
  std::size_t out_extent(std::size_t in, std::size_t k) const;
  std::size_t out_h(std::size_t in_h) const { return out_extent(in_h, kh); }
  std::size_t out_w(std::size_t in_w) const { return out_extent(in_w, kw); }
};

/// Unfolds one C x H x W image into a (C*kh*kw) x (oh*ow) column block
/// whose rows are `ld` apart.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, const Window& win,
            T* col, std::size_t ld);

/// Adjoint of im2col: accumulates the column block back into the image.
template <typename T>
void col2im(const T* col, std::size_t ld, std::size_t channels, std::size_t height, std::size_t width,
            const Window& win, T* image);

template <typename T>
struct ConvGrads {
  std::optional<TensorT<T>> input;
  std::optional<TensorT<T>> weight;
  std::optional<TensorT<T>> bias;
};

struct GradRequest {
  bool input = true;
  bool weight = true;
  bool bias = true;
};

/// x: N x C x H x W, weight: O x C x kh x kw, bias: O (optional).
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                          std::size_t stride, std::size_t pad);

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& grad_out,
                             std::size_t stride, std::size_t pad, GradRequest want);

/// x: N x Ci x H x W, weight: Ci x Co x kh x kw, output extent
/// (H - 1) * stride + kh - 2 pad.
template <typename T>
TensorT<T> conv_transpose2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                                    std::size_t stride, std::size_t pad);

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const TensorT<T>& x, const TensorT<T>& weight,
                                       const TensorT<T>& grad_out, std::size_t stride, std::size_t pad,
                                       GradRequest want);

/// Validates the N x C x H x W / O x C x kh x kw pairing for a convolution.
void check_conv_shapes(const Shape& x, const Shape& weight, const char* op);

}  // namespace saek::kernels
