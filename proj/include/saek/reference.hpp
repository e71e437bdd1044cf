#pragma once

// Serial direct-summation kernels. Slow and obvious on purpose; tests and the
// benchmark compare the parallel kernels against these.

#include "saek/kernels.hpp"

namespace saek::reference {

template <typename T>
void gemm(kernels::Trans trans_a, kernels::Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                          std::size_t stride, std::size_t pad);

template <typename T>
kernels::ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& grad_out,
                                      std::size_t stride, std::size_t pad);

template <typename T>
TensorT<T> conv_transpose2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                                    std::size_t stride, std::size_t pad);

template <typename T>
kernels::ConvGrads<T> conv_transpose2d_backward(const TensorT<T>& x, const TensorT<T>& weight,
                                                const TensorT<T>& grad_out, std::size_t stride,
                                                std::size_t pad);

}  // namespace saek::reference
