#pragma once

#include "saek/autograd.hpp"
#include "saek/kernels.hpp"

namespace saek::nn {

using kernels::Window;

enum class Mode { train, eval };

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Cross-correlation with symmetric zero padding. `bias` may be null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, ConvOptions options);

/// Adjoint of conv2d; weight is in_ch x out_ch x kh x kw and every input
/// element scatters weight * value at stride offsets.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, ConvOptions options);

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
  Mode mode = Mode::train;
  /// Train mode only: fold the batch statistics into the running buffers.
  bool update_running = true;
};

/// Per-channel batch normalization over N x H x W. Train mode normalizes
/// with the biased batch variance and, if asked, updates the running
/// statistics (running_var receives the unbiased estimate); eval mode uses
/// the running statistics.
template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, TensorT<T>& running_mean,
                   TensorT<T>& running_var, const BatchNormOptions& options);

/// Max pooling; padded positions never win. Backward routes each window's
/// gradient to its argmax (lowest index on ties).
template <typename T>
Var<T> maxpool2d(const Var<T>& x, const Window& window);

/// Average pooling; zero padding counts towards the divisor.
template <typename T>
Var<T> avgpool2d(const Var<T>& x, const Window& window);

/// Per-channel spatial mean, N x C x H x W -> N x C x 1 x 1.
template <typename T>
Var<T> adaptive_avgpool_1x1(const Var<T>& x);

template <typename T>
Var<T> relu(const Var<T>& x);

/// N x in -> N x out with weight out x in.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias);

/// Row softmax of an N x C matrix.
template <typename T>
Var<T> softmax(const Var<T>& x);

template <typename T>
TensorT<T> softmax(const TensorT<T>& x);

/// N x ... -> N x (product of the rest).
template <typename T>
Var<T> flatten(const Var<T>& x);

}  // namespace saek::nn
