#include "saek/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace saek::nn {

namespace {

template <typename T>
void require_rank4(const Var<T>& x, const char* op) {
  if (x.shape().size() != 4) throw ShapeError(std::string(op) + " expects N x C x H x W, got " + to_string(x.shape()));
}

template <typename T>
void add_into(TensorT<T>& dst, const TensorT<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

std::uint64_t mix_bits(std::uint64_t h, std::uint64_t bits) { return (h ^ bits) * 0x100000001B3ULL; }

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, ConvOptions options) {
  Tape<T>& tape = *x.tape();
  kernels::check_conv_shapes(x.shape(), weight.shape(), "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(xs) + ", weight " + to_string(ws));
  }
  if (bias && bias->shape() != Shape{ws[0]}) throw ShapeError("conv2d bias must have shape [" + std::to_string(ws[0]) + "]");
  const Window win{ws[2], ws[3], options.stride, options.pad};
  const Shape out_shape{xs[0], ws[0], win.out_h(xs[2]), win.out_w(xs[3])};

  TensorT<T> out = tape.shape_only()
                       ? TensorT<T>(out_shape)
                       : kernels::conv2d_forward(x.value(), weight.value(), bias ? &bias->value() : nullptr,
                                                 options.stride, options.pad);
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record("conv2d", inputs, std::move(out), [options](const BackwardContext<T>& ctx) {
    kernels::GradRequest want{ctx.grads[0] != nullptr, ctx.grads[1] != nullptr,
                              ctx.grads.size() > 2 && ctx.grads[2] != nullptr};
    auto g = kernels::conv2d_backward(*ctx.inputs[0], *ctx.inputs[1], ctx.grad_out, options.stride, options.pad, want);
    if (want.input) add_into(*ctx.grads[0], *g.input);
    if (want.weight) add_into(*ctx.grads[1], *g.weight);
    if (want.bias) add_into(*ctx.grads[2], *g.bias);
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, ConvOptions options) {
  Tape<T>& tape = *x.tape();
  kernels::check_conv_shapes(x.shape(), weight.shape(), "conv_transpose2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs[1] != ws[0]) {
    throw ShapeError("conv_transpose2d channel mismatch: input " + to_string(xs) + ", weight " + to_string(ws));
  }
  if (bias && bias->shape() != Shape{ws[1]}) throw ShapeError("conv_transpose2d bias shape mismatch");
  const std::size_t full_h = (xs[2] - 1) * options.stride + ws[2];
  const std::size_t full_w = (xs[3] - 1) * options.stride + ws[3];
  if (full_h <= 2 * options.pad || full_w <= 2 * options.pad) throw ShapeError("conv_transpose2d: degenerate output");
  const Shape out_shape{xs[0], ws[1], full_h - 2 * options.pad, full_w - 2 * options.pad};

  TensorT<T> out = tape.shape_only()
                       ? TensorT<T>(out_shape)
                       : kernels::conv_transpose2d_forward(x.value(), weight.value(),
                                                           bias ? &bias->value() : nullptr, options.stride,
                                                           options.pad);
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record("conv_transpose2d", inputs, std::move(out), [options](const BackwardContext<T>& ctx) {
    kernels::GradRequest want{ctx.grads[0] != nullptr, ctx.grads[1] != nullptr,
                              ctx.grads.size() > 2 && ctx.grads[2] != nullptr};
    auto g = kernels::conv_transpose2d_backward(*ctx.inputs[0], *ctx.inputs[1], ctx.grad_out, options.stride,
                                                options.pad, want);
    if (want.input) add_into(*ctx.grads[0], *g.input);
    if (want.weight) add_into(*ctx.grads[1], *g.weight);
    if (want.bias) add_into(*ctx.grads[2], *g.bias);
  });
}

template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, TensorT<T>& running_mean,
                   TensorT<T>& running_var, const BatchNormOptions& options) {
  Tape<T>& tape = *x.tape();
  require_rank4(x, "batchnorm2d");
  const Shape& s = x.shape();
  const std::size_t n = s[0], channels = s[1], plane = s[2] * s[3];
  const Shape ch_shape{channels};
  if (gamma.shape() != ch_shape || beta.shape() != ch_shape || running_mean.shape() != ch_shape ||
      running_var.shape() != ch_shape) {
    throw ShapeError("batchnorm2d parameters must have shape " + to_string(ch_shape) + " for input " + to_string(s));
  }
  const std::size_t count = n * plane;
  const bool training = options.mode == Mode::train;
  if (training && count < 2) {
    throw ValidationError("batchnorm2d in train mode needs at least 2 values per channel, got input " + to_string(s));
  }
  if (tape.shape_only()) return tape.record("batchnorm2d", {x, gamma, beta}, TensorT<T>(s), nullptr);

  const T eps = static_cast<T>(options.eps);
  std::vector<T> mean(channels), inv_std(channels);
  const TensorT<T>& xv = x.value();
  TensorT<T> out(s);
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < channels; ++c) {
    T mu, var;
    if (training) {
      T acc{0};
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xv.data().data() + (i * channels + c) * plane;
        for (std::size_t q = 0; q < plane; ++q) acc += p[q];
      }
      mu = acc / static_cast<T>(count);
      T sq{0};
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xv.data().data() + (i * channels + c) * plane;
        for (std::size_t q = 0; q < plane; ++q) sq += (p[q] - mu) * (p[q] - mu);
      }
      var = sq / static_cast<T>(count);
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    mean[c] = mu;
    inv_std[c] = T{1} / std::sqrt(var + eps);
    const T scale_c = gamma.value()[c] * inv_std[c];
    const T shift_c = beta.value()[c];
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = xv.data().data() + (i * channels + c) * plane;
      T* o = out.data().data() + (i * channels + c) * plane;
      for (std::size_t q = 0; q < plane; ++q) o[q] = (p[q] - mu) * scale_c + shift_c;
    }
    if (training && options.update_running) {
      const T m = static_cast<T>(options.momentum);
      const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
      running_mean[c] = (T{1} - m) * running_mean[c] + m * mu;
      running_var[c] = (T{1} - m) * running_var[c] + m * unbiased;
    }
  }

  return tape.record(
      "batchnorm2d", {x, gamma, beta}, std::move(out),
      [training, mean = std::move(mean), inv_std = std::move(inv_std), n, channels, plane,
       count](const BackwardContext<T>& ctx) {
        const TensorT<T>& xv = *ctx.inputs[0];
        const TensorT<T>& gv = *ctx.inputs[1];
        const TensorT<T>& g = ctx.grad_out;
#pragma omp parallel for schedule(static)
        for (std::size_t c = 0; c < channels; ++c) {
          T sum_g{0}, sum_gx{0};
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * channels + c) * plane;
            for (std::size_t q = 0; q < plane; ++q) {
              const T xhat = (xv[base + q] - mean[c]) * inv_std[c];
              sum_g += g[base + q];
              sum_gx += g[base + q] * xhat;
            }
          }
          if (ctx.grads[1]) (*ctx.grads[1])[c] += sum_gx;
          if (ctx.grads[2]) (*ctx.grads[2])[c] += sum_g;
          if (!ctx.grads[0]) continue;
          TensorT<T>& gx = *ctx.grads[0];
          const T gamma_c = gv[c];
          if (!training) {
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t base = (i * channels + c) * plane;
              for (std::size_t q = 0; q < plane; ++q) gx[base + q] += g[base + q] * gamma_c * inv_std[c];
            }
            continue;
          }
          // dx = gamma * inv_std / M * (M g - sum(g) - xhat * sum(g xhat))
          const T m = static_cast<T>(count);
          const T k = gamma_c * inv_std[c] / m;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * channels + c) * plane;
            for (std::size_t q = 0; q < plane; ++q) {
              const T xhat = (xv[base + q] - mean[c]) * inv_std[c];
              gx[base + q] += k * (m * g[base + q] - sum_g - xhat * sum_gx);
            }
          }
        }
      });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x, const Window& window) {
  Tape<T>& tape = *x.tape();
  require_rank4(x, "maxpool2d");
  if (window.pad >= window.kh || window.pad >= window.kw) throw ShapeError("maxpool2d padding must be < kernel");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  const std::size_t oh = window.out_h(h), ow = window.out_w(w);
  const Shape out_shape{s[0], s[1], oh, ow};
  if (tape.shape_only()) return tape.record("maxpool2d", {x}, TensorT<T>(out_shape), nullptr);

  TensorT<T> out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  const TensorT<T>& xv = x.value();
  const auto pad = static_cast<std::ptrdiff_t>(window.pad);
#pragma omp parallel for schedule(static)
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t u = 0; u < window.kh; ++u) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * window.stride + u) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t v = 0; v < window.kw; ++v) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * window.stride + v) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = (pl * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
            if (!found || xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (pl * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
  }
  if (tape.track_decisions()) {
    std::uint64_t hsh = 0;
    for (auto a : argmax) hsh = mix_bits(hsh, a);
    tape.note_decision(hsh);
  }
  return tape.record("maxpool2d", {x}, std::move(out), [argmax = std::move(argmax)](const BackwardContext<T>& ctx) {
    TensorT<T>& gx = *ctx.grads[0];
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += ctx.grad_out[o];
  });
}

template <typename T>
Var<T> avgpool2d(const Var<T>& x, const Window& window) {
  Tape<T>& tape = *x.tape();
  require_rank4(x, "avgpool2d");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  const std::size_t oh = window.out_h(h), ow = window.out_w(w);
  const Shape out_shape{s[0], s[1], oh, ow};
  if (tape.shape_only()) return tape.record("avgpool2d", {x}, TensorT<T>(out_shape), nullptr);

  // Visits every in-bounds (output, input) pair of a window in a fixed order.
  auto for_window = [window, h, w](std::size_t pl, std::size_t oy, std::size_t ox, auto&& fn) {
    const auto pad = static_cast<std::ptrdiff_t>(window.pad);
    for (std::size_t u = 0; u < window.kh; ++u) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * window.stride + u) - pad;
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t v = 0; v < window.kw; ++v) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * window.stride + v) - pad;
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
        fn((pl * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix));
      }
    }
  };
  const T inv_area = T{1} / static_cast<T>(window.kh * window.kw);
  TensorT<T> out(out_shape);
  const TensorT<T>& xv = x.value();
#pragma omp parallel for schedule(static)
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc{0};
        for_window(pl, oy, ox, [&](std::size_t idx) { acc += xv[idx]; });
        out[(pl * oh + oy) * ow + ox] = acc * inv_area;
      }
  return tape.record("avgpool2d", {x}, std::move(out),
                     [for_window, planes, oh, ow, inv_area](const BackwardContext<T>& ctx) {
                       TensorT<T>& gx = *ctx.grads[0];
                       for (std::size_t pl = 0; pl < planes; ++pl)
                         for (std::size_t oy = 0; oy < oh; ++oy)
                           for (std::size_t ox = 0; ox < ow; ++ox) {
                             const T g = ctx.grad_out[(pl * oh + oy) * ow + ox] * inv_area;
                             for_window(pl, oy, ox, [&](std::size_t idx) { gx[idx] += g; });
                           }
                     });
}

template <typename T>
Var<T> adaptive_avgpool_1x1(const Var<T>& x) {
  Tape<T>& tape = *x.tape();
  require_rank4(x, "adaptive_avgpool_1x1");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], plane = s[2] * s[3];
  const Shape out_shape{s[0], s[1], 1, 1};
  if (tape.shape_only()) return tape.record("adaptive_avgpool_1x1", {x}, TensorT<T>(out_shape), nullptr);
  TensorT<T> out(out_shape);
  const TensorT<T>& xv = x.value();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    T acc{0};
    for (std::size_t q = 0; q < plane; ++q) acc += xv[pl * plane + q];
    out[pl] = acc / static_cast<T>(plane);
  }
  return tape.record("adaptive_avgpool_1x1", {x}, std::move(out), [planes, plane](const BackwardContext<T>& ctx) {
    TensorT<T>& gx = *ctx.grads[0];
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const T g = ctx.grad_out[pl] / static_cast<T>(plane);
      for (std::size_t q = 0; q < plane; ++q) gx[pl * plane + q] += g;
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tape<T>& tape = *x.tape();
  if (tape.shape_only()) return tape.record("relu", {x}, TensorT<T>(x.shape()), nullptr);
  TensorT<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  if (tape.track_decisions()) {
    std::uint64_t h = 0, word = 0;
    const auto xs = x.value().data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      word = (word << 1) | (xs[i] > T{0} ? 1u : 0u);
      if (i % 64 == 63) {
        h = mix_bits(h, word);
        word = 0;
      }
    }
    tape.note_decision(mix_bits(h, word));
  }
  // The derivative at exactly 0 is taken as 0.
  return tape.record("relu", {x}, std::move(out), [](const BackwardContext<T>& ctx) {
    const TensorT<T>& xv = *ctx.inputs[0];
    TensorT<T>& gx = *ctx.grads[0];
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > T{0}) gx[i] += ctx.grad_out[i];
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
  Tape<T>& tape = *x.tape();
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw ShapeError("linear feature mismatch: input " + to_string(xs) + ", weight " + to_string(ws));
  }
  if (bias && bias->shape() != Shape{ws[0]}) throw ShapeError("linear bias shape mismatch");
  const std::size_t n = xs[0], in = xs[1], out_f = ws[0];
  TensorT<T> out(Shape{n, out_f});
  if (!tape.shape_only()) {
    kernels::gemm(kernels::Trans::no, kernels::Trans::yes, n, out_f, in, x.value().data().data(), in,
                  weight.value().data().data(), in, out.data().data(), out_f, false);
    if (bias)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_f; ++j) out[i * out_f + j] += bias->value()[j];
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record("linear", inputs, std::move(out), [n, in, out_f](const BackwardContext<T>& ctx) {
    const T* g = ctx.grad_out.data().data();
    if (ctx.grads[0]) {
      kernels::gemm(kernels::Trans::no, kernels::Trans::no, n, in, out_f, g, out_f, ctx.inputs[1]->data().data(), in,
                    ctx.grads[0]->data().data(), in, true);
    }
    if (ctx.grads[1]) {
      kernels::gemm(kernels::Trans::yes, kernels::Trans::no, out_f, in, n, g, out_f, ctx.inputs[0]->data().data(), in,
                    ctx.grads[1]->data().data(), in, true);
    }
    if (ctx.grads.size() > 2 && ctx.grads[2]) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_f; ++j) (*ctx.grads[2])[j] += g[i * out_f + j];
    }
  });
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& x) {
  if (x.rank() != 2) throw ShapeError("softmax expects N x C, got " + to_string(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  TensorT<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    T row_max = x[i * c];
    for (std::size_t j = 1; j < c; ++j) row_max = std::max(row_max, x[i * c + j]);
    T total{0};
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(x[i * c + j] - row_max);
      total += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  return out;
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  Tape<T>& tape = *x.tape();
  TensorT<T> out = softmax(x.value());
  return tape.record("softmax", {x}, std::move(out), [](const BackwardContext<T>& ctx) {
    const TensorT<T>& y = ctx.output;
    const std::size_t n = y.shape()[0], c = y.shape()[1];
    for (std::size_t i = 0; i < n; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < c; ++j) dot += ctx.grad_out[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) (*ctx.grads[0])[i * c + j] += y[i * c + j] * (ctx.grad_out[i * c + j] - dot);
    }
  });
}

template <typename T>
Var<T> flatten(const Var<T>& x) {
  const Shape& s = x.shape();
  return reshape(x, Shape{s[0], numel(s) / s[0]});
}

#define SAEK_INSTANTIATE(T)                                                                                     \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>*, ConvOptions);                             \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>*, ConvOptions);                   \
  template Var<T> batchnorm2d(const Var<T>&, const Var<T>&, const Var<T>&, TensorT<T>&, TensorT<T>&,            \
                              const BatchNormOptions&);                                                         \
  template Var<T> maxpool2d(const Var<T>&, const Window&);                                                      \
  template Var<T> avgpool2d(const Var<T>&, const Window&);                                                      \
  template Var<T> adaptive_avgpool_1x1(const Var<T>&);                                                          \
  template Var<T> relu(const Var<T>&);                                                                          \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>*);                                          \
  template Var<T> softmax(const Var<T>&);                                                                       \
  template TensorT<T> softmax(const TensorT<T>&);                                                               \
  template Var<T> flatten(const Var<T>&);

SAEK_INSTANTIATE(float)
SAEK_INSTANTIATE(double)

#undef SAEK_INSTANTIATE

}  // namespace saek::nn
