#include "saek/reference.hpp"

namespace saek::reference {

using kernels::ConvGrads;
using kernels::Trans;

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
          const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a == Trans::no ? a[i * lda + p] : a[p * lda + i];
        const T bv = trans_b == Trans::no ? b[p * ldb + j] : b[j * ldb + p];
        acc += av * bv;
      }
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + acc : acc;
    }
  }
}

namespace {

struct Dims {
  std::size_t n, c, h, w, o, kh, kw, oh, ow;
};

Dims conv_dims(const Shape& x, const Shape& weight, std::size_t stride, std::size_t pad) {
  kernels::check_conv_shapes(x, weight, "reference conv2d");
  if (x[1] != weight[1]) throw ShapeError("reference conv2d channel mismatch");
  const kernels::Window win{weight[2], weight[3], stride, pad};
  return {x[0], x[1], x[2], x[3], weight[0], weight[2], weight[3], win.out_h(x[2]), win.out_w(x[3])};
}

// Input coordinate read by output (oy, ox) through kernel tap (u, v), or -1
// when it falls into the zero padding.
std::ptrdiff_t source(std::size_t out, std::size_t tap, std::size_t stride, std::size_t pad, std::size_t extent) {
  const auto pos = static_cast<std::ptrdiff_t>(out * stride + tap) - static_cast<std::ptrdiff_t>(pad);
  return (pos >= 0 && pos < static_cast<std::ptrdiff_t>(extent)) ? pos : -1;
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                          std::size_t stride, std::size_t pad) {
  const Dims d = conv_dims(x.shape(), weight.shape(), stride, pad);
  TensorT<T> out(Shape{d.n, d.o, d.oh, d.ow});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.o; ++o)
      for (std::size_t oy = 0; oy < d.oh; ++oy)
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          T acc = bias ? (*bias)[o] : T{0};
          for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t u = 0; u < d.kh; ++u) {
              const auto iy = source(oy, u, stride, pad, d.h);
              if (iy < 0) continue;
              for (std::size_t v = 0; v < d.kw; ++v) {
                const auto ix = source(ox, v, stride, pad, d.w);
                if (ix < 0) continue;
                acc += x.at({n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) *
                       weight.at({o, c, u, v});
              }
            }
          out.at({n, o, oy, ox}) = acc;
        }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& grad_out,
                             std::size_t stride, std::size_t pad) {
  const Dims d = conv_dims(x.shape(), weight.shape(), stride, pad);
  TensorT<T> gx(x.shape()), gw(weight.shape()), gb(Shape{d.o});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.o; ++o)
      for (std::size_t oy = 0; oy < d.oh; ++oy)
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          const T g = grad_out.at({n, o, oy, ox});
          gb[o] += g;
          for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t u = 0; u < d.kh; ++u) {
              const auto iy = source(oy, u, stride, pad, d.h);
              if (iy < 0) continue;
              for (std::size_t v = 0; v < d.kw; ++v) {
                const auto ix = source(ox, v, stride, pad, d.w);
                if (ix < 0) continue;
                const auto sy = static_cast<std::size_t>(iy), sx = static_cast<std::size_t>(ix);
                gx.at({n, c, sy, sx}) += g * weight.at({o, c, u, v});
                gw.at({o, c, u, v}) += g * x.at({n, c, sy, sx});
              }
            }
        }
  return {std::move(gx), std::move(gw), std::move(gb)};
}

template <typename T>
TensorT<T> conv_transpose2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                                    std::size_t stride, std::size_t pad) {
  kernels::check_conv_shapes(x.shape(), weight.shape(), "reference conv_transpose2d");
  const std::size_t n_ = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t co = weight.shape()[1], kh = weight.shape()[2], kw = weight.shape()[3];
  const std::size_t oh = (h - 1) * stride + kh - 2 * pad, ow = (w - 1) * stride + kw - 2 * pad;
  TensorT<T> out(Shape{n_, co, oh, ow});
  // Scatter: each input element spreads weight * value into the output.
  for (std::size_t n = 0; n < n_; ++n)
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < w; ++ix)
          for (std::size_t o = 0; o < co; ++o)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const auto y = static_cast<std::ptrdiff_t>(iy * stride + u) - static_cast<std::ptrdiff_t>(pad);
                const auto xx = static_cast<std::ptrdiff_t>(ix * stride + v) - static_cast<std::ptrdiff_t>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<std::ptrdiff_t>(oh) || xx >= static_cast<std::ptrdiff_t>(ow))
                  continue;
                out.at({n, o, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)}) +=
                    x.at({n, c, iy, ix}) * weight.at({c, o, u, v});
              }
  if (bias) {
    for (std::size_t n = 0; n < n_; ++n)
      for (std::size_t o = 0; o < co; ++o)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) out.at({n, o, y, xx}) += (*bias)[o];
  }
  return out;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& grad_out,
                                       std::size_t stride, std::size_t pad) {
  const std::size_t n_ = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t co = weight.shape()[1], kh = weight.shape()[2], kw = weight.shape()[3];
  const std::size_t oh = grad_out.shape()[2], ow = grad_out.shape()[3];
  TensorT<T> gx(x.shape()), gw(weight.shape()), gb(Shape{co});
  for (std::size_t n = 0; n < n_; ++n)
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < w; ++ix)
          for (std::size_t o = 0; o < co; ++o)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const auto y = static_cast<std::ptrdiff_t>(iy * stride + u) - static_cast<std::ptrdiff_t>(pad);
                const auto xx = static_cast<std::ptrdiff_t>(ix * stride + v) - static_cast<std::ptrdiff_t>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<std::ptrdiff_t>(oh) || xx >= static_cast<std::ptrdiff_t>(ow))
                  continue;
                const T g = grad_out.at({n, o, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)});
                gx.at({n, c, iy, ix}) += g * weight.at({c, o, u, v});
                gw.at({c, o, u, v}) += g * x.at({n, c, iy, ix});
              }
  for (std::size_t n = 0; n < n_; ++n)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) gb[o] += grad_out.at({n, o, y, xx});
  return {std::move(gx), std::move(gw), std::move(gb)};
}

#define SAEK_INSTANTIATE(T)                                                                                    \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*,  \
                        std::size_t, T*, std::size_t, bool);                                                   \
  template TensorT<T> conv2d_forward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*, std::size_t,      \
                                     std::size_t);                                                             \
  template ConvGrads<T> conv2d_backward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, std::size_t,  \
                                        std::size_t);                                                          \
  template TensorT<T> conv_transpose2d_forward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*,         \
                                               std::size_t, std::size_t);                                      \
  template ConvGrads<T> conv_transpose2d_backward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,     \
                                                  std::size_t, std::size_t);

SAEK_INSTANTIATE(float)
SAEK_INSTANTIATE(double)

#undef SAEK_INSTANTIATE

}  // namespace saek::reference
