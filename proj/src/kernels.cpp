#include "saek/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include <omp.h>

namespace saek::kernels {

namespace {

// Register tile: MR rows of A against NR columns of B (two 512-bit vectors).
template <typename T>
struct Tile {
  static constexpr std::size_t mr = 4;
  static constexpr std::size_t nr = 128 / sizeof(T);
};

constexpr std::size_t kDepthBlock = 256;

template <typename T>
inline T load_a(Trans t, const T* a, std::size_t lda, std::size_t i, std::size_t p) {
  return t == Trans::no ? a[i * lda + p] : a[p * lda + i];
}

template <typename T>
inline T load_b(Trans t, const T* b, std::size_t ldb, std::size_t p, std::size_t j) {
  return t == Trans::no ? b[p * ldb + j] : b[j * ldb + p];
}

// Packs rows [0, m) x depth [p0, p0 + kc) of op(A) into MR-row slivers,
// zero-padding the last sliver.
template <typename T>
void pack_a(Trans t, const T* a, std::size_t lda, std::size_t m, std::size_t p0, std::size_t kc, T* dst) {
  constexpr std::size_t mr = Tile<T>::mr;
  for (std::size_t i0 = 0; i0 < m; i0 += mr) {
    const std::size_t rows = std::min(mr, m - i0);
    T* sliver = dst + (i0 / mr) * kc * mr;
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < mr; ++r) {
        sliver[p * mr + r] = r < rows ? load_a(t, a, lda, i0 + r, p0 + p) : T{0};
      }
    }
  }
}

template <typename T>
void pack_b(Trans t, const T* b, std::size_t ldb, std::size_t j0, std::size_t cols, std::size_t p0,
            std::size_t kc, T* dst) {
  constexpr std::size_t nr = Tile<T>::nr;
  if (t == Trans::no && cols == nr) {
    for (std::size_t p = 0; p < kc; ++p) std::memcpy(dst + p * nr, b + (p0 + p) * ldb + j0, nr * sizeof(T));
    return;
  }
  for (std::size_t p = 0; p < kc; ++p) {
    for (std::size_t c = 0; c < nr; ++c) {
      dst[p * nr + c] = c < cols ? load_b(t, b, ldb, p0 + p, j0 + c) : T{0};
    }
  }
}

template <typename T>
inline void micro_kernel(std::size_t kc, const T* __restrict ap, const T* __restrict bp,
                         T (&__restrict acc)[Tile<T>::mr][Tile<T>::nr]) {
  constexpr std::size_t mr = Tile<T>::mr;
  constexpr std::size_t nr = Tile<T>::nr;
  for (std::size_t r = 0; r < mr; ++r)
    for (std::size_t c = 0; c < nr; ++c) acc[r][c] = T{0};
  for (std::size_t p = 0; p < kc; ++p) {
    const T* brow = bp + p * nr;
    const T* acol = ap + p * mr;
#pragma GCC unroll 4
    for (std::size_t r = 0; r < mr; ++r) {
      const T av = acol[r];
#pragma GCC unroll 32
      for (std::size_t c = 0; c < nr; ++c) acc[r][c] += av * brow[c];
    }
  }
}

}  // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t mr = Tile<T>::mr;
  constexpr std::size_t nr = Tile<T>::nr;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T{0});
    return;
  }
  const std::size_t slivers = (m + mr - 1) / mr;
  const std::size_t panels = (n + nr - 1) / nr;
  std::vector<T> packed_a(slivers * mr * std::min(k, kDepthBlock));

  for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
    const std::size_t kc = std::min(kDepthBlock, k - p0);
    const bool overwrite = p0 == 0 && !accumulate;
    pack_a(trans_a, a, lda, m, p0, kc, packed_a.data());

#pragma omp parallel
    {
      std::vector<T> packed_b(kc * nr);
      alignas(64) T acc[mr][nr];
#pragma omp for schedule(static)
      for (std::size_t jp = 0; jp < panels; ++jp) {
        const std::size_t j0 = jp * nr;
        const std::size_t cols = std::min(nr, n - j0);
        pack_b(trans_b, b, ldb, j0, cols, p0, kc, packed_b.data());
        for (std::size_t is = 0; is < slivers; ++is) {
          micro_kernel<T>(kc, packed_a.data() + is * kc * mr, packed_b.data(), acc);
          const std::size_t i0 = is * mr;
          const std::size_t rows = std::min(mr, m - i0);
          for (std::size_t r = 0; r < rows; ++r) {
            T* crow = c + (i0 + r) * ldc + j0;
            if (overwrite) {
              for (std::size_t q = 0; q < cols; ++q) crow[q] = acc[r][q];
            } else {
              for (std::size_t q = 0; q < cols; ++q) crow[q] += acc[r][q];
            }
          }
        }
      }
    }
  }
}

std::size_t Window::out_extent(std::size_t in, std::size_t k) const {
  if (stride == 0) throw ShapeError("window stride must be >= 1");
  if (in + 2 * pad < k) {
    throw ShapeError("degenerate output extent: input " + std::to_string(in) + ", kernel " + std::to_string(k) +
                     ", pad " + std::to_string(pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, const Window& win,
            T* col, std::size_t ld) {
  const std::size_t oh = win.out_h(height), ow = win.out_w(width);
  const auto pad = static_cast<std::ptrdiff_t>(win.pad);
  const std::size_t rows = channels * win.kh * win.kw;
#pragma omp parallel for schedule(static)
  for (std::size_t row = 0; row < rows; ++row) {
    const std::size_t ch = row / (win.kh * win.kw);
    const std::size_t u = (row / win.kw) % win.kh;
    const std::size_t v = row % win.kw;
    const T* plane = image + ch * height * width;
    T* out = col + row * ld;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * win.stride + u) - pad;
      T* out_row = out + oy * ow;
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
        std::fill_n(out_row, ow, T{0});
        continue;
      }
      const T* in_row = plane + static_cast<std::size_t>(iy) * width;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * win.stride + v) - pad;
        out_row[ox] = (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) ? in_row[ix] : T{0};
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t ld, std::size_t channels, std::size_t height, std::size_t width,
            const Window& win, T* image) {
  const std::size_t oh = win.out_h(height), ow = win.out_w(width);
  const auto pad = static_cast<std::ptrdiff_t>(win.pad);
  // Parallel over channels: each image plane receives its contributions in
  // (u, v, oy, ox) order no matter how many threads run.
#pragma omp parallel for schedule(static)
  for (std::size_t ch = 0; ch < channels; ++ch) {
    T* plane = image + ch * height * width;
    for (std::size_t u = 0; u < win.kh; ++u) {
      for (std::size_t v = 0; v < win.kw; ++v) {
        const T* src = col + ((ch * win.kh + u) * win.kw + v) * ld;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * win.stride + u) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * win.stride + v) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

void check_conv_shapes(const Shape& x, const Shape& weight, const char* op) {
  if (x.size() != 4 || weight.size() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 input and weight, got " + to_string(x) + " and " +
                     to_string(weight));
  }
}

namespace {

bool is_pointwise(const Window& w) { return w.kh == 1 && w.kw == 1 && w.stride == 1 && w.pad == 0; }

// Gathers N x C x P into C x (N*P) so a single GEMM covers the whole batch.
template <typename T>
std::vector<T> gather_channels(const T* src, std::size_t batch, std::size_t channels, std::size_t plane) {
  std::vector<T> out(batch * channels * plane);
  const std::size_t cols = batch * plane;
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t n = 0; n < batch; ++n)
      std::copy_n(src + (n * channels + c) * plane, plane, out.data() + c * cols + n * plane);
  return out;
}

template <typename T>
void scatter_channels(const T* src, std::size_t batch, std::size_t channels, std::size_t plane, T* dst) {
  const std::size_t cols = batch * plane;
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t n = 0; n < batch; ++n)
      std::copy_n(src + c * cols + n * plane, plane, dst + (n * channels + c) * plane);
}

// Column matrix (C*kh*kw) x (N*P) of the whole batch.
template <typename T>
std::vector<T> batch_im2col(const TensorT<T>& x, const Window& win) {
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const std::size_t p = win.out_h(h) * win.out_w(w);
  const std::size_t cols = n * p;
  std::vector<T> col(c * win.kh * win.kw * cols);
  for (std::size_t i = 0; i < n; ++i) im2col(x.data().data() + i * c * h * w, c, h, w, win, col.data() + i * p, cols);
  return col;
}

template <typename T>
TensorT<T> channel_sums(const TensorT<T>& g) {
  const auto& s = g.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  TensorT<T> out(Shape{c});
#pragma omp parallel for schedule(static)
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc{0};
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = g.data().data() + (i * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) acc += src[q];
    }
    out[ch] = acc;
  }
  return out;
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                          std::size_t stride, std::size_t pad) {
  check_conv_shapes(x.shape(), weight.shape(), "conv2d");
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t o = weight.shape()[0];
  if (weight.shape()[1] != c) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(x.shape()) + ", weight " +
                     to_string(weight.shape()));
  }
  const Window win{weight.shape()[2], weight.shape()[3], stride, pad};
  const std::size_t oh = win.out_h(h), ow = win.out_w(w), p = oh * ow;
  const std::size_t depth = c * win.kh * win.kw;
  const std::size_t cols = n * p;

  TensorT<T> out(Shape{n, o, oh, ow});
  std::vector<T> col;
  const T* col_ptr = x.data().data();
  if (!is_pointwise(win)) {
    col = batch_im2col(x, win);
    col_ptr = col.data();
  } else if (n > 1) {
    col = gather_channels(x.data().data(), n, c, p);
    col_ptr = col.data();
  }
  if (n == 1) {
    gemm(Trans::no, Trans::no, o, cols, depth, weight.data().data(), depth, col_ptr, cols, out.data().data(), cols,
         false);
  } else {
    std::vector<T> tmp(o * cols);
    gemm(Trans::no, Trans::no, o, cols, depth, weight.data().data(), depth, col_ptr, cols, tmp.data(), cols, false);
    scatter_channels(tmp.data(), n, o, p, out.data().data());
  }
  if (bias) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < o; ++ch) {
        T* dst = out.data().data() + (i * o + ch) * p;
        const T bv = (*bias)[ch];
        for (std::size_t q = 0; q < p; ++q) dst[q] += bv;
      }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& grad_out,
                             std::size_t stride, std::size_t pad, GradRequest want) {
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t o = weight.shape()[0];
  const Window win{weight.shape()[2], weight.shape()[3], stride, pad};
  const std::size_t p = win.out_h(h) * win.out_w(w);
  const std::size_t depth = c * win.kh * win.kw;
  const std::size_t cols = n * p;

  ConvGrads<T> grads;
  std::vector<T> g_gathered;
  const T* g = grad_out.data().data();
  if (n > 1) {
    g_gathered = gather_channels(g, n, o, p);
    g = g_gathered.data();
  }
  if (want.bias) grads.bias = channel_sums(grad_out);
  if (want.weight) {
    std::vector<T> col;
    const T* col_ptr = x.data().data();
    if (!is_pointwise(win)) {
      col = batch_im2col(x, win);
      col_ptr = col.data();
    } else if (n > 1) {
      col = gather_channels(x.data().data(), n, c, p);
      col_ptr = col.data();
    }
    TensorT<T> gw(weight.shape());
    gemm(Trans::no, Trans::yes, o, depth, cols, g, cols, col_ptr, cols, gw.data().data(), depth, false);
    grads.weight = std::move(gw);
  }
  if (want.input) {
    TensorT<T> gx(x.shape());
    if (is_pointwise(win) && n == 1) {
      gemm(Trans::yes, Trans::no, depth, cols, o, weight.data().data(), depth, g, cols, gx.data().data(), cols,
           false);
    } else {
      std::vector<T> gcol(depth * cols);
      gemm(Trans::yes, Trans::no, depth, cols, o, weight.data().data(), depth, g, cols, gcol.data(), cols, false);
      if (is_pointwise(win)) {
        scatter_channels(gcol.data(), n, c, p, gx.data().data());
      } else {
        for (std::size_t i = 0; i < n; ++i)
          col2im(gcol.data() + i * p, cols, c, h, w, win, gx.data().data() + i * c * h * w);
      }
    }
    grads.input = std::move(gx);
  }
  return grads;
}

namespace {

// Geometry of a transposed convolution seen as the adjoint of a convolution
// whose input is the transposed output.
struct TransposedGeometry {
  Window win;
  std::size_t out_h;
  std::size_t out_w;
};

TransposedGeometry transposed_geometry(const Shape& x, const Shape& weight, std::size_t stride, std::size_t pad) {
  const std::size_t kh = weight[2], kw = weight[3];
  if (stride == 0) throw ShapeError("conv_transpose2d stride must be >= 1");
  const std::size_t full_h = (x[2] - 1) * stride + kh;
  const std::size_t full_w = (x[3] - 1) * stride + kw;
  if (full_h <= 2 * pad || full_w <= 2 * pad) throw ShapeError("conv_transpose2d: degenerate output extent");
  return {Window{kh, kw, stride, pad}, full_h - 2 * pad, full_w - 2 * pad};
}

}  // namespace

template <typename T>
TensorT<T> conv_transpose2d_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>* bias,
                                    std::size_t stride, std::size_t pad) {
  check_conv_shapes(x.shape(), weight.shape(), "conv_transpose2d");
  if (weight.shape()[0] != x.shape()[1]) {
    throw ShapeError("conv_transpose2d channel mismatch: input " + to_string(x.shape()) + ", weight " +
                     to_string(weight.shape()));
  }
  const std::size_t n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t co = weight.shape()[1];
  const auto geo = transposed_geometry(x.shape(), weight.shape(), stride, pad);
  const std::size_t p = h * w, cols = n * p;
  const std::size_t depth = co * geo.win.kh * geo.win.kw;

  std::vector<T> xs;
  const T* xp = x.data().data();
  if (n > 1) {
    xs = gather_channels(xp, n, ci, p);
    xp = xs.data();
  }
  std::vector<T> col(depth * cols);
  gemm(Trans::yes, Trans::no, depth, cols, ci, weight.data().data(), depth, xp, cols, col.data(), cols, false);
  TensorT<T> out(Shape{n, co, geo.out_h, geo.out_w});
  for (std::size_t i = 0; i < n; ++i)
    col2im(col.data() + i * p, cols, co, geo.out_h, geo.out_w, geo.win,
           out.data().data() + i * co * geo.out_h * geo.out_w);
  if (bias) {
    const std::size_t plane = geo.out_h * geo.out_w;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < co; ++ch) {
        T* dst = out.data().data() + (i * co + ch) * plane;
        for (std::size_t q = 0; q < plane; ++q) dst[q] += (*bias)[ch];
      }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const TensorT<T>& x, const TensorT<T>& weight,
                                       const TensorT<T>& grad_out, std::size_t stride, std::size_t pad,
                                       GradRequest want) {
  const std::size_t n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t co = weight.shape()[1];
  const auto geo = transposed_geometry(x.shape(), weight.shape(), stride, pad);
  const std::size_t p = h * w, cols = n * p;
  const std::size_t depth = co * geo.win.kh * geo.win.kw;

  ConvGrads<T> grads;
  if (want.bias) grads.bias = channel_sums(grad_out);
  if (!want.input && !want.weight) return grads;
  std::vector<T> gcol = batch_im2col(grad_out, geo.win);
  if (want.input) {
    TensorT<T> gx(x.shape());
    if (n == 1) {
      gemm(Trans::no, Trans::no, ci, cols, depth, weight.data().data(), depth, gcol.data(), cols, gx.data().data(),
           cols, false);
    } else {
      std::vector<T> tmp(ci * cols);
      gemm(Trans::no, Trans::no, ci, cols, depth, weight.data().data(), depth, gcol.data(), cols, tmp.data(), cols,
           false);
      scatter_channels(tmp.data(), n, ci, p, gx.data().data());
    }
    grads.input = std::move(gx);
  }
  if (want.weight) {
    std::vector<T> xs;
    const T* xp = x.data().data();
    if (n > 1) {
      xs = gather_channels(xp, n, ci, p);
      xp = xs.data();
    }
    TensorT<T> gw(weight.shape());
    gemm(Trans::no, Trans::yes, ci, depth, cols, xp, cols, gcol.data(), cols, gw.data().data(), depth, false);
    grads.weight = std::move(gw);
  }
  return grads;
}

#define SAEK_INSTANTIATE(T)                                                                                   \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*, \
                        std::size_t, T*, std::size_t, bool);                                                  \
  template void im2col<T>(const T*, std::size_t, std::size_t, std::size_t, const Window&, T*, std::size_t);   \
  template void col2im<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t, const Window&, T*);   \
  template TensorT<T> conv2d_forward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*, std::size_t,     \
                                     std::size_t);                                                            \
  template ConvGrads<T> conv2d_backward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, std::size_t, \
                                        std::size_t, GradRequest);                                            \
  template TensorT<T> conv_transpose2d_forward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*,        \
                                               std::size_t, std::size_t);                                     \
  template ConvGrads<T> conv_transpose2d_backward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                                  std::size_t, std::size_t, GradRequest);

SAEK_INSTANTIATE(float)
SAEK_INSTANTIATE(double)

#undef SAEK_INSTANTIATE

}  // namespace saek::kernels
