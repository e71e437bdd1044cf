#include "saek/blocks.hpp"

namespace saek {

void SAEBSpec::validate() const {
  if (out_ch == 0 || out_ch % 4 != 0) {
    throw ValidationError("SAEB out_ch must be a positive multiple of 4, got " + std::to_string(out_ch));
  }
  if (in_ch == 0) throw ValidationError("SAEB in_ch must be positive");
  if (stride != 1 && stride != 2) throw ValidationError("SAEB stride must be 1 or 2");
}

void SFDSpec::validate() const {
  if (out_ch == 0 || out_ch % 4 != 0) {
    throw ValidationError("SFD out_ch must be a positive multiple of 4, got " + std::to_string(out_ch));
  }
  if (in_ch == 0 || skip_ch == 0) throw ValidationError("SFD channel counts must be positive");
}

namespace {

// Shared by SAEB and the SFD refinement stage.
template <typename T>
Var<T> residual_inception(Graph<T>& g, const Var<T>& x, std::size_t in_ch, std::size_t out_ch, std::size_t stride) {
  const std::size_t branch = out_ch / 4;
  auto conv = [&](const char* name, const Var<T>& in, std::size_t cin, std::size_t k, std::size_t s, bool bias) {
    return g.conv(name, in, Conv2dSpec{cin, branch, k, k, s, k / 2, bias});
  };

  const Var<T> o1 = conv("b1.conv", x, in_ch, 1, stride, false);

  Var<T> t2 = g.relu(conv("b2.reduce", x, in_ch, 1, 1, true));
  t2 = g.batchnorm("b2.bn", t2, BatchNorm2dSpec{branch});
  const Var<T> o2 = conv("b2.conv", t2, branch, 3, stride, false);

  Var<T> t3 = g.relu(conv("b3.reduce", x, in_ch, 1, 1, true));
  t3 = g.batchnorm("b3.bn", t3, BatchNorm2dSpec{branch});
  const Var<T> o3 = conv("b3.conv", t3, branch, 5, stride, false);

  Var<T> t4;
  {
    auto s = g.scope("b4");
    t4 = g.maxpool(x, nn::Window{3, 3, stride, 1});
  }
  const Var<T> o4 = conv("b4.conv", t4, in_ch, 1, 1, false);

  const Var<T> merged = g.batchnorm("concat_bn", g.concat({o1, o2, o3, o4}), BatchNorm2dSpec{out_ch});
  const Var<T> skip =
      g.batchnorm("skip.bn", g.conv("skip.conv", x, Conv2dSpec{in_ch, out_ch, 1, 1, stride, 0, false}),
                  BatchNorm2dSpec{out_ch});
  if (merged.shape() != skip.shape()) {
    throw ShapeError("branch output " + to_string(merged.shape()) + " does not match skip " + to_string(skip.shape()));
  }
  return g.relu(g.add(merged, skip));
}

}  // namespace

template <typename T>
Var<T> ncab_forward(Graph<T>& g, const Var<T>& x, const NCABSpec& spec) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] < 8 || s[3] < 8) {
    throw ValidationError("NCAB needs an N x C x H x W input with H, W >= 8, got " + to_string(s));
  }
  if (s[1] != spec.in_ch) {
    throw ShapeError("NCAB expects " + std::to_string(spec.in_ch) + " input channels, got " + to_string(s));
  }
  Var<T> y = g.conv("conv", x, Conv2dSpec{spec.in_ch, spec.out_ch, 7, 7, 2, 3, true});
  y = g.relu(y);
  y = g.batchnorm("bn", y, BatchNorm2dSpec{spec.out_ch});
  y = g.maxpool(y, nn::Window{3, 3, 2, 1});
  g.record_block("NCAB", s, y.shape());
  return y;
}

template <typename T>
Var<T> saeb_forward(Graph<T>& g, const Var<T>& x, const SAEBSpec& spec) {
  spec.validate();
  if (x.shape().size() != 4 || x.shape()[1] != spec.in_ch) {
    throw ShapeError("SAEB expects " + std::to_string(spec.in_ch) + " input channels, got " + to_string(x.shape()));
  }
  Var<T> y = residual_inception(g, x, spec.in_ch, spec.out_ch, spec.stride);
  g.record_block("SAEB", x.shape(), y.shape());
  return y;
}

template <typename T>
Var<T> sfd_forward(Graph<T>& g, const Var<T>& x, const Var<T>& skip, const SFDSpec& spec) {
  spec.validate();
  if (x.shape().size() != 4 || x.shape()[1] != spec.in_ch) {
    throw ShapeError("SFD expects " + std::to_string(spec.in_ch) + " input channels, got " + to_string(x.shape()));
  }
  if (skip.shape().size() != 4 || skip.shape()[1] != spec.skip_ch) {
    throw ShapeError("SFD expects a skip with " + std::to_string(spec.skip_ch) + " channels, got " +
                     to_string(skip.shape()));
  }
  const Var<T> up = g.conv_transpose("up", x, TransposedConv2dSpec{spec.in_ch, spec.out_ch, 2, 2, 2, true});
  if (up.shape()[0] != skip.shape()[0] || up.shape()[2] != skip.shape()[2] || up.shape()[3] != skip.shape()[3]) {
    throw ShapeError("SFD upsampled feature " + to_string(up.shape()) + " does not match skip " +
                     to_string(skip.shape()));
  }
  const Var<T> joined = g.concat({up, skip});
  Var<T> y = residual_inception(g, joined, spec.out_ch + spec.skip_ch, spec.out_ch, 1);
  g.record_block("SFD", x.shape(), y.shape());
  return y;
}

template Var<float> ncab_forward(Graph<float>&, const Var<float>&, const NCABSpec&);
template Var<double> ncab_forward(Graph<double>&, const Var<double>&, const NCABSpec&);
template Var<float> saeb_forward(Graph<float>&, const Var<float>&, const SAEBSpec&);
template Var<double> saeb_forward(Graph<double>&, const Var<double>&, const SAEBSpec&);
template Var<float> sfd_forward(Graph<float>&, const Var<float>&, const Var<float>&, const SFDSpec&);
template Var<double> sfd_forward(Graph<double>&, const Var<double>&, const Var<double>&, const SFDSpec&);

}  // namespace saek
