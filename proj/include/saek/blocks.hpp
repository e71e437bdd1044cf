#pragma once

#include "saek/graph.hpp"

namespace saek {

/// Stem: conv 7x7 stride 2 pad 3 -> ReLU -> BN -> maxpool 3x3 stride 2
/// pad 1, in that order. Reduces spatial extent by 4.
struct NCABSpec {
  std::size_t in_ch = 3;
  std::size_t out_ch = 64;
};

/// Four parallel branches of out_ch / 4 channels each plus a projected skip.
struct SAEBSpec {
  std::size_t in_ch = 64;
  std::size_t out_ch = 256;
  std::size_t stride = 1;

  std::size_t branch_ch() const { return out_ch / 4; }
  void validate() const;
};

/// Decoder block: transposed-conv x2 upsampling to out_ch channels,
/// concatenation with the encoder skip, then the residual-inception core.
struct SFDSpec {
  std::size_t in_ch = 1024;
  std::size_t skip_ch = 512;
  std::size_t out_ch = 512;

  void validate() const;
};

template <typename T>
Var<T> ncab_forward(Graph<T>& g, const Var<T>& x, const NCABSpec& spec);

/// O1 = conv1x1(X)
/// O2 = conv3x3(BN(ReLU(conv1x1(X))))
/// O3 = conv5x5(BN(ReLU(conv1x1(X))))
/// O4 = conv1x1(maxpool3x3(X))
/// out = ReLU(BN(O1 ++ O2 ++ O3 ++ O4) + BN(conv1x1(X)))
/// The block stride is applied by every branch's spatial op and the skip.
template <typename T>
Var<T> saeb_forward(Graph<T>& g, const Var<T>& x, const SAEBSpec& spec);

template <typename T>
Var<T> sfd_forward(Graph<T>& g, const Var<T>& x, const Var<T>& skip, const SFDSpec& spec);

}  // namespace saek
