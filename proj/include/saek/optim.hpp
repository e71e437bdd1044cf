#pragma once

#include <map>
#include <string>

#include "saek/graph.hpp"

namespace saek {

/// Adam with bias correction. Moments are created lazily, zero-filled, the
/// first time a parameter receives a gradient.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One update of every parameter named in `grads`; step increments once.
/// Throws ValidationError for an unknown name and ShapeError for a shape
/// mismatch.
void adam_step(ParamStore<float>& params, const std::map<std::string, Tensor>& grads, AdamState& state);

/// Same update rule on a bare double-precision vector, for reference checks.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, std::vector<double>& m,
               std::vector<double>& v, std::uint64_t& step, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

}  // namespace saek
