#include "saek/losses.hpp"

#include <cmath>

namespace saek {

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy expects N x C logits, got " + to_string(s));
  const std::size_t n = s[0];
  const std::size_t c = s[1];
  if (labels.size() != n) {
    throw ShapeError("cross_entropy got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " is outside [0, " + std::to_string(c) + ")");
    }
  }
  Tape<T>& tape = *logits.tape();
  if (tape.shape_only()) return tape.record("cross_entropy", {logits}, TensorT<T>(Shape{1}), nullptr);

  const auto x = logits.value().data();
  // Row softmax kept for the backward pass.
  std::vector<double> prob(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[labels[i]];
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] = std::exp(row[j] - lse);
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  return tape.record("cross_entropy", {logits}, std::move(out),
                     [prob = std::move(prob), labels, n, c](const BackwardContext<T>& ctx) {
                       const double g = static_cast<double>(ctx.grad_out[0]) / static_cast<double>(n);
                       auto dx = ctx.grads[0]->data();
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                           const double d = prob[i * c + j] - (j == labels[i] ? 1.0 : 0.0);
                           dx[i * c + j] += static_cast<T>(g * d);
                         }
                       }
                     });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const TensorT<T>& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits shapes differ: " + to_string(logits.shape()) + " vs " +
                     to_string(targets.shape()));
  }
  const auto y = targets.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != T{0} && y[i] != T{1}) {
      throw ValidationError("bce_with_logits target at index " + std::to_string(i) + " is not 0 or 1");
    }
  }
  Tape<T>& tape = *logits.tape();
  if (tape.shape_only()) return tape.record("bce_with_logits", {logits}, TensorT<T>(Shape{1}), nullptr);

  const auto x = logits.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    total += std::max(v, 0.0) - v * y[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const std::size_t count = x.size();
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(count)));
  return tape.record("bce_with_logits", {logits}, std::move(out),
                     [targets, count](const BackwardContext<T>& ctx) {
                       const double g = static_cast<double>(ctx.grad_out[0]) / static_cast<double>(count);
                       const auto xv = ctx.inputs[0]->data();
                       const auto yv = targets.data();
                       auto dx = ctx.grads[0]->data();
                       for (std::size_t i = 0; i < count; ++i) {
                         const double v = xv[i];
                         const double sig = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                         dx[i] += static_cast<T>(g * (sig - yv[i]));
                       }
                     });
}

template Var<float> cross_entropy(const Var<float>&, const std::vector<std::size_t>&);
template Var<double> cross_entropy(const Var<double>&, const std::vector<std::size_t>&);
template Var<float> bce_with_logits(const Var<float>&, const TensorT<float>&);
template Var<double> bce_with_logits(const Var<double>&, const TensorT<double>&);

}  // namespace saek
