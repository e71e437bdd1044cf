#pragma once

#include <vector>

#include "saek/autograd.hpp"

namespace saek {

/// Mean over rows of -log softmax(logits)[label], via log-sum-exp.
/// Throws ValidationError for an out-of-range label.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels);

/// Mean of max(x, 0) - x*y + log(1 + exp(-|x|)) over all elements.
/// Targets must be 0 or 1 and match the logits' shape.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const TensorT<T>& targets);

}  // namespace saek
