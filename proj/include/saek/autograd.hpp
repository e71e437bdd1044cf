#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saek/tensor.hpp"

namespace saek {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the
/// tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const TensorT<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward rule sees. `grads[i]` is null when input i needs no
/// gradient; otherwise the rule adds its contribution into it.
template <typename T>
struct BackwardContext {
  const TensorT<T>& grad_out;
  const TensorT<T>& output;
  std::span<const TensorT<T>* const> inputs;
  std::span<TensorT<T>* const> grads;
};

template <typename T>
using BackwardFn = std::function<void(const BackwardContext<T>&)>;

/// Result of Tape::backward. Leaves always keep their gradient; variables
/// that never reached the loss report zeros.
template <typename T>
class Gradients {
 public:
  TensorT<T> of(const Var<T>& v) const;
  bool reached(const Var<T>& v) const;

 private:
  friend class Tape<T>;
  const Tape<T>* tape_ = nullptr;
  std::vector<std::optional<TensorT<T>>> grads_;
};

/// Single flat reverse-mode tape. Nodes are appended in evaluation order, so
/// every node's inputs precede it and reverse id order is a valid reverse
/// topological order. Not thread-safe; independent tapes may run in parallel.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(TensorT<T> value, bool requires_grad = false);
  /// Leaf that borrows `value`; the referent must outlive the tape.
  Var<T> leaf_ref(const TensorT<T>& value, bool requires_grad = false);

  /// Appends an op result. The backward rule is dropped when gradients are
  /// disabled or no input requires one.
  Var<T> record(std::string op, std::span<const Var<T>> inputs, TensorT<T> result, BackwardFn<T> backward);
  Var<T> record(std::string op, std::initializer_list<Var<T>> inputs, TensorT<T> result, BackwardFn<T> backward) {
    return record(std::move(op), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(result),
                  std::move(backward));
  }

  /// Reverse sweep from a scalar loss. Throws ValidationError for a
  /// non-scalar loss and NumericError (naming the op) on a non-finite
  /// gradient.
  Gradients<T> backward(const Var<T>& loss, bool retain_intermediate = false) const;

  const TensorT<T>& value(std::size_t id) const;
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  /// In shape-only mode ops produce zero tensors of the right shape and skip
  /// the arithmetic. Used for parameter declaration and summaries.
  bool shape_only() const { return shape_only_; }
  void set_shape_only(bool on) { shape_only_ = on; }

  /// Discrete decisions taken during the forward pass (ReLU masks, pooling
  /// argmax) folded into one signature, so finite-difference checks can
  /// detect a step that crossed a kink.
  bool track_decisions() const { return track_decisions_; }
  void set_track_decisions(bool on) { track_decisions_ = on; }
  void note_decision(std::uint64_t h) { signature_ = (signature_ ^ h) * 0x100000001B3ULL; }
  std::uint64_t decision_signature() const { return signature_; }

 private:
  struct Node {
    std::string op;
    TensorT<T> owned;
    const TensorT<T>* borrowed = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn<T> backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  void check_input(const Var<T>& v) const;

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool shape_only_ = false;
  bool track_decisions_ = false;
  std::uint64_t signature_ = 0xCBF29CE484222325ULL;
};

template <typename T>
const TensorT<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// ---- differentiable tensor operations -------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t offset, std::size_t extent);
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
/// sum(a * weights) with constant weights; the usual scalarizer for checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& a, const TensorT<T>& weights);

// ---- finite-difference verification ---------------------------------------

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
  /// Coordinates sampled per input; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0x5EED;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +-step moved a ReLU or pooling decision.
  std::size_t skipped = 0;
  std::size_t non_finite = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool passed() const;
  double max_rel_error() const;
  std::size_t checked() const;
  std::size_t skipped() const;
};

struct NamedTensor {
  std::string name;
  TensorD value;
};

/// A scalar-valued program over leaf variables, one per named input.
using Program = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

/// Compares reverse-mode gradients with central differences
/// (f(x+h) - f(x-h)) / 2h using the relative error
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const Program& f, const std::vector<NamedTensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace saek
