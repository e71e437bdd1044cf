#include "saek/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saek/rng.hpp"

namespace saek {

// ---- Tape ------------------------------------------------------------------

template <typename T>
const TensorT<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed ? *n.borrowed : n.owned;
}

template <typename T>
Var<T> Tape<T>::leaf(TensorT<T> value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::leaf_ref(const TensorT<T>& value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.borrowed = &value;
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
void Tape<T>::check_input(const Var<T>& v) const {
  if (v.tape() != this) throw ValidationError("variable from a different tape used as op input");
  if (v.id() >= nodes_.size()) throw ValidationError("variable id out of range");
}

template <typename T>
Var<T> Tape<T>::record(std::string op, std::span<const Var<T>> inputs, TensorT<T> result, BackwardFn<T> backward) {
  Node n;
  n.op = std::move(op);
  n.owned = std::move(result);
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    check_input(v);
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.requires_grad = n.requires_grad && grad_enabled_ && !shape_only_;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Gradients<T> Tape<T>::backward(const Var<T>& loss, bool retain_intermediate) const {
  check_input(loss);
  if (loss.value().size() != 1) {
    throw ValidationError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  Gradients<T> out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  if (!nodes_[loss.id()].requires_grad) return out;
  out.grads_[loss.id()] = TensorT<T>(loss.shape(), T{1});

  std::vector<const TensorT<T>*> in_values;
  std::vector<TensorT<T>*> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    auto& g = out.grads_[id];
    if (!g || node.is_leaf) continue;
    if (node.backward) {
      in_values.clear();
      in_grads.clear();
      for (auto src : node.inputs) {
        in_values.push_back(&value(src));
        if (nodes_[src].requires_grad) {
          auto& slot = out.grads_[src];
          if (!slot) slot = TensorT<T>(value(src).shape());
          in_grads.push_back(&*slot);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      node.backward(BackwardContext<T>{*g, value(id), in_values, in_grads});
      for (auto* ig : in_grads) {
        if (ig && !ig->all_finite()) throw NumericError("non-finite gradient produced by op '" + node.op + "'");
      }
    }
    if (!retain_intermediate) g.reset();
  }
  return out;
}

template <typename T>
TensorT<T> Gradients<T>::of(const Var<T>& v) const {
  if (v.tape() != tape_) throw ValidationError("gradient requested for a variable of another tape");
  if (v.id() < grads_.size() && grads_[v.id()]) return *grads_[v.id()];
  return TensorT<T>(v.shape());
}

template <typename T>
bool Gradients<T>::reached(const Var<T>& v) const {
  return v.tape() == tape_ && v.id() < grads_.size() && grads_[v.id()].has_value();
}

// ---- differentiable tensor ops ----------------------------------------------

namespace {

// Sums a full-shape gradient down to the broadcast operand's shape.
template <typename T>
void accumulate_broadcast(const TensorT<T>& g, Broadcast kind, const Shape& a_shape, TensorT<T>& dst,
                          const std::function<T(std::size_t)>& factor) {
  switch (kind) {
    case Broadcast::same:
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor(i);
      break;
    case Broadcast::scalar: {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * factor(i);
      dst[0] += acc;
      break;
    }
    case Broadcast::channel: {
      const std::size_t channels = a_shape[1];
      const std::size_t inner = g.size() / (a_shape[0] * channels);
      for (std::size_t i = 0; i < g.size(); ++i) dst[(i / inner) % channels] += g[i] * factor(i);
      break;
    }
  }
}

template <typename T>
T rhs_at(const TensorT<T>& b, Broadcast kind, const Shape& a_shape, std::size_t i) {
  switch (kind) {
    case Broadcast::same: return b[i];
    case Broadcast::scalar: return b[0];
    case Broadcast::channel: {
      const std::size_t channels = a_shape[1];
      const std::size_t inner = numel(a_shape) / (a_shape[0] * channels);
      return b[(i / inner) % channels];
    }
  }
  return T{0};
}

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, Binary mode, const char* name) {
  Tape<T>& tape = *a.tape();
  const Broadcast kind = broadcast_kind(a.shape(), b.shape());
  TensorT<T> out = tape.shape_only() ? TensorT<T>(a.shape()) : elementwise(a.value(), b.value(), mode);
  if (mode == Binary::max && tape.track_decisions() && !tape.shape_only()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < out.size(); ++i)
      h = h * 31 + (a.value()[i] >= rhs_at(b.value(), kind, a.shape(), i) ? 1 : 0);
    tape.note_decision(h);
  }
  const Shape a_shape = a.shape();
  return tape.record(name, {a, b}, std::move(out), [mode, kind, a_shape](const BackwardContext<T>& ctx) {
    const TensorT<T>& g = ctx.grad_out;
    const TensorT<T>& av = *ctx.inputs[0];
    const TensorT<T>& bv = *ctx.inputs[1];
    auto rb = [&](std::size_t i) { return rhs_at(bv, kind, a_shape, i); };
    if (TensorT<T>* ga = ctx.grads[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        T d{1};
        switch (mode) {
          case Binary::add:
          case Binary::sub: d = T{1}; break;
          case Binary::mul: d = rb(i); break;
          case Binary::div: d = T{1} / rb(i); break;
          case Binary::max: d = av[i] >= rb(i) ? T{1} : T{0}; break;
        }
        (*ga)[i] += g[i] * d;
      }
    }
    if (TensorT<T>* gb = ctx.grads[1]) {
      accumulate_broadcast<T>(g, kind, a_shape, *gb, [&](std::size_t i) -> T {
        switch (mode) {
          case Binary::add: return T{1};
          case Binary::sub: return T{-1};
          case Binary::mul: return av[i];
          case Binary::div: {
            const T r = rb(i);
            return -av[i] / (r * r);
          }
          case Binary::max: return av[i] >= rb(i) ? T{0} : T{1};
        }
        return T{0};
      });
    }
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, Binary::add, "add");
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, Binary::sub, "sub");
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, Binary::mul, "mul");
}
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, Binary::div, "div");
}
template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, Binary::max, "max");
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = *a.tape();
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul dimension mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  TensorT<T> out = tape.shape_only() ? TensorT<T>(Shape{a.shape()[0], b.shape()[1]}) : matmul(a.value(), b.value());
  return tape.record("matmul", {a, b}, std::move(out), [](const BackwardContext<T>& ctx) {
    if (ctx.grads[0]) {
      auto d = matmul(ctx.grad_out, transpose2d(*ctx.inputs[1]));
      for (std::size_t i = 0; i < d.size(); ++i) (*ctx.grads[0])[i] += d[i];
    }
    if (ctx.grads[1]) {
      auto d = matmul(transpose2d(*ctx.inputs[0]), ctx.grad_out);
      for (std::size_t i = 0; i < d.size(); ++i) (*ctx.grads[1])[i] += d[i];
    }
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of an empty list");
  Tape<T>& tape = *parts[0].tape();
  std::vector<TensorT<T>> values;
  values.reserve(parts.size());
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.shape().size() <= axis) throw ShapeError("concat axis out of range for " + to_string(p.shape()));
    extents.push_back(p.shape()[axis]);
  }
  TensorT<T> out;
  if (tape.shape_only()) {
    // Shapes are validated by concatenating the (zero) values as well.
    for (const auto& p : parts) values.push_back(TensorT<T>(p.shape()));
    out = concat<T>(values, axis);
  } else {
    for (const auto& p : parts) values.push_back(p.value());
    out = concat<T>(values, axis);
  }
  return tape.record("concat", parts, std::move(out), [axis, extents](const BackwardContext<T>& ctx) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < extents.size(); ++i) {
      if (ctx.grads[i]) {
        auto piece = slice(ctx.grad_out, axis, offset, extents[i]);
        for (std::size_t k = 0; k < piece.size(); ++k) (*ctx.grads[i])[k] += piece[k];
      }
      offset += extents[i];
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t offset, std::size_t extent) {
  Tape<T>& tape = *a.tape();
  TensorT<T> out = slice(a.value(), axis, offset, extent);
  return tape.record("slice", {a}, std::move(out), [axis, offset, extent](const BackwardContext<T>& ctx) {
    // Scatter back by slicing a zero-padded concat is wasteful; walk strides.
    const Shape& s = ctx.inputs[0]->shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t e = 0; e < extent; ++e)
        for (std::size_t in = 0; in < inner; ++in)
          (*ctx.grads[0])[(o * s[axis] + offset + e) * inner + in] += ctx.grad_out[(o * extent + e) * inner + in];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tape<T>& tape = *a.tape();
  TensorT<T> out = a.value().reshape(std::move(shape));
  return tape.record("reshape", {a}, std::move(out), [](const BackwardContext<T>& ctx) {
    for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) (*ctx.grads[0])[i] += ctx.grad_out[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tape<T>& tape = *a.tape();
  TensorT<T> out = reduce(a.value(), std::nullopt, Reduction::sum).values;
  return tape.record("sum", {a}, std::move(out), [](const BackwardContext<T>& ctx) {
    const T g = ctx.grad_out[0];
    for (auto& v : ctx.grads[0]->data()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  Tape<T>& tape = *a.tape();
  TensorT<T> out = reduce(a.value(), std::nullopt, Reduction::mean).values;
  return tape.record("mean", {a}, std::move(out), [](const BackwardContext<T>& ctx) {
    const T g = ctx.grad_out[0] / static_cast<T>(ctx.grads[0]->size());
    for (auto& v : ctx.grads[0]->data()) v += g;
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tape<T>& tape = *a.tape();
  TensorT<T> out = scale(a.value(), factor);
  return tape.record("scale", {a}, std::move(out), [factor](const BackwardContext<T>& ctx) {
    for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) (*ctx.grads[0])[i] += ctx.grad_out[i] * factor;
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& a, const TensorT<T>& weights) {
  Tape<T>& tape = *a.tape();
  if (weights.shape() != a.shape()) {
    throw ShapeError("weighted_sum shape mismatch: " + to_string(a.shape()) + " vs " + to_string(weights.shape()));
  }
  T acc{0};
  for (std::size_t i = 0; i < weights.size(); ++i) acc += a.value()[i] * weights[i];
  return tape.record("weighted_sum", {a}, TensorT<T>::scalar(acc), [weights](const BackwardContext<T>& ctx) {
    const T g = ctx.grad_out[0];
    for (std::size_t i = 0; i < weights.size(); ++i) (*ctx.grads[0])[i] += g * weights[i];
  });
}

// ---- grad check -------------------------------------------------------------

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::size_t GradCheckReport::checked() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.checked;
  return n;
}

std::size_t GradCheckReport::skipped() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.skipped;
  return n;
}

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const Program& f, const std::vector<NamedTensor>& inputs) {
  Tape<double> tape;
  tape.set_grad_enabled(false);
  tape.set_track_decisions(true);
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf_ref(in.value));
  Var<double> out = f(tape, leaves);
  if (out.value().size() != 1) throw ValidationError("grad_check program must be scalar-valued");
  return {out.value()[0], tape.decision_signature()};
}

std::vector<std::size_t> pick_coordinates(std::size_t size, std::size_t max_coords, SplitMix64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_coords == 0 || max_coords >= size) return idx;
  for (std::size_t i = 0; i < max_coords; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const Program& f, const std::vector<NamedTensor>& inputs, const GradCheckOptions& options) {
  Tape<double> tape;
  tape.set_track_decisions(true);
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf_ref(in.value, true));
  Var<double> loss = f(tape, leaves);
  const std::uint64_t base_signature = tape.decision_signature();
  const Gradients<double> grads = tape.backward(loss);

  std::vector<NamedTensor> probe = inputs;
  SplitMix64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    GradCheckEntry entry;
    entry.name = inputs[i].name;
    const TensorD analytic = grads.of(leaves[i]);
    for (std::size_t c : pick_coordinates(inputs[i].value.size(), options.max_coords, rng)) {
      const double x0 = inputs[i].value[c];
      probe[i].value[c] = x0 + options.step;
      const Evaluation plus = evaluate(f, probe);
      probe[i].value[c] = x0 - options.step;
      const Evaluation minus = evaluate(f, probe);
      probe[i].value[c] = x0;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++entry.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[c])) {
        ++entry.non_finite;
        entry.passed = false;
        continue;
      }
      const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[c] - numeric) / denom;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      if (rel > options.tolerance) entry.passed = false;
      ++entry.checked;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

#define SAEK_INSTANTIATE(T)                                                             \
  template class Tape<T>;                                                               \
  template class Gradients<T>;                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                    \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                    \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                    \
  template Var<T> div(const Var<T>&, const Var<T>&);                                    \
  template Var<T> maximum(const Var<T>&, const Var<T>&);                                \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                 \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                         \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);          \
  template Var<T> reshape(const Var<T>&, Shape);                                        \
  template Var<T> sum(const Var<T>&);                                                   \
  template Var<T> mean(const Var<T>&);                                                  \
  template Var<T> scale(const Var<T>&, T);                                              \
  template Var<T> weighted_sum(const Var<T>&, const TensorT<T>&);

SAEK_INSTANTIATE(float)
SAEK_INSTANTIATE(double)

#undef SAEK_INSTANTIATE

}  // namespace saek
