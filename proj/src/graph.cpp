#include "saek/graph.hpp"

namespace saek {

const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::weight: return "weight";
    case ParamKind::bias: return "bias";
    case ParamKind::bn_gamma: return "gamma";
    case ParamKind::bn_beta: return "beta";
    case ParamKind::bn_running_mean: return "running_mean";
    case ParamKind::bn_running_var: return "running_var";
  }
  return "?";
}

bool is_trainable(ParamKind kind) {
  return kind != ParamKind::bn_running_mean && kind != ParamKind::bn_running_var;
}

// ---- ParamStore --------------------------------------------------------------

template <typename T>
TensorT<T>& ParamStore<T>::declare(const std::string& name, Shape shape, ParamKind kind, std::size_t fan_in) {
  if (contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{name, TensorT<T>(std::move(shape)), kind, fan_in});
  return entries_.back().value;
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (is_trainable(e.kind)) n += e.value.size();
  return n;
}

// ---- Graph -------------------------------------------------------------------

template <typename T>
Graph<T>::Graph(Tape<T>& tape, ParamStore<T>& params, nn::Mode mode, Phase phase)
    : tape_(tape), params_(params), mode_(mode), phase_(phase) {
  if (phase_ == Phase::declare) tape_.set_shape_only(true);
}

template <typename T>
typename Graph<T>::Scope Graph<T>::scope(const std::string& name) {
  prefix_.push_back(name);
  return Scope(*this);
}

template <typename T>
std::string Graph<T>::qualified(const std::string& name) const {
  std::string out;
  for (const auto& p : prefix_) {
    out += p;
    out += '.';
  }
  if (name.empty() && !out.empty()) out.pop_back();
  return out + name;
}

template <typename T>
Var<T> Graph<T>::param(const std::string& name, const Shape& shape, ParamKind kind, std::size_t fan_in) {
  if (auto it = used_.find(name); it != used_.end()) return it->second;
  Var<T> v;
  if (auto it = bound_.find(name); it != bound_.end()) {
    v = it->second;
  } else if (phase_ == Phase::declare) {
    v = tape_.leaf_ref(params_.declare(name, shape, kind, fan_in), false);
  } else {
    const auto& e = params_.entry(name);
    if (e.value.shape() != shape) {
      throw ValidationError("parameter '" + name + "' has shape " + to_string(e.value.shape()) + ", layer expects " +
                            to_string(shape));
    }
    v = tape_.leaf_ref(e.value, tape_.grad_enabled() && is_trainable(kind));
  }
  if (v.shape() != shape) throw ValidationError("bound parameter '" + name + "' has the wrong shape");
  used_.emplace(name, v);
  return v;
}

template <typename T>
void Graph<T>::record(const std::string& name, const std::string& kind, const Shape& in, const Shape& out,
                      std::size_t params) {
  records_.push_back(LayerRecord{name, kind, in, out, params});
}

template <typename T>
Var<T> Graph<T>::conv(const std::string& name, const Var<T>& x, const Conv2dSpec& spec) {
  const std::string q = qualified(name);
  const Var<T> w = param(q + ".weight", Shape{spec.out_ch, spec.in_ch, spec.kh, spec.kw}, ParamKind::weight,
                         spec.in_ch * spec.kh * spec.kw);
  std::optional<Var<T>> b;
  if (spec.has_bias) b = param(q + ".bias", Shape{spec.out_ch}, ParamKind::bias, 0);
  Var<T> y = nn::conv2d(x, w, b ? &*b : nullptr, nn::ConvOptions{spec.stride, spec.pad});
  record(q, "conv" + std::to_string(spec.kh) + "x" + std::to_string(spec.kw), x.shape(), y.shape(),
         w.value().size() + (b ? b->value().size() : 0));
  return y;
}

template <typename T>
Var<T> Graph<T>::conv_transpose(const std::string& name, const Var<T>& x, const TransposedConv2dSpec& spec) {
  const std::string q = qualified(name);
  const Var<T> w = param(q + ".weight", Shape{spec.in_ch, spec.out_ch, spec.kh, spec.kw}, ParamKind::weight,
                         spec.in_ch * spec.kh * spec.kw);
  std::optional<Var<T>> b;
  if (spec.has_bias) b = param(q + ".bias", Shape{spec.out_ch}, ParamKind::bias, 0);
  Var<T> y = nn::conv_transpose2d(x, w, b ? &*b : nullptr, nn::ConvOptions{spec.stride, 0});
  record(q, "conv_transpose" + std::to_string(spec.kh) + "x" + std::to_string(spec.kw), x.shape(), y.shape(),
         w.value().size() + (b ? b->value().size() : 0));
  return y;
}

template <typename T>
Var<T> Graph<T>::batchnorm(const std::string& name, const Var<T>& x, const BatchNorm2dSpec& spec) {
  const std::string q = qualified(name);
  const Shape ch{spec.num_ch};
  const Var<T> gamma = param(q + ".gamma", ch, ParamKind::bn_gamma, 0);
  const Var<T> beta = param(q + ".beta", ch, ParamKind::bn_beta, 0);
  TensorT<T>* running_mean;
  TensorT<T>* running_var;
  if (phase_ == Phase::declare) {
    running_mean = &params_.declare(q + ".running_mean", ch, ParamKind::bn_running_mean);
    running_var = &params_.declare(q + ".running_var", ch, ParamKind::bn_running_var);
  } else {
    running_mean = &params_.get(q + ".running_mean");
    running_var = &params_.get(q + ".running_var");
  }
  nn::BatchNormOptions opts{spec.eps, spec.momentum, mode_, update_running_stats_};
  Var<T> y = nn::batchnorm2d(x, gamma, beta, *running_mean, *running_var, opts);
  record(q, "batchnorm", x.shape(), y.shape(), 2 * spec.num_ch);
  return y;
}

template <typename T>
Var<T> Graph<T>::linear(const std::string& name, const Var<T>& x, const LinearSpec& spec) {
  const std::string q = qualified(name);
  const Var<T> w = param(q + ".weight", Shape{spec.out_features, spec.in_features}, ParamKind::weight,
                         spec.in_features);
  const Var<T> b = param(q + ".bias", Shape{spec.out_features}, ParamKind::bias, 0);
  Var<T> y = nn::linear(x, w, &b);
  record(q, "linear", x.shape(), y.shape(), w.value().size() + b.value().size());
  return y;
}

template <typename T>
Var<T> Graph<T>::relu(const Var<T>& x) {
  return nn::relu(x);
}

template <typename T>
Var<T> Graph<T>::maxpool(const Var<T>& x, const nn::Window& window) {
  Var<T> y = nn::maxpool2d(x, window);
  record(qualified("maxpool"), "maxpool" + std::to_string(window.kh) + "x" + std::to_string(window.kw), x.shape(),
         y.shape(), 0);
  return y;
}

template <typename T>
Var<T> Graph<T>::adaptive_avgpool(const Var<T>& x) {
  Var<T> y = nn::adaptive_avgpool_1x1(x);
  record(qualified("avgpool"), "adaptive_avgpool", x.shape(), y.shape(), 0);
  return y;
}

template <typename T>
Var<T> Graph<T>::flatten(const Var<T>& x) {
  return nn::flatten(x);
}

template <typename T>
Var<T> Graph<T>::concat(const std::vector<Var<T>>& parts) {
  return saek::concat<T>(std::span<const Var<T>>(parts), 1);
}

template <typename T>
Var<T> Graph<T>::add(const Var<T>& a, const Var<T>& b) {
  return saek::add(a, b);
}

template <typename T>
Var<T> Graph<T>::tap(const std::string& name, const Var<T>& v) {
  if (!probe_ || phase_ == Phase::declare) return v;
  if (auto replacement = probe_(qualified(name), v.value())) {
    if (replacement->shape() != v.shape()) throw ShapeError("probe replacement for '" + name + "' changed the shape");
    return tape_.leaf(std::move(*replacement));
  }
  return v;
}

template <typename T>
void Graph<T>::record_block(const std::string& kind, const Shape& in, const Shape& out) {
  record(qualified(""), kind, in, out, 0);
}

template <typename T>
std::map<std::string, TensorT<T>> Graph<T>::param_grads(const Gradients<T>& grads) const {
  std::map<std::string, TensorT<T>> out;
  for (const auto& [name, v] : used_) {
    if (v.requires_grad()) out.emplace(name, grads.of(v));
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace saek
