#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "saek/autograd.hpp"
#include "saek/nn.hpp"

namespace saek {

enum class ParamKind { weight, bias, bn_gamma, bn_beta, bn_running_mean, bn_running_var };

const char* to_string(ParamKind kind);
/// Running statistics are state, not trainable parameters.
bool is_trainable(ParamKind kind);

/// Named parameter tensors in declaration order. Names follow
/// "module.block.layer.tensor". Entry addresses are stable, so tapes may
/// borrow them.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    TensorT<T> value;
    ParamKind kind = ParamKind::weight;
    std::size_t fan_in = 0;
  };

  /// Adds a zero tensor. Throws ValidationError on a duplicate name.
  TensorT<T>& declare(const std::string& name, Shape shape, ParamKind kind, std::size_t fan_in = 0);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  TensorT<T>& get(const std::string& name) { return entry(name).value; }
  const TensorT<T>& get(const std::string& name) const { return entry(name).value; }

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total scalar count of trainable tensors.
  std::size_t trainable_count() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.declare(e.name, e.value.shape(), e.kind, e.fan_in) = e.value.template cast<U>();
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.kind != y.kind || !(x.value == y.value)) return false;
    }
    return true;
  }

 private:
  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Conv2dSpec {
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool has_bias = true;
};

struct TransposedConv2dSpec {
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t kh = 2;
  std::size_t kw = 2;
  std::size_t stride = 2;
  bool has_bias = true;
};

struct LinearSpec {
  std::size_t in_features = 1;
  std::size_t out_features = 1;
};

struct BatchNorm2dSpec {
  std::size_t num_ch = 1;
  double eps = 1e-5;
  double momentum = 0.1;
};

/// One row of a network summary.
struct LayerRecord {
  std::string name;
  std::string kind;
  Shape in;
  Shape out;
  std::size_t params = 0;
};

/// Forward-pass context: resolves layer parameters by scoped name, applies
/// the layer ops, and keeps a record of every layer it ran.
///
/// In the declare phase the tape runs shape-only and each layer registers its
/// parameters in the store instead of reading them.
template <typename T>
class Graph {
 public:
  enum class Phase { declare, run };

  /// Replacement hook for named taps: return a tensor to substitute the
  /// tapped value, or nullopt to leave it.
  using Probe = std::function<std::optional<TensorT<T>>(const std::string& tap, const TensorT<T>& value)>;

  Graph(Tape<T>& tape, ParamStore<T>& params, nn::Mode mode, Phase phase = Phase::run);

  Tape<T>& tape() { return tape_; }
  nn::Mode mode() const { return mode_; }
  Phase phase() const { return phase_; }

  /// Train mode only; grad checks turn this off so repeated evaluations see
  /// the same state.
  void set_update_running_stats(bool on) { update_running_stats_ = on; }

  Var<T> input(TensorT<T> x) { return tape_.leaf(std::move(x)); }

  Var<T> conv(const std::string& name, const Var<T>& x, const Conv2dSpec& spec);
  Var<T> conv_transpose(const std::string& name, const Var<T>& x, const TransposedConv2dSpec& spec);
  Var<T> batchnorm(const std::string& name, const Var<T>& x, const BatchNorm2dSpec& spec);
  Var<T> linear(const std::string& name, const Var<T>& x, const LinearSpec& spec);
  Var<T> relu(const Var<T>& x);
  Var<T> maxpool(const Var<T>& x, const nn::Window& window);
  Var<T> adaptive_avgpool(const Var<T>& x);
  Var<T> flatten(const Var<T>& x);
  Var<T> concat(const std::vector<Var<T>>& parts);
  Var<T> add(const Var<T>& a, const Var<T>& b);

  class Scope {
   public:
    explicit Scope(Graph& g) : g_(&g) {}
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() { g_->prefix_.pop_back(); }

   private:
    Graph* g_;
  };
  /// Pushes a name component; parameters declared inside are prefixed.
  [[nodiscard]] Scope scope(const std::string& name);
  std::string qualified(const std::string& name) const;

  void set_probe(Probe probe) { probe_ = std::move(probe); }
  /// Offers `v` to the probe under the qualified tap name.
  Var<T> tap(const std::string& name, const Var<T>& v);

  /// Adds a composite-block row (NCAB, SAEB, SFD) to the records.
  void record_block(const std::string& kind, const Shape& in, const Shape& out);
  const std::vector<LayerRecord>& records() const { return records_; }

  /// Routes parameter `name` (fully qualified) to an existing variable
  /// instead of the store. Used by finite-difference checks.
  void bind(const std::string& name, const Var<T>& v) { bound_[name] = v; }

  /// Parameter variables resolved so far, by qualified name.
  const std::map<std::string, Var<T>>& params_used() const { return used_; }

  /// Gradients for every trainable parameter used in this pass; parameters
  /// the loss did not reach get zeros.
  std::map<std::string, TensorT<T>> param_grads(const Gradients<T>& grads) const;

 private:
  Var<T> param(const std::string& name, const Shape& shape, ParamKind kind, std::size_t fan_in);
  void record(const std::string& name, const std::string& kind, const Shape& in, const Shape& out,
              std::size_t params);

  Tape<T>& tape_;
  ParamStore<T>& params_;
  nn::Mode mode_;
  Phase phase_;
  bool update_running_stats_ = true;
  std::vector<std::string> prefix_;
  Probe probe_;
  std::vector<LayerRecord> records_;
  std::map<std::string, Var<T>> bound_;
  std::map<std::string, Var<T>> used_;
};

}  // namespace saek
