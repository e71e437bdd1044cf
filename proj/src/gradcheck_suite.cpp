#include "saek/gradcheck_suite.hpp"

#include <cmath>
#include <chrono>

#include "saek/losses.hpp"
#include "saek/networks.hpp"
#include "saek/rng.hpp"

namespace saek {

namespace {

using V = Var<double>;
using Inputs = std::span<const V>;

TensorD random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Scalarizes `y` with weights drawn from a stream fixed per case;
/// `normalized` turns the sum into a weighted mean.
V reduce_output(const V& y, std::uint64_t seed, bool normalized = false) {
  SplitMix64 rng(seed);
  TensorD w = random_tensor(y.shape(), rng);
  if (normalized) {
    const double s = 1.0 / static_cast<double>(w.size());
    for (auto& v : w.data()) v *= s;
  }
  return weighted_sum(y, w);
}

class Runner {
 public:
  Runner(const SuiteOptions& o, const std::function<void(const SuiteCase&)>& cb) : opts_(o), cb_(cb) {}

  bool wants(const std::string& group) const { return opts_.groups.empty() || opts_.groups.count(group) != 0; }

  void run(const std::string& group, const std::string& name, const Program& f, const std::vector<NamedTensor>& in,
           std::size_t coords) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckOptions g{opts_.step, opts_.tolerance, coords, derive_seed(opts_.seed, cases_.size())};
    SuiteCase c{group, name, grad_check(f, in, g), 0.0};
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cb_) cb_(c);
    cases_.push_back(std::move(c));
  }

  /// A block or network under test: the builder receives a graph and the
  /// input variable. Parameters are declared once, initialized from the
  /// kit's rule, and each is passed to the checker as its own input.
  void run_graph(const std::string& group, const std::string& name, const std::vector<Shape>& input_shapes,
                 const std::function<V(Graph<double>&, Inputs)>& build, std::size_t coords) {
    const std::uint64_t seed = derive_seed(opts_.seed, 1000 + cases_.size());
    auto store = std::make_shared<ParamStore<double>>();
    {
      Tape<double> tape;
      Graph<double> g(tape, *store, nn::Mode::eval, Graph<double>::Phase::declare);
      std::vector<V> xs;
      for (const auto& s : input_shapes) xs.push_back(g.input(TensorD(s)));
      build(g, xs);
    }
    init_store(*store, seed);
    SplitMix64 rng(seed ^ 0xA5A5);
    std::vector<NamedTensor> inputs;
    for (std::size_t k = 0; k < input_shapes.size(); ++k) {
      inputs.push_back({"input" + std::to_string(k), random_tensor(input_shapes[k], rng)});
    }
    const std::size_t first_param = inputs.size();
    std::vector<std::string> names;
    for (const auto& e : store->entries()) {
      if (!is_trainable(e.kind)) continue;
      TensorD v = e.value;
      // Off-default affine parameters exercise the full batch-norm backward.
      if (e.kind == ParamKind::bn_gamma) for (auto& x : v.data()) x = rng.uniform(0.5, 1.5);
      if (e.kind == ParamKind::bn_beta || e.kind == ParamKind::bias) for (auto& x : v.data()) x = rng.uniform(-0.2, 0.2);
      inputs.push_back({e.name, std::move(v)});
      names.push_back(e.name);
    }
    const std::uint64_t weight_seed = seed ^ 0x5A5A;
    Program f = [store, names, build, weight_seed, first_param](Tape<double>& tape, Inputs in) {
      Graph<double> g(tape, *store, nn::Mode::train);
      g.set_update_running_stats(false);
      for (std::size_t k = 0; k < names.size(); ++k) g.bind(names[k], in[first_param + k]);
      return reduce_output(build(g, in.first(first_param)), weight_seed, true);
    };
    run(group, name, f, inputs, coords);
  }

  std::vector<SuiteCase> take() { return std::move(cases_); }
  const SuiteOptions& opts() const { return opts_; }

 private:
  const SuiteOptions& opts_;
  const std::function<void(const SuiteCase&)>& cb_;
  std::vector<SuiteCase> cases_;
};

void op_cases(Runner& r, SplitMix64& rng) {
  auto unary = [&](const std::string& name, Shape shape, std::function<V(const V&)> op) {
    const std::uint64_t ws = rng.next();
    r.run("ops", name, [op, ws](Tape<double>&, Inputs in) { return reduce_output(op(in[0]), ws); },
          {{"x", random_tensor(std::move(shape), rng)}}, 0);
  };
  auto binary = [&](const std::string& name, Shape sa, Shape sb, std::function<V(const V&, const V&)> op,
                    double lo = -1.0) {
    const std::uint64_t ws = rng.next();
    r.run("ops", name, [op, ws](Tape<double>&, Inputs in) { return reduce_output(op(in[0], in[1]), ws); },
          {{"a", random_tensor(std::move(sa), rng)}, {"b", random_tensor(std::move(sb), rng, lo, 1.0)}}, 0);
  };

  const Shape s4{2, 3, 4, 4};
  binary("add", s4, s4, [](const V& a, const V& b) { return add(a, b); });
  binary("add_channel", s4, {3}, [](const V& a, const V& b) { return add(a, b); });
  binary("sub_scalar", s4, {1}, [](const V& a, const V& b) { return sub(a, b); });
  binary("mul", s4, s4, [](const V& a, const V& b) { return mul(a, b); });
  binary("mul_channel", s4, {3}, [](const V& a, const V& b) { return mul(a, b); });
  binary("div", s4, s4, [](const V& a, const V& b) { return div(a, b); }, 0.5);
  binary("max", s4, s4, [](const V& a, const V& b) { return maximum(a, b); });
  binary("matmul", {3, 5}, {5, 4}, [](const V& a, const V& b) { return matmul(a, b); });
  binary("concat", {2, 2, 3, 3}, {2, 3, 3, 3}, [](const V& a, const V& b) {
    const std::vector<V> parts{a, b};
    return concat<double>(parts, 1);
  });
  unary("slice", s4, [](const V& x) { return slice(x, 1, 1, 2); });
  unary("reshape", s4, [](const V& x) { return reshape(x, Shape{6, 16}); });
  unary("sum", s4, [](const V& x) { return sum(x); });
  unary("mean", s4, [](const V& x) { return mean(x); });
  unary("scale", s4, [](const V& x) { return scale(x, 2.5); });
  unary("relu", s4, [](const V& x) { return nn::relu(x); });
  unary("maxpool3x3_s1_p1", {1, 2, 5, 5}, [](const V& x) { return nn::maxpool2d(x, nn::Window{3, 3, 1, 1}); });
  unary("maxpool3x3_s2_p1", {1, 2, 7, 7}, [](const V& x) { return nn::maxpool2d(x, nn::Window{3, 3, 2, 1}); });
  unary("maxpool2x2_s2", {2, 2, 4, 4}, [](const V& x) { return nn::maxpool2d(x, nn::Window{2, 2, 2, 0}); });
  unary("avgpool3x3_s2_p1", {1, 2, 6, 6}, [](const V& x) { return nn::avgpool2d(x, nn::Window{3, 3, 2, 1}); });
  unary("adaptive_avgpool", s4, [](const V& x) { return nn::adaptive_avgpool_1x1(x); });
  unary("flatten", s4, [](const V& x) { return nn::flatten(x); });
  unary("softmax", {3, 5}, [](const V& x) { return nn::softmax(x); });

  auto conv = [&](const std::string& name, Shape xs, Shape ws, bool bias, nn::ConvOptions o, bool transposed) {
    const std::uint64_t wseed = rng.next();
    std::vector<NamedTensor> in{{"x", random_tensor(std::move(xs), rng)}, {"w", random_tensor(ws, rng)}};
    if (bias) in.push_back({"b", random_tensor(Shape{transposed ? ws[1] : ws[0]}, rng)});
    r.run("ops", name,
          [=](Tape<double>&, Inputs v) {
            const V* b = bias ? &v[2] : nullptr;
            return reduce_output(transposed ? nn::conv_transpose2d(v[0], v[1], b, o) : nn::conv2d(v[0], v[1], b, o),
                                 wseed);
          },
          in, 0);
  };
  conv("conv3x3_s1_p1", {2, 3, 5, 5}, {4, 3, 3, 3}, true, {1, 1}, false);
  conv("conv7x7_s2_p3", {1, 2, 9, 9}, {3, 2, 7, 7}, true, {2, 3}, false);
  conv("conv5x5_s2_p2", {1, 2, 6, 6}, {2, 2, 5, 5}, false, {2, 2}, false);
  conv("conv1x1", {2, 4, 3, 3}, {3, 4, 1, 1}, true, {1, 0}, false);
  conv("conv_transpose2x2_s2", {2, 3, 3, 3}, {3, 2, 2, 2}, true, {2, 0}, true);
  conv("conv_transpose3x3_s2_p1", {1, 2, 3, 3}, {2, 3, 3, 3}, false, {2, 1}, true);

  r.run("ops", "relu_conv_sum",
        [](Tape<double>&, Inputs v) { return sum(nn::relu(nn::conv2d<double>(v[0], v[1], nullptr, nn::ConvOptions{1, 0}))); },
        {{"x", random_tensor({1, 1, 4, 4}, rng)}, {"w", random_tensor({1, 1, 3, 3}, rng)}}, 0);

  for (const auto mode : {nn::Mode::train, nn::Mode::eval}) {
    const std::uint64_t ws = rng.next();
    auto rm = std::make_shared<TensorD>(random_tensor({3}, rng));
    auto rv = std::make_shared<TensorD>(random_tensor({3}, rng, 0.5, 2.0));
    r.run("ops", mode == nn::Mode::train ? "batchnorm_train" : "batchnorm_eval",
          [=](Tape<double>&, Inputs v) {
            nn::BatchNormOptions o;
            o.mode = mode;
            o.update_running = false;
            return reduce_output(nn::batchnorm2d(v[0], v[1], v[2], *rm, *rv, o), ws);
          },
          {{"x", random_tensor({2, 3, 3, 3}, rng)}, {"gamma", random_tensor({3}, rng, 0.5, 1.5)},
           {"beta", random_tensor({3}, rng)}},
          0);
  }
  {
    const std::uint64_t ws = rng.next();
    r.run("ops", "linear",
          [ws](Tape<double>&, Inputs v) { return reduce_output(nn::linear(v[0], v[1], &v[2]), ws); },
          {{"x", random_tensor({3, 5}, rng)}, {"w", random_tensor({4, 5}, rng)}, {"b", random_tensor({4}, rng)}}, 0);
  }
  {
    const std::vector<std::size_t> labels{2, 0, 3};
    r.run("ops", "cross_entropy", [labels](Tape<double>&, Inputs v) { return cross_entropy(v[0], labels); },
          {{"logits", random_tensor({3, 4}, rng, -3.0, 3.0)}}, 0);
  }
  {
    TensorD y(Shape{2, 3, 2, 2});
    for (auto& v : y.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    r.run("ops", "bce_with_logits", [y](Tape<double>&, Inputs v) { return bce_with_logits(v[0], y); },
          {{"logits", random_tensor({2, 3, 2, 2}, rng, -3.0, 3.0)}}, 0);
  }
}

}  // namespace

std::vector<SuiteCase> run_gradcheck_suite(const SuiteOptions& options,
                                           const std::function<void(const SuiteCase&)>& on_case) {
  Runner r(options, on_case);
  SplitMix64 rng(options.seed);
  if (r.wants("ops")) op_cases(r, rng);
  const std::size_t bc = options.block_coords;
  const std::size_t nc = options.network_coords;
  if (r.wants("blocks")) {
    r.run_graph("blocks", "ncab_1x3x16x16", {{1, 3, 16, 16}},
                [](Graph<double>& g, Inputs x) { return ncab_forward(g, x[0], NCABSpec{3, 8}); }, bc);
    r.run_graph("blocks", "saeb_1x8x8x8_s1", {{1, 8, 8, 8}},
                [](Graph<double>& g, Inputs x) { return saeb_forward(g, x[0], SAEBSpec{8, 8, 1}); }, bc);
    r.run_graph("blocks", "saeb_1x8x8x8_s2", {{1, 8, 8, 8}},
                [](Graph<double>& g, Inputs x) { return saeb_forward(g, x[0], SAEBSpec{8, 16, 2}); }, bc);
    r.run_graph("blocks", "sfd_x1x8x2x2_s1x8x4x4", {{1, 8, 2, 2}, {1, 8, 4, 4}},
                [](Graph<double>& g, Inputs x) { return sfd_forward(g, x[0], x[1], SFDSpec{8, 8, 8}); }, bc);
  }
  if (r.wants("saetcn")) {
    SAETCNConfig c;
    c.width_divisor = 16;
    r.run_graph("saetcn", "saetcn_w16_1x3x128x128", {{1, 3, 128, 128}},
                [c](Graph<double>& g, Inputs x) { return saetcn_forward(g, x[0], c); }, nc);
  }
  if (r.wants("sasnet")) {
    SASNetConfig c;
    c.width_divisor = 16;
    r.run_graph("sasnet", "sasnet_w16_1x3x128x128", {{1, 3, 128, 128}},
                [c](Graph<double>& g, Inputs x) { return sasnet_forward(g, x[0], c); }, nc);
  }
  return r.take();
}

}  // namespace saek
