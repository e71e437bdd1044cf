#include "saek/optim.hpp"

#include <cmath>

namespace saek {

namespace {

template <typename T>
void update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v, double lr, double b1, double b2,
            double eps, double c1, double c2) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i];
    const double mi = b1 * m[i] + (1.0 - b1) * gi;
    const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

void adam_step(ParamStore<float>& params, const std::map<std::string, Tensor>& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    const Tensor& w = params.get(name);
    if (w.shape() != g.shape()) {
      throw ShapeError("gradient for '" + name + "' has shape " + to_string(g.shape()) + ", parameter has " +
                       to_string(w.shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& w = params.get(name);
    auto [mi, m_new] = state.m.try_emplace(name, w.shape());
    auto [vi, v_new] = state.v.try_emplace(name, w.shape());
    update<float>(w.data(), g.data(), mi->second.data(), vi->second.data(), state.lr, state.beta1, state.beta2,
                  state.eps, c1, c2);
  }
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, std::vector<double>& m,
               std::vector<double>& v, std::uint64_t& step, double lr, double beta1, double beta2, double eps) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient and parameter sizes differ");
  m.resize(params.size(), 0.0);
  v.resize(params.size(), 0.0);
  ++step;
  const double t = static_cast<double>(step);
  update<double>(params, grads, m, v, lr, beta1, beta2, eps, 1.0 - std::pow(beta1, t), 1.0 - std::pow(beta2, t));
}

}  // namespace saek
