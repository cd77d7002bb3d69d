#include "pairrank/autodiff/adam.hpp"

#include <cmath>

namespace pairrank::ad {

AdamState AdamState::for_params(std::span<const Tensor> params, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0);
    state.second_moment.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  state.step += 1;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_data();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.size() != values.size()) {
      throw ShapeError("adam_step: moment buffer size mismatch for parameter " + std::to_string(p));
    }
    const auto grad = params[p].grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace pairrank::ad
