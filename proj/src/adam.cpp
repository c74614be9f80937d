#include "gmeql/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace gmeql {

void AdamState::reset(std::size_t size) {
  m.assign(size, 0.0);
  v.assign(size, 0.0);
  step = 0;
}

std::size_t adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
                      double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: size mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  std::size_t bad = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    if (!std::isfinite(g)) {
      g = 0.0;
      ++bad;
    }
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
  return bad;
}

}  // namespace gmeql
