#include "modwatch/optim.hpp"

#include <cmath>

#include "modwatch/error.hpp"

namespace modwatch::nn {

AdamState AdamState::for_parameters(const ModelParameters& params, double learning_rate) {
  AdamState s;
  s.first_moment = zero_gradients(params);
  s.second_moment = zero_gradients(params);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(ModelParameters& params, const Gradients& grads, AdamState& state) {
  const std::size_t slots = params.slot_count();
  if (grads.size() != slots || state.first_moment.size() != slots || state.second_moment.size() != slots) {
    throw ShapeError("adam_step: gradient/state slot count does not match parameters");
  }
  for (std::size_t s = 0; s < slots; ++s) {
    const auto& dims = params.tensor(s).dims();
    if (grads[s].dims() != dims || state.first_moment[s].dims() != dims || state.second_moment[s].dims() != dims) {
      throw ShapeError("adam_step: shape mismatch at parameter slot " + std::to_string(s));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t s = 0; s < slots; ++s) {
    auto& p = params.tensor(s);
    const auto& g = grads[s];
    auto& m = state.first_moment[s];
    auto& v = state.second_moment[s];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = state.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + state.epsilon);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
}

}  // namespace modwatch::nn
