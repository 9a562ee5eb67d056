#pragma once

#include <cstdint>
#include <vector>

#include "modwatch/parameters.hpp"

namespace modwatch::nn {

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_parameters(const ModelParameters& params, double learning_rate);
};

// Bias-corrected Adam update applied in place; increments state.step.
void adam_step(ModelParameters& params, const Gradients& grads, AdamState& state);

}  // namespace modwatch::nn
