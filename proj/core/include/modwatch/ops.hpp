#pragma once

#include <cstddef>

#include "modwatch/autodiff.hpp"
#include "modwatch/parameters.hpp"
#include "modwatch/tensor.hpp"

namespace modwatch::nn {

enum class Padding { same, valid };

// Output length of a 1-D convolution; same padding gives ceil(time / stride).
std::size_t conv_output_length(std::size_t time, std::size_t width, std::size_t stride, Padding padding);

// Untaped kernels. input is batch x time x in-channels.
Tensor conv1d_forward(const Tensor& input, const LayerWeights& weights, std::size_t stride, Padding padding);
// input is batch x in-features; output = input * W^T + bias.
Tensor dense_forward(const Tensor& input, const LayerWeights& weights);
Tensor relu(const Tensor& input);

// Taped operations.
Var conv1d(Tape& tape, Var input, Var kernel, Var bias, std::size_t stride, Padding padding);
Var dense(Tape& tape, Var input, Var kernel, Var bias);
Var relu(Tape& tape, Var input);
Var reshape(Tape& tape, Var input, Dims dims);
// Concatenates two batch x features matrices along the feature axis.
Var concat_features(Tape& tape, Var a, Var b);
// Nearest-neighbour repeat along the time axis of a batch x time x channels tensor.
Var upsample_time(Tape& tape, Var input, std::size_t factor);
Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var input, float factor);
Var sum(Tape& tape, Var input);
// a + weight * b for scalars.
Var weighted_add(Tape& tape, Var a, Var b, float weight);

// Mean squared error over every element.
Var mse(Tape& tape, Var x, Var reconstruction);

enum class KldReduction { batch_mean, batch_sum };

// Closed-form KL(N(mu, exp(logvar)) || N(0, 1)) summed over latent dims, then
// reduced over the batch.
Var gaussian_kld(Tape& tape, Var mu, Var logvar, KldReduction reduction = KldReduction::batch_mean);

// z = mu + exp(logvar / 2) * eps. eps is a constant; gradients reach mu and logvar only.
Var reparameterize(Tape& tape, Var mu, Var logvar, const Tensor& eps);

}  // namespace modwatch::nn
