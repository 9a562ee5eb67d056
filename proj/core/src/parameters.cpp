#include "modwatch/parameters.hpp"

#include <cmath>

#include "modwatch/error.hpp"
#include "modwatch/random.hpp"

namespace modwatch::nn {

LayerWeights LayerWeights::conv1d(std::size_t out_channels, std::size_t in_channels, std::size_t width) {
  if (width == 0 || width % 2 == 0) {
    throw ShapeError("conv1d kernel width must be odd and positive, got " + std::to_string(width));
  }
  return {LayerKind::conv1d, Tensor({out_channels, in_channels, width}), Tensor({out_channels})};
}

LayerWeights LayerWeights::dense(std::size_t out_features, std::size_t in_features) {
  return {LayerKind::dense, Tensor({out_features, in_features}), Tensor({out_features})};
}

void ModelParameters::add(std::string name, LayerWeights weights) {
  for (const auto& l : layers_) {
    if (l.name == name) throw ShapeError("duplicate layer name " + name);
  }
  layers_.push_back({std::move(name), std::move(weights)});
}

std::size_t ModelParameters::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw ShapeError("no layer named " + name);
}

Tensor& ModelParameters::tensor(std::size_t slot) {
  auto& w = layers_.at(slot / 2).weights;
  return is_bias_slot(slot) ? w.bias : w.kernel;
}

const Tensor& ModelParameters::tensor(std::size_t slot) const {
  const auto& w = layers_.at(slot / 2).weights;
  return is_bias_slot(slot) ? w.bias : w.kernel;
}

std::size_t ModelParameters::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.kernel.size() + l.weights.bias.size();
  return n;
}

double ModelParameters::norm() const noexcept {
  double s = 0.0;
  for (const auto& l : layers_) s += l.weights.kernel.squared_norm() + l.weights.bias.squared_norm();
  return std::sqrt(s);
}

bool ModelParameters::all_finite() const noexcept {
  for (const auto& l : layers_) {
    if (!l.weights.kernel.all_finite() || !l.weights.bias.all_finite()) return false;
  }
  return true;
}

bool operator==(const ModelParameters& a, const ModelParameters& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    if (x.name != y.name || x.weights.kind != y.weights.kind || !(x.weights.kernel == y.weights.kernel) ||
        !(x.weights.bias == y.weights.bias)) {
      return false;
    }
  }
  return true;
}

bool bitwise_equal(const ModelParameters& a, const ModelParameters& b) noexcept {
  if (a.layer_count() != b.layer_count()) return false;
  for (std::size_t s = 0; s < a.slot_count(); ++s) {
    if (!bitwise_equal(a.tensor(s), b.tensor(s))) return false;
  }
  for (std::size_t i = 0; i < a.layer_count(); ++i) {
    if (a.layer(i).name != b.layer(i).name || a.layer(i).weights.kind != b.layer(i).weights.kind) return false;
  }
  return true;
}

Gradients zero_gradients(const ModelParameters& params) {
  Gradients g;
  g.reserve(params.slot_count());
  for (std::size_t s = 0; s < params.slot_count(); ++s) g.emplace_back(params.tensor(s).dims());
  return g;
}

void initialize_fan_in_uniform(ModelParameters& params, std::uint64_t seed) {
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    auto& w = params.layer(l).weights;
    Rng rng(derive_seed(seed, l));
    const double bound = std::sqrt(6.0 / static_cast<double>(w.fan_in()));
    for (float& v : w.kernel.values()) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
    w.bias.fill(0.0f);
  }
}

}  // namespace modwatch::nn
