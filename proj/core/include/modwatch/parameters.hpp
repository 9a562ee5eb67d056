#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modwatch/tensor.hpp"

namespace modwatch::nn {

enum class LayerKind : std::uint8_t { conv1d = 0, dense = 1 };

// conv1d kernel: out-channels x in-channels x width. dense kernel: out x in.
// One output channel (conv) or one output row (dense) is a "unit", the
// granularity used by filter normalization.
struct LayerWeights {
  LayerKind kind = LayerKind::dense;
  Tensor kernel;
  Tensor bias;

  static LayerWeights conv1d(std::size_t out_channels, std::size_t in_channels, std::size_t width);
  static LayerWeights dense(std::size_t out_features, std::size_t in_features);

  std::size_t outputs() const { return kernel.dim(0); }
  std::size_t inputs() const { return kernel.dim(1); }
  std::size_t width() const { return kind == LayerKind::conv1d ? kernel.dim(2) : 1; }
  std::size_t unit_count() const { return kernel.dim(0); }
  std::size_t unit_size() const { return kernel.size() / kernel.dim(0); }
  std::size_t fan_in() const { return unit_size(); }
};

struct Layer {
  std::string name;
  LayerWeights weights;
};

// Ordered, named layers. Parameter tensors are addressed by slot:
// slot 2*l is layer l's kernel, slot 2*l+1 its bias.
class ModelParameters {
 public:
  void add(std::string name, LayerWeights weights);

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::size_t index_of(const std::string& name) const;

  std::size_t slot_count() const noexcept { return 2 * layers_.size(); }
  static constexpr std::size_t kernel_slot(std::size_t layer) { return 2 * layer; }
  static constexpr std::size_t bias_slot(std::size_t layer) { return 2 * layer + 1; }
  static constexpr bool is_bias_slot(std::size_t slot) { return slot % 2 == 1; }
  Tensor& tensor(std::size_t slot);
  const Tensor& tensor(std::size_t slot) const;

  std::size_t parameter_count() const noexcept;
  double norm() const noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const ModelParameters& a, const ModelParameters& b);

 private:
  std::vector<Layer> layers_;
};

// One tensor per parameter slot, dims matching the parameter.
using Gradients = std::vector<Tensor>;

Gradients zero_gradients(const ModelParameters& params);

// He-style fan-in uniform init: kernel entries ~ U(-b, b), b = sqrt(6 / fan_in);
// biases start at zero. Every layer draws from its own derived stream, so
// adding layers does not perturb earlier ones.
void initialize_fan_in_uniform(ModelParameters& params, std::uint64_t seed);

bool bitwise_equal(const ModelParameters& a, const ModelParameters& b) noexcept;

}  // namespace modwatch::nn
