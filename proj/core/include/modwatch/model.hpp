#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "modwatch/autodiff.hpp"
#include "modwatch/ops.hpp"
#include "modwatch/parameters.hpp"
#include "modwatch/tensor.hpp"

namespace modwatch::model {

enum class Mode { vae, cvae };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

// Architecture description. The encoder runs `encoder_blocks` conv+ReLU blocks;
// the first `strided_blocks` use stride 2, the rest stride 1. The decoder mirrors
// this: stride-1 blocks at the bottleneck resolution first, then
// `strided_blocks` upsample+conv blocks, the last of which emits `channels`
// with no activation.
struct ModelSpec {
  Mode mode = Mode::cvae;
  std::size_t encoder_blocks = 3;
  std::size_t decoder_blocks = 3;
  std::size_t kernels_per_block = 16;
  // Optional per-block overrides; empty means every block uses kernels_per_block.
  std::vector<std::size_t> encoder_kernels;
  std::vector<std::size_t> decoder_kernels;
  std::size_t kernel_width = 3;
  std::size_t dense_units = 64;
  std::size_t decoder_dense_units = 64;
  std::size_t latent_dim = 32;
  std::size_t module_count = 15;
  std::size_t time_steps = 512;
  std::size_t channels = 14;
  std::size_t strided_blocks = 3;
  nn::KldReduction kld_reduction = nn::KldReduction::batch_mean;

  static ModelSpec desk(Mode mode);
  static ModelSpec paper(Mode mode);

  // Throws ShapeError when the encoder/decoder shapes cannot round-trip.
  void validate() const;

  std::size_t encoder_block_kernels(std::size_t block) const;
  std::size_t decoder_block_kernels(std::size_t block) const;
  std::size_t bottleneck_time() const;
  std::size_t bottleneck_channels() const;
  std::size_t condition_width() const { return mode == Mode::cvae ? module_count : 0; }

  std::map<std::string, std::string> to_key_values() const;
  static ModelSpec from_key_values(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// One-hot module identifier c.
struct ConditionLabel {
  std::uint32_t module_id = 0;
  std::size_t module_count = 15;

  ConditionLabel(std::uint32_t id, std::size_t count);
  std::vector<float> one_hot() const;
};

// batch x module_count indicator matrix.
nn::Tensor one_hot_batch(std::span<const std::uint32_t> modules, std::size_t module_count);

// Approximate posterior per sample. sigma is carried as log-variance.
struct LatentDistribution {
  nn::Tensor mu;
  nn::Tensor logvar;
  nn::Tensor epsilon;
  nn::Tensor z;

  static LatentDistribution from_sigma(const nn::Tensor& mu, const nn::Tensor& sigma);
  nn::Tensor sigma() const;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double kld = 0.0;
  double eta = 1.0;
  double total = 0.0;
};

// How epsilon is produced for z = mu + sigma * eps.
struct LatentNoise {
  enum class Kind { zero, seeded, fixed };
  Kind kind = Kind::zero;
  std::uint64_t seed = 0;
  nn::Tensor values;

  static LatentNoise zero() { return {}; }
  static LatentNoise seeded(std::uint64_t s) { return {Kind::seeded, s, {}}; }
  static LatentNoise fixed(nn::Tensor eps) { return {Kind::fixed, 0, std::move(eps)}; }

  nn::Tensor draw(std::size_t batch, std::size_t latent_dim) const;
};

nn::Tensor standard_normal_tensor(nn::Dims dims, std::uint64_t seed);

// z = mu + sigma * eps with eps ~ N(0, 1) drawn from `seed`. Fills dist.epsilon and dist.z.
nn::Tensor reparameterize(LatentDistribution& dist, std::uint64_t seed);

double mse(const nn::Tensor& x, const nn::Tensor& reconstruction);
double kld_gaussian(const LatentDistribution& dist, nn::KldReduction reduction = nn::KldReduction::batch_mean);

struct LossAndGradients {
  LossBreakdown loss;
  nn::Gradients gradients;
};

// Encoder/decoder of the single-module VAE (mode vae) or the module-conditioned
// CVAE (mode cvae). Stateless apart from the spec: parameters are passed in,
// so frozen-parameter inference may run from many threads at once.
class Cvae {
 public:
  explicit Cvae(ModelSpec spec);

  const ModelSpec& spec() const noexcept { return spec_; }

  nn::ModelParameters make_parameters(std::uint64_t seed) const;
  void check_parameters(const nn::ModelParameters& params) const;

  struct EncoderVars {
    nn::Var mu;
    nn::Var logvar;
  };
  struct ForwardVars {
    nn::Var mu;
    nn::Var logvar;
    nn::Var z;
    nn::Var reconstruction;
  };
  struct LossVars {
    ForwardVars forward;
    nn::Var reconstruction;
    nn::Var kld;
    nn::Var total;
  };

  // Graph builders. `params` is the result of tape.bind(parameters).
  EncoderVars encode(nn::Tape& tape, std::span<const nn::Var> params, nn::Var x,
                     std::span<const std::uint32_t> modules) const;
  nn::Var decode(nn::Tape& tape, std::span<const nn::Var> params, nn::Var z,
                 std::span<const std::uint32_t> modules) const;
  ForwardVars forward(nn::Tape& tape, std::span<const nn::Var> params, nn::Var x,
                      std::span<const std::uint32_t> modules, const LatentNoise& noise) const;
  LossVars loss(nn::Tape& tape, std::span<const nn::Var> params, nn::Var x, std::span<const std::uint32_t> modules,
                double eta, const LatentNoise& noise) const;

  // Value-level API. `modules` must be empty in vae mode and hold one id per
  // sample in cvae mode.
  LatentDistribution encode(const nn::Tensor& x, std::span<const std::uint32_t> modules,
                            const nn::ModelParameters& params) const;
  nn::Tensor decode(const nn::Tensor& z, std::span<const std::uint32_t> modules,
                    const nn::ModelParameters& params) const;
  nn::Tensor reconstruct(const nn::Tensor& x, std::span<const std::uint32_t> modules,
                         const nn::ModelParameters& params, const LatentNoise& noise) const;
  LossBreakdown loss(const nn::Tensor& x, std::span<const std::uint32_t> modules, const nn::ModelParameters& params,
                     double eta, const LatentNoise& noise) const;
  LossAndGradients loss_and_gradients(const nn::Tensor& x, std::span<const std::uint32_t> modules,
                                      const nn::ModelParameters& params, double eta, const LatentNoise& noise) const;

 private:
  void check_input(const nn::Tensor& x, std::span<const std::uint32_t> modules) const;
  void check_conditions(std::size_t batch, std::span<const std::uint32_t> modules) const;

  ModelSpec spec_;
};

}  // namespace modwatch::model
