#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modwatch/model.hpp"
#include "modwatch/parameters.hpp"
#include "modwatch/tensor.hpp"

namespace modwatch::uq {

// Reconstruction replicas of one sample from independently drawn latents.
// Draw k uses noise seeded by (seed, first_draw + k), so a set built from
// draws [0, n) equals the merge of sets built from [0, m) and [m, n).
struct ReplicaSet {
  std::vector<nn::Tensor> replicas;  // each time x channels
  nn::Tensor mean;                   // time x channels
  nn::Tensor sd;                     // sample SD (n - 1)
  std::uint64_t seed = 0;
  std::size_t first_draw = 0;

  std::size_t draws() const noexcept { return replicas.size(); }
  // Recomputes mean and SD from the replicas in double precision.
  void summarize();
};

// Decodes z = mu + sigma * eps for `draws` latent draws. mu and sigma are
// 1 x latent; `modules` is empty (vae) or holds the sample's module id.
ReplicaSet replicate_latent(const model::Cvae& model, const nn::ModelParameters& params, const nn::Tensor& mu,
                            const nn::Tensor& sigma, std::span<const std::uint32_t> modules, std::size_t draws,
                            std::uint64_t seed, std::size_t first_draw = 0);

// Encodes x (time x channels or 1 x time x channels), then replicates.
ReplicaSet replicate(const model::Cvae& model, const nn::ModelParameters& params, const nn::Tensor& x,
                     std::optional<std::uint32_t> module, std::size_t draws, std::uint64_t seed,
                     std::size_t first_draw = 0);

// Union of two sets drawn from one seed over adjacent draw ranges.
ReplicaSet merge(const ReplicaSet& a, const ReplicaSet& b);

inline constexpr double sd_floor = 1e-12;

struct CalibrationCurve {
  std::vector<double> expected;  // 0.01 .. 0.99
  std::vector<double> observed;
  double area = 0.0;             // trapezoid mean of |observed - expected|
  bool degenerate = false;       // some SD had to be floored
  std::size_t points = 0;
};

std::vector<double> expected_proportions();

// Fraction of points with |observed - mean| <= z(p) * SD, z(p) the central
// Gaussian interval half-width for coverage p.
CalibrationCurve miscalibration_area(std::span<const float> mean, std::span<const float> sd,
                                     std::span<const float> observed);
CalibrationCurve miscalibration_area(const ReplicaSet& replicas, const nn::Tensor& observed);

// Pools the points of channel `channel` over several (replicas, observation) pairs.
CalibrationCurve channel_miscalibration(std::span<const ReplicaSet> sets, std::span<const nn::Tensor> observed,
                                        std::size_t channel);

struct ChannelCalibration {
  std::string channel;
  double area = 0.0;
  bool degenerate = false;
};

void write_uq_csv(const std::filesystem::path& path, std::span<const ChannelCalibration> rows, std::size_t draws,
                  std::uint64_t seed);
void write_bands_csv(const std::filesystem::path& path, const ReplicaSet& replicas,
                     std::span<const std::string> channel_names);

}  // namespace modwatch::uq
