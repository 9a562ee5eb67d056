#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "modwatch/model.hpp"
#include "modwatch/parameters.hpp"
#include "modwatch/training.hpp"
#include "modwatch/waveform.hpp"

namespace modwatch::landscape {

// Perturbation direction with one tensor per parameter slot.
struct Direction {
  std::vector<nn::Tensor> tensors;
  std::string tag;
  std::uint64_t seed = 0;
};

// Rescales every kernel unit (conv output channel or dense output row) of `d`
// to the Frobenius norm of the matching weight unit; bias entries are zeroed.
// A zero-norm weight unit yields a zero direction unit.
void filter_normalize(Direction& d, const nn::ModelParameters& params);

// Standard-normal entries from `seed`, then filter-normalized.
Direction random_direction(const nn::ModelParameters& params, std::uint64_t seed, std::string tag);

// theta + alpha * d1 + beta * d2 (elementwise in float: theta + (a*d1 + b*d2)).
nn::ModelParameters displaced(const nn::ModelParameters& params, const Direction& d1, double alpha,
                              const Direction& d2, double beta);

struct GridOptions {
  std::size_t resolution = 25;
  double range = 1.0;
  std::size_t jobs = 1;
  std::size_t batch_size = 32;
  double eta = 1.0;
  // Evaluation over a collinear pair is only meaningful as a diagnostic.
  bool require_distinct_seeds = true;
};

// Axis values -range..range; a single point sits at 0.
std::vector<double> grid_axis(std::size_t resolution, double range);

struct LandscapeGrid {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> loss;       // row-major [alpha][beta]; +inf where overflowed
  std::vector<bool> overflowed;
  double center_loss = 0.0;
  std::string tag;

  double at(std::size_t i, std::size_t j) const { return loss[i * beta.size() + j]; }
  bool overflow_at(std::size_t i, std::size_t j) const { return overflowed[i * beta.size() + j]; }
};

// f(alpha, beta) = L(theta + alpha*gamma + beta*nu) with latent noise frozen
// to zero. Cells are independent; the result does not depend on `jobs`.
LandscapeGrid evaluate_grid(const model::Cvae& model, const nn::ModelParameters& params, const Direction& gamma,
                            const Direction& nu, const data::WaveformSet& data, const GridOptions& options);

struct ConvexityReport {
  double psd_fraction = 0.0;   // interior points with a PSD 2x2 stencil Hessian
  double loss_min = 0.0;
  double loss_max = 0.0;
  double center_loss = 0.0;
  bool center_minimal = false; // center within the lowest 5% of grid values
  double ray_monotonicity = 0.0;
  std::size_t interior_points = 0;
  std::size_t overflowed = 0;
};

ConvexityReport convexity_report(const LandscapeGrid& grid);

struct DepthResult {
  std::size_t depth = 0;
  model::ModelSpec spec;
  train::TrainLog log;
  LandscapeGrid grid;
  ConvexityReport report;
};

struct DepthSweepOptions {
  std::vector<std::size_t> depths = {3, 5, 10, 20, 30, 40};
  GridOptions grid;
  std::uint64_t direction_seed = 1;
  // Depths train concurrently on this many workers (grid cells then run serially).
  std::size_t jobs = 1;
};

// Trains one model per depth (conv blocks per side) with identical seeds,
// data and hyperparameters, then evaluates its landscape on `landscape_data`.
std::vector<DepthResult> depth_sweep(const model::ModelSpec& base, const train::TrainConfig& config,
                                     const data::WaveformSet& train_set, const data::WaveformSet& validation_set,
                                     const data::WaveformSet& landscape_data, const DepthSweepOptions& options);

model::ModelSpec with_depth(const model::ModelSpec& base, std::size_t depth);

void write_grid_csv(const std::filesystem::path& path, const LandscapeGrid& grid);
void write_report_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, ConvexityReport>>& rows);

}  // namespace modwatch::landscape
