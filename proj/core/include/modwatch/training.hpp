#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "modwatch/model.hpp"
#include "modwatch/parameters.hpp"
#include "modwatch/waveform.hpp"

namespace modwatch::train {

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;
  double eta = 1.0;
  std::uint64_t seed = 1;

  // Paper-scale hyperparameters (learning rate 1e-5).
  static TrainConfig paper();
  void validate() const;
  std::map<std::string, std::string> to_key_values() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  model::LossBreakdown train;
  model::LossBreakdown validation;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  // Epoch whose parameters were kept; 0 means the initialization.
  std::size_t best_epoch = 0;
  std::string checkpoint_id;

  // train_*/val_* series as CSV, one row per epoch.
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  nn::ModelParameters params;  // best-validation parameters
  TrainLog log;
};

// Per-epoch batch order; exposed so callers can reason about the schedule.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

// Mean loss over `data` in fixed batches. Latent noise per batch is seeded
// from `noise_seed`, or zero when absent.
model::LossBreakdown evaluate_loss(const model::Cvae& model, const nn::ModelParameters& params,
                                   const data::WaveformSet& data, double eta, std::size_t batch_size,
                                   std::optional<std::uint64_t> noise_seed);

// Trains from `init` (or a fresh fan-in initialization derived from the seed).
// Model selection uses the validation total; with an empty validation set the
// training total is used instead.
TrainResult train(const model::Cvae& model, const TrainConfig& config, const data::WaveformSet& train_set,
                  const data::WaveformSet& validation_set, std::optional<nn::ModelParameters> init = std::nullopt);

// Throws DataError when training contains abnormal samples or shares sample
// ids with validation/test.
void check_no_leak(const data::WaveformSet& train_set, const data::WaveformSet& validation_set,
                   const data::WaveformSet& test_set);

struct ModuleRun {
  std::uint32_t module = 0;
  TrainResult result;
};

// One independent VAE per module present in `train_set`, all from the same
// initialization seed and hyperparameters. Modules may train on `jobs`
// workers; results are ordered by module id either way.
std::vector<ModuleRun> train_single_module_suite(const model::ModelSpec& spec, const TrainConfig& config,
                                                 const data::WaveformSet& train_set,
                                                 const data::WaveformSet& validation_set, std::size_t jobs = 1);

// key=value lines, sorted by key.
void write_manifest(const std::filesystem::path& path, const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> read_manifest(const std::filesystem::path& path);

}  // namespace modwatch::train
