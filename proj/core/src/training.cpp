#include "modwatch/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "modwatch/error.hpp"
#include "modwatch/optim.hpp"
#include "modwatch/parallel.hpp"
#include "modwatch/random.hpp"

namespace modwatch::train {

using model::LossBreakdown;

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.learning_rate = 1e-5;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be finite and >= 0");
}

std::map<std::string, std::string> TrainConfig::to_key_values() const {
  std::ostringstream lr, e;
  lr << std::setprecision(17) << learning_rate;
  e << std::setprecision(17) << eta;
  return {{"batch_size", std::to_string(batch_size)},
          {"learning_rate", lr.str()},
          {"max_epochs", std::to_string(max_epochs)},
          {"patience", std::to_string(patience)},
          {"eta", e.str()},
          {"seed", std::to_string(seed)}};
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << std::setprecision(9);
  os << "epoch,train_reconstruction,train_kld,train_total,val_reconstruction,val_kld,val_total\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.train.reconstruction << ',' << e.train.kld << ',' << e.train.total << ','
       << e.validation.reconstruction << ',' << e.validation.kld << ',' << e.validation.total << '\n';
  }
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5348u, epoch));
  for (std::size_t i = samples; i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < samples; b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(samples, b + batch_size)));
  }
  return batches;
}

namespace {

std::vector<std::uint32_t> conditions(const model::Cvae& model, const data::WaveformSet& data,
                                      std::span<const std::size_t> rows) {
  if (model.spec().mode == model::Mode::vae) return {};
  return data.modules(rows);
}

// Sample-weighted accumulation of batch breakdowns.
struct LossAccumulator {
  double rec = 0.0, kld = 0.0;
  std::size_t n = 0;
  void add(const LossBreakdown& l, std::size_t samples) {
    rec += l.reconstruction * static_cast<double>(samples);
    kld += l.kld * static_cast<double>(samples);
    n += samples;
  }
  LossBreakdown mean(double eta) const {
    LossBreakdown out;
    out.eta = eta;
    if (n == 0) return out;
    out.reconstruction = rec / static_cast<double>(n);
    out.kld = kld / static_cast<double>(n);
    out.total = out.reconstruction + eta * out.kld;
    return out;
  }
};

}  // namespace

LossBreakdown evaluate_loss(const model::Cvae& model, const nn::ModelParameters& params,
                            const data::WaveformSet& data, double eta, std::size_t batch_size,
                            std::optional<std::uint64_t> noise_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  LossAccumulator acc;
  std::vector<std::size_t> rows;
  for (std::size_t b = 0, k = 0; b < data.size(); b += batch_size, ++k) {
    rows.resize(std::min(data.size(), b + batch_size) - b);
    std::iota(rows.begin(), rows.end(), b);
    const auto noise =
        noise_seed ? model::LatentNoise::seeded(derive_seed(*noise_seed, k)) : model::LatentNoise::zero();
    acc.add(model.loss(data.batch(rows), conditions(model, data, rows), params, eta, noise), rows.size());
  }
  return acc.mean(eta);
}

void check_no_leak(const data::WaveformSet& train_set, const data::WaveformSet& validation_set,
                   const data::WaveformSet& test_set) {
  for (const auto& l : train_set.labels) {
    if (!l.is_normal()) throw DataError("training split contains an abnormal sample (" + l.name() + ")");
  }
  const std::set<std::uint64_t> ids(train_set.sample_ids.begin(), train_set.sample_ids.end());
  for (const auto* other : {&validation_set, &test_set}) {
    for (auto id : other->sample_ids) {
      if (ids.count(id)) throw DataError("sample id " + std::to_string(id) + " appears in training and held-out data");
    }
  }
}

TrainResult train(const model::Cvae& model, const TrainConfig& config, const data::WaveformSet& train_set,
                  const data::WaveformSet& validation_set, std::optional<nn::ModelParameters> init) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  check_no_leak(train_set, validation_set, data::WaveformSet{});
  nn::ModelParameters params = init ? std::move(*init) : model.make_parameters(derive_seed(config.seed, 0x1417u));
  model.check_parameters(params);

  TrainResult result;
  result.params = params;
  if (config.max_epochs == 0) return result;
  if (train_set.size() == 0) throw DataError("training split is empty");
  train_set.validate();

  auto state = nn::AdamState::for_parameters(params, config.learning_rate);
  const bool has_validation = validation_set.size() > 0;
  const std::uint64_t validation_seed = derive_seed(config.seed, 0x7a1u);
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    LossAccumulator acc;
    const auto batches = epoch_batches(train_set.size(), config.batch_size, config.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& rows = batches[b];
      const auto noise = model::LatentNoise::seeded(derive_seed(config.seed, epoch, b));
      model::LossAndGradients lg;
      try {
        lg = model.loss_and_gradients(train_set.batch(rows), conditions(model, train_set, rows), params, config.eta,
                                      noise);
      } catch (const NumericError& e) {
        throw NumericError(std::string("non-finite value during training at epoch ") + std::to_string(epoch) +
                           ", batch " + std::to_string(b) + " (first sample id " +
                           std::to_string(train_set.sample_ids[rows.front()]) +
                           "), parameter norm " + std::to_string(params.norm()) + ": " + e.what());
      }
      if (!std::isfinite(lg.loss.total)) {
        throw NumericError("NaN loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           ", parameter norm " + std::to_string(params.norm()));
      }
      nn::adam_step(params, lg.gradients, state);
      if (!params.all_finite()) {
        throw NumericError("parameters became non-finite after epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      acc.add(lg.loss, rows.size());
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train = acc.mean(config.eta);
    record.validation = has_validation
                            ? evaluate_loss(model, params, validation_set, config.eta, config.batch_size,
                                            validation_seed)
                            : record.train;
    result.log.epochs.push_back(record);

    if (record.validation.total < best) {
      best = record.validation.total;
      result.params = params;
      result.log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<ModuleRun> train_single_module_suite(const model::ModelSpec& spec, const TrainConfig& config,
                                                 const data::WaveformSet& train_set,
                                                 const data::WaveformSet& validation_set, std::size_t jobs) {
  if (spec.mode != model::Mode::vae) throw ConfigError("single-module suite requires vae mode");
  const model::Cvae model(spec);
  const std::set<std::uint32_t> module_set(train_set.module_ids.begin(), train_set.module_ids.end());
  const std::vector<std::uint32_t> modules(module_set.begin(), module_set.end());
  for (auto m : modules) {
    const auto n = train_set.rows_where(m, std::nullopt).size();
    if (n < 2 * config.batch_size) {
      throw DataError("module " + std::to_string(m) + " has " + std::to_string(n) +
                      " training samples, fewer than 2 batches of " + std::to_string(config.batch_size));
    }
  }
  std::vector<ModuleRun> runs(modules.size());
  parallel_for(modules.size(), jobs, [&](std::size_t k) {
    const auto m = modules[k];
    const auto rows = train_set.rows_where(m, std::nullopt);
    const auto val_rows = validation_set.size() ? validation_set.rows_where(m, data::Label::normal())
                                                : std::vector<std::size_t>{};
    const auto val = val_rows.empty() ? data::WaveformSet{} : validation_set.subset(val_rows);
    runs[k] = {m, train(model, config, train_set.subset(rows), val)};
  });
  return runs;
}

void write_manifest(const std::filesystem::path& path, const std::map<std::string, std::string>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : entries) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("manifest entries may not contain '=' in keys or newlines: " + k);
    }
    os << k << '=' << v << '\n';
  }
}

std::map<std::string, std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed manifest line: " + line);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace modwatch::train
