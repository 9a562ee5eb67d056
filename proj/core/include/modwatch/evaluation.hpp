#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modwatch/model.hpp"
#include "modwatch/parameters.hpp"
#include "modwatch/waveform.hpp"

namespace modwatch::eval {

// A trained anomaly detector: either one conditional model shared by every
// module, or one unconditional model per module.
class Detector {
 public:
  static Detector conditional(model::ModelSpec spec, nn::ModelParameters params);
  static Detector per_module(model::ModelSpec spec, std::map<std::uint32_t, nn::ModelParameters> params);

  const model::Cvae& model() const noexcept { return model_; }
  bool is_conditional() const noexcept { return model_.spec().mode == model::Mode::cvae; }
  // Throws DataError for a module the detector has never seen.
  const nn::ModelParameters& params_for(std::uint32_t module) const;
  std::vector<std::uint32_t> modules() const;

 private:
  Detector(model::ModelSpec spec) : model_(std::move(spec)) {}
  model::Cvae model_;
  std::optional<nn::ModelParameters> shared_;
  std::map<std::uint32_t, nn::ModelParameters> per_module_;
};

struct AnomalyScore {
  std::uint64_t sample_id = 0;
  std::uint32_t module = 0;
  data::Label label;
  std::vector<double> channels;  // per-channel MSE
  double aggregate = 0.0;        // mean of `channels`
};

enum class ScoreMode { deterministic, sampled };

struct ScoreOptions {
  ScoreMode mode = ScoreMode::deterministic;
  std::size_t draws = 100;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::size_t batch_size = 32;
};

// Per-channel and aggregate MSE between x and its reconstruction. Sampled
// mode scores the mean of `draws` reconstructions; draw k of sample s uses
// latent noise seeded by (seed, k, sample id), so results do not depend on
// batching or job count.
std::vector<AnomalyScore> score(const Detector& detector, const data::WaveformSet& data, const ScoreOptions& options);

// `replicas` independent single-draw scorings (replica k = draw k).
std::vector<std::vector<AnomalyScore>> score_replicas(const Detector& detector, const data::WaveformSet& data,
                                                      std::size_t replicas, std::uint64_t seed, std::size_t jobs = 1);

// Per-channel MSE of a single sample (time x channels).
std::vector<double> channel_mse(std::span<const float> x, std::span<const float> reconstruction,
                                std::size_t time_steps, std::size_t channels);

// ---- ROC / AUC ---------------------------------------------------------------

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // flag when score >= threshold
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) first, (1,1) last
  double auc = 0.5;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

// Threshold sweep over every distinct score; AUC is the Mann-Whitney pair
// statistic with ties counted one half.
RocCurve roc_auc(std::span<const double> normal, std::span<const double> abnormal);
double auc(std::span<const double> normal, std::span<const double> abnormal);

// Smallest observed score t whose empirical FPR #{s >= t}/n is within budget;
// when no observed score qualifies (ties at the top), the next float above the
// maximum. Needs >= 10 scores and budget in (0, 1].
double pick_threshold(std::span<const double> normal_scores, double fpr_budget);
double false_positive_rate(std::span<const double> normal_scores, double threshold);

// ---- summaries -----------------------------------------------------------------

struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
  std::size_t count = 0;
};

// Quantile with the "midpoint" convention: average of the order statistics
// bracketing position p * (n - 1).
double quantile_midpoint(std::vector<double> values, double p);
BoxStats box_stats(std::span<const double> values);

// Fixed log10 bins [-7, 1] of width 0.25. Values outside are clamped to the
// edge bins (non-positive scores land in the first bin).
inline constexpr double density_log10_min = -7.0;
inline constexpr double density_log10_max = 1.0;
inline constexpr double density_bin_width = 0.25;
inline constexpr std::size_t density_bins = 32;
std::size_t density_bin(double score);
std::vector<std::size_t> histogram_log10(std::span<const double> values);

// Channel index `channels` (one past the last) denotes the aggregate score.
struct GroupKey {
  std::uint32_t module = 0;
  std::size_t channel = 0;
  data::Label label;
  friend auto operator<=>(const GroupKey& a, const GroupKey& b) {
    if (auto c = a.module <=> b.module; c != 0) return c;
    if (auto c = a.channel <=> b.channel; c != 0) return c;
    return a.label.code() <=> b.label.code();
  }
  friend bool operator==(const GroupKey&, const GroupKey&) = default;
};

struct Summary {
  std::map<GroupKey, BoxStats> box;
  std::map<GroupKey, std::vector<std::size_t>> density;
  std::size_t channels = 0;
};

Summary summarize(std::span<const AnomalyScore> scores);

// ---- AUC tables ----------------------------------------------------------------

struct AucCell {
  data::FaultClass fault;
  std::optional<std::uint32_t> module;  // empty: all modules pooled
  std::optional<double> auc;            // absent when a class is empty
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

// Normals versus each fault class, pooled and per module, on aggregate scores.
std::vector<AucCell> auc_table(std::span<const AnomalyScore> scores);

struct ChannelAuc {
  data::FaultClass fault;
  std::size_t channel = 0;
  double auc = 0.5;
};

// Per-fault channel ranking (descending AUC of per-channel scores).
std::vector<ChannelAuc> channel_auc_ranking(std::span<const AnomalyScore> scores);

struct AucEstimate {
  double auc = 0.5;           // deterministic-mode scores
  double replica_mean = 0.5;  // over sampled replicas
  double replica_sd = 0.0;    // sample SD (n - 1) over replicas
  std::size_t replicas = 0;
};

struct MethodScores {
  std::vector<AnomalyScore> deterministic;
  std::vector<std::vector<AnomalyScore>> replicas;
};

struct ComparisonCell {
  data::FaultClass fault;
  std::uint32_t module = 0;
  std::optional<AucEstimate> multi;
  std::optional<AucEstimate> single;
  std::optional<double> delta() const {
    if (!multi || !single) return std::nullopt;
    return multi->auc - single->auc;
  }
};

// Cells with no normals or no faults of the class for a module are absent,
// not zero. Both methods must cover the same samples.
std::vector<ComparisonCell> compare_methods(const MethodScores& multi, const MethodScores& single,
                                            std::span<const data::FaultClass> faults,
                                            std::span<const std::uint32_t> modules);

// ---- CSV -----------------------------------------------------------------------

void write_scores_csv(const std::filesystem::path& path, std::span<const AnomalyScore> scores,
                      std::span<const std::string> channel_names);
void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve);
void write_auc_table_csv(const std::filesystem::path& path, std::span<const AucCell> cells);
void write_boxstats_csv(const std::filesystem::path& path, const Summary& summary,
                        std::span<const std::string> channel_names);
void write_density_csv(const std::filesystem::path& path, const Summary& summary,
                       std::span<const std::string> channel_names);
void write_channel_auc_csv(const std::filesystem::path& path, std::span<const ChannelAuc> ranking,
                           std::span<const std::string> channel_names);
void write_comparison_csv(const std::filesystem::path& path, std::span<const ComparisonCell> cells);

}  // namespace modwatch::eval
