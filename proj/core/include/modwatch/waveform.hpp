#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modwatch/tensor.hpp"

namespace modwatch::data {

inline constexpr std::size_t channel_count = 14;

// Canonical channel order of every waveform tensor.
enum Channel : std::size_t {
  igbt_a_pos,
  igbt_a_pos_star,
  igbt_b_pos,
  igbt_b_pos_star,
  igbt_c_pos,
  igbt_c_pos_star,
  flux_a,
  flux_b,
  flux_c,
  cb_v,
  cb_i,
  mod_v,
  mod_i,
  dv_dt,
};

inline constexpr std::array<std::string_view, channel_count> channel_names = {
    "IGBT-A+", "IGBT-A+*", "IGBT-B+", "IGBT-B+*", "IGBT-C+", "IGBT-C+*", "FLUX-A",
    "FLUX-B",  "FLUX-C",   "CB-V",    "CB-I",     "MOD-V",   "MOD-I",    "DV/DT",
};

std::vector<std::string> canonical_channel_names();

// DV/DT is this multiple of the per-step MOD-V difference.
inline constexpr double dvdt_scale = 10.0;

enum class FaultClass : std::uint8_t { dvdt, flux, igbt, driver, scr, sns_pps };
inline constexpr std::size_t fault_class_count = 6;
inline constexpr std::array<FaultClass, fault_class_count> all_fault_classes = {
    FaultClass::dvdt, FaultClass::flux, FaultClass::igbt, FaultClass::driver, FaultClass::scr, FaultClass::sns_pps};

std::string_view fault_name(FaultClass f);
// File-name-safe variant, e.g. "sns_pps".
std::string fault_slug(FaultClass f);
FaultClass parse_fault(std::string_view text);

// Channels a fault class physically perturbs.
std::vector<Channel> designated_channels(FaultClass f);

// Normal, or exactly one fault class. Encoded as 0 (normal) or 1 + class index.
struct Label {
  std::optional<FaultClass> fault;

  static Label normal() { return {}; }
  static Label of(FaultClass f) { return {f}; }
  bool is_normal() const noexcept { return !fault.has_value(); }
  std::int32_t code() const noexcept { return fault ? 1 + static_cast<std::int32_t>(*fault) : 0; }
  static Label from_code(std::int32_t code);
  std::string name() const;

  friend bool operator==(const Label&, const Label&) = default;
};

// samples x time-steps x channels with per-sample metadata. sample_ids are
// stable identifiers within one generated dataset (row index at creation).
struct WaveformSet {
  nn::Tensor data;
  std::vector<std::string> channel_names;
  std::vector<std::uint32_t> module_ids;
  std::vector<Label> labels;
  std::vector<std::uint64_t> sample_ids;

  std::size_t size() const noexcept { return module_ids.size(); }
  std::size_t time_steps() const { return data.dim(1); }
  std::size_t channels() const { return data.dim(2); }

  void validate() const;
  WaveformSet subset(std::span<const std::size_t> rows) const;
  nn::Tensor batch(std::span<const std::size_t> rows) const;
  std::vector<std::uint32_t> modules(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> rows_where(std::optional<std::uint32_t> module, std::optional<Label> label) const;
  std::vector<std::size_t> all_rows() const;
};

WaveformSet concatenate(const WaveformSet& a, const WaveformSet& b);

// ---- synthetic surrogate generator ----------------------------------------

struct GeneratorConfig {
  std::size_t module_count = 15;
  std::size_t normals_per_module = 40;
  std::size_t fault_samples = 150;
  std::size_t time_steps = 512;
  double noise_sd = 0.005;
  // Per-module template offsets span +/- spread/2 around nominal.
  double amplitude_spread = 0.3;
  double frequency_spread = 0.3;
  // Share of fault_samples per class, indexed like all_fault_classes.
  std::array<double, fault_class_count> fault_mix = {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};
  // Severity per class; +infinity produces a flatline pulse.
  std::array<double, fault_class_count> severity = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 1;

  void validate() const;
};

// Record layout: pulse k occupies [lead + k * period, lead + k * period + pulse_length).
struct PulseLayout {
  std::size_t pulse_length = 512;
  std::size_t lead = 0;
  std::size_t period = 512;
  std::size_t pulses = 3;

  std::size_t record_length() const { return lead + (pulses - 1) * period + pulse_length; }
};

PulseLayout default_layout(std::size_t time_steps);

enum class ExtractMode { normal, prefault };

// raw is record-length x channels. normal mode returns every complete pulse
// (up to three), prefault mode only the first. Result: pulses x pulse_length x channels.
nn::Tensor extract_macropulses(const nn::Tensor& raw, const PulseLayout& layout, ExtractMode mode);

// One clean-template macro-pulse (time x channels) plus noise. Fault
// perturbations draw from their own stream, so the same record_seed with
// severity 0 reproduces the normal counterpart exactly.
nn::Tensor render_pulse(const GeneratorConfig& config, std::uint32_t module, Label label, double severity,
                        std::uint64_t record_seed, std::size_t pulse_index);

// Three-pulse record. Normal: three pulses from one template. Fault: pre-fault
// pulse, the fault pulse itself, then an idle (unsaved) window.
nn::Tensor render_record(const GeneratorConfig& config, std::uint32_t module, Label label,
                         std::uint64_t record_seed);

std::uint64_t record_seed(const GeneratorConfig& config, std::uint32_t module, Label label, std::size_t record);

WaveformSet generate(const GeneratorConfig& config);

// ---- preprocessing ----------------------------------------------------------

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<bool> constant;
};

// Per-channel z-scoring. Without stats they are computed from `data`;
// constant channels map to zero and are flagged.
std::pair<WaveformSet, ChannelStats> standardize(const WaveformSet& data,
                                                 const std::optional<ChannelStats>& stats = std::nullopt);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  WaveformSet train;
  WaveformSet validation;
  WaveformSet test;
};

// Stratified by (module, label). Abnormal samples only enter validation/test,
// divided in proportion validation:test.
DatasetSplit split(const WaveformSet& data, const SplitFractions& fractions, std::uint64_t seed);

// ---- I/O -------------------------------------------------------------------

// MWTS container: "MWTS" | u32 version | u32 rank | u64 dims | channel-name
// table | u32 module ids | i32 label codes | u64 sample ids | little-endian
// float32 values.
inline constexpr std::uint32_t tensor_file_version = 1;

void save_waveforms(const std::filesystem::path& path, const WaveformSet& data);
WaveformSet load_waveforms(const std::filesystem::path& path);
std::string encode_waveforms(const WaveformSet& data);
WaveformSet decode_waveforms(const std::string& bytes);

// sample_id,module,label
void write_metadata_csv(const std::filesystem::path& path, const WaveformSet& data);

}  // namespace modwatch::data
