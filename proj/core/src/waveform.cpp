#include "modwatch/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "modwatch/binary_io.hpp"
#include "modwatch/error.hpp"
#include "modwatch/random.hpp"

namespace modwatch::data {

std::vector<std::string> canonical_channel_names() { return {channel_names.begin(), channel_names.end()}; }

std::string_view fault_name(FaultClass f) {
  switch (f) {
    case FaultClass::dvdt: return "DV/DT";
    case FaultClass::flux: return "FLUX";
    case FaultClass::igbt: return "IGBT";
    case FaultClass::driver: return "Driver";
    case FaultClass::scr: return "SCR";
    case FaultClass::sns_pps: return "SNS-PPS";
  }
  return "?";
}

std::string fault_slug(FaultClass f) {
  switch (f) {
    case FaultClass::dvdt: return "dvdt";
    case FaultClass::flux: return "flux";
    case FaultClass::igbt: return "igbt";
    case FaultClass::driver: return "driver";
    case FaultClass::scr: return "scr";
    case FaultClass::sns_pps: return "sns_pps";
  }
  return "?";
}

FaultClass parse_fault(std::string_view text) {
  std::string lower;
  for (char ch : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  for (auto f : all_fault_classes) {
    std::string name;
    for (char ch : fault_name(f)) name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (lower == name || lower == fault_slug(f)) return f;
  }
  throw ConfigError("unknown fault class '" + std::string(text) + "'");
}

std::vector<Channel> designated_channels(FaultClass f) {
  switch (f) {
    case FaultClass::dvdt: return {mod_v, dv_dt};
    case FaultClass::flux: return {flux_a, flux_b, flux_c};
    case FaultClass::igbt:
    case FaultClass::driver:
      return {igbt_a_pos, igbt_a_pos_star, igbt_b_pos, igbt_b_pos_star, igbt_c_pos, igbt_c_pos_star};
    case FaultClass::scr: return {cb_v, cb_i};
    case FaultClass::sns_pps: return {mod_v, mod_i, dv_dt};
  }
  return {};
}

Label Label::from_code(std::int32_t code) {
  if (code == 0) return normal();
  if (code < 0 || code > static_cast<std::int32_t>(fault_class_count)) {
    throw DataError("invalid label code " + std::to_string(code));
  }
  return of(static_cast<FaultClass>(code - 1));
}

std::string Label::name() const { return fault ? std::string(fault_name(*fault)) : "normal"; }

// ---- WaveformSet ------------------------------------------------------------

void WaveformSet::validate() const {
  if (data.rank() != 3) throw ShapeError("waveform tensor must be rank 3, got " + nn::shape_string(data.dims()));
  const auto n = data.dim(0);
  if (module_ids.size() != n || labels.size() != n || sample_ids.size() != n) {
    throw DataError("waveform metadata length does not match sample count " + std::to_string(n));
  }
  if (channel_names.size() != data.dim(2)) {
    throw DataError("channel-name table has " + std::to_string(channel_names.size()) + " entries for " +
                    std::to_string(data.dim(2)) + " channels");
  }
}

nn::Tensor WaveformSet::batch(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw DataError("empty batch");
  const std::size_t stride = data.dim(1) * data.dim(2);
  nn::Tensor out({rows.size(), data.dim(1), data.dim(2)});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= size()) throw DataError("row index out of range");
    std::copy_n(data.data() + rows[r] * stride, stride, out.data() + r * stride);
  }
  return out;
}

WaveformSet WaveformSet::subset(std::span<const std::size_t> rows) const {
  WaveformSet out;
  out.data = batch(rows);
  out.channel_names = channel_names;
  for (auto r : rows) {
    out.module_ids.push_back(module_ids[r]);
    out.labels.push_back(labels[r]);
    out.sample_ids.push_back(sample_ids[r]);
  }
  return out;
}

std::vector<std::uint32_t> WaveformSet::modules(std::span<const std::size_t> rows) const {
  std::vector<std::uint32_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(module_ids.at(r));
  return out;
}

std::vector<std::size_t> WaveformSet::rows_where(std::optional<std::uint32_t> module,
                                                 std::optional<Label> label) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (module && module_ids[i] != *module) continue;
    if (label && labels[i] != *label) continue;
    rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> WaveformSet::all_rows() const {
  std::vector<std::size_t> rows(size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

WaveformSet concatenate(const WaveformSet& a, const WaveformSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.data.dim(1) != b.data.dim(1) || a.data.dim(2) != b.data.dim(2) || a.channel_names != b.channel_names) {
    throw ShapeError("cannot concatenate waveform sets with different layouts");
  }
  WaveformSet out;
  std::vector<float> values = a.data.storage();
  values.insert(values.end(), b.data.storage().begin(), b.data.storage().end());
  out.data = nn::Tensor({a.size() + b.size(), a.data.dim(1), a.data.dim(2)}, std::move(values));
  out.channel_names = a.channel_names;
  out.module_ids = a.module_ids;
  out.module_ids.insert(out.module_ids.end(), b.module_ids.begin(), b.module_ids.end());
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.sample_ids = a.sample_ids;
  out.sample_ids.insert(out.sample_ids.end(), b.sample_ids.begin(), b.sample_ids.end());
  return out;
}

// ---- generator --------------------------------------------------------------

void GeneratorConfig::validate() const {
  if (module_count == 0 || module_count > 4096) throw ConfigError("module count must be in [1, 4096]");
  if (time_steps < 32) throw ConfigError("time steps must be >= 32");
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw ConfigError("noise sd must be finite and >= 0");
  if (!(amplitude_spread >= 0.0 && amplitude_spread < 1.0)) throw ConfigError("amplitude spread must be in [0, 1)");
  if (!(frequency_spread >= 0.0 && frequency_spread < 1.0)) throw ConfigError("frequency spread must be in [0, 1)");
  double total = 0.0;
  for (double p : fault_mix) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("fault-mix proportions must be finite and >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("fault-mix proportions must sum to 1");
  for (double s : severity) {
    if (!(s > 0.0)) throw ConfigError("fault severity must be > 0");
  }
}

PulseLayout default_layout(std::size_t time_steps) {
  return {time_steps, time_steps / 8, time_steps + time_steps / 4, 3};
}

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;
constexpr double pulse_on = 0.10;
constexpr double pulse_off = 0.85;
constexpr double rise = 0.015;
constexpr double fall = 0.02;
constexpr double cycles = 12.0;

enum Stream : std::uint64_t { jitter_stream = 1, noise_stream = 2, fault_stream = 3 };

// Low-discrepancy per-module coordinates: module templates are fixed
// functions of the module id, independent of the dataset seed.
double module_coordinate(std::uint32_t module, int k) {
  static constexpr double steps[] = {0.6180339887, 0.4142135624, 0.7320508076, 0.2360679775, 0.6457513111,
                                     0.1622776602, 0.3166247904, 0.8284271247, 0.5825756950, 0.4721359550};
  const double v = (module + 1) * steps[k];
  return v - std::floor(v);
}

struct ModuleTemplate {
  double amp, freq, flux_amp, damping, igbt_amp, droop, mod_i_ratio, cb_i_ratio, igbt_phase, cb_v_level;
};

ModuleTemplate module_template(const GeneratorConfig& cfg, std::uint32_t m) {
  const double a = cfg.amplitude_spread;
  const double f = cfg.frequency_spread;
  return {
      1.0 + a * (module_coordinate(m, 0) - 0.5),
      1.0 + f * (module_coordinate(m, 1) - 0.5),
      0.6 * (1.0 + a * (module_coordinate(m, 2) - 0.5)),
      1.0 + 1.5 * module_coordinate(m, 3),
      0.5 * (1.0 + a * (module_coordinate(m, 4) - 0.5)),
      0.06 + 0.08 * module_coordinate(m, 5),
      0.6 + 0.3 * module_coordinate(m, 6),
      0.4 + 0.4 * module_coordinate(m, 7),
      two_pi * module_coordinate(m, 8),
      0.8 + 0.4 * module_coordinate(m, 9),
  };
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double trapezoid(double t, double on, double off, double r, double f) {
  return std::min(clamp01((t - on) / r), clamp01((off - t) / f));
}

double positive(double v) { return v > 0.0 ? v : 0.0; }

// Everything a pulse needs beyond time: template, jitter and fault edits.
struct PulseShape {
  ModuleTemplate tpl;
  double amp_jitter = 1.0;
  double shift = 0.0;
  double freq_jitter = 1.0;
  // fault edits; identity values leave the normal pulse bit-identical
  double spike_height = 0.0;
  double spike_center = 0.0;
  std::array<double, 3> flux_gain = {1.0, 1.0, 1.0};
  std::array<double, 3> igbt_gain = {1.0, 1.0, 1.0};
  double igbt_exponent = 1.0;
  double droop_gain = 1.0;
  double cb_edge_gain = 1.0;
  double timing_shift = 0.0;
};

void apply_fault(PulseShape& p, FaultClass f, double s, Rng& rng) {
  const double u = uniform01(rng);
  switch (f) {
    case FaultClass::dvdt:
      // Slope spike on MOD-V's rising ramp.
      p.spike_height = s * 0.25;
      p.spike_center = pulse_on + rise * (0.25 + 0.5 * u);
      break;
    case FaultClass::flux:
      for (std::size_t k = 0; k < 3; ++k) p.flux_gain[k] = 1.0 + s * 0.2 * (0.75 + 0.5 * uniform01(rng));
      break;
    case FaultClass::igbt:
      p.igbt_gain[std::min<std::size_t>(2, static_cast<std::size_t>(u * 3.0))] = 1.0 + s * 0.35;
      break;
    case FaultClass::driver:
      p.igbt_exponent = 1.0 + s * 0.8;
      break;
    case FaultClass::scr:
      p.droop_gain = 1.0 + s * 0.8;
      p.cb_edge_gain = 1.0 + s * 1.5;
      break;
    case FaultClass::sns_pps:
      p.timing_shift = s * 0.012 * (u < 0.5 ? -1.0 : 1.0);
      break;
  }
}

void write_pulse(const PulseShape& p, std::size_t T, float* out) {
  const auto& m = p.tpl;
  const double amp = m.amp * p.amp_jitter;
  const double on = pulse_on + p.shift;
  const double off = pulse_off + p.shift;
  const double omega = two_pi * cycles * m.freq * p.freq_jitter;
  for (std::size_t i = 0; i < T; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(T);
    float* row = out + i * channel_count;
    const double envelope = trapezoid(t, on, off, rise, fall);

    const double ts = t - p.timing_shift;
    double v = amp * trapezoid(ts, on, off, rise, fall);
    if (p.spike_height != 0.0) {
      const double d = (t - p.spike_center - p.shift) * static_cast<double>(T) / 3.0;
      v += p.spike_height * amp * std::exp(-0.5 * d * d);
    }
    row[mod_v] = static_cast<float>(v);
    row[mod_i] = static_cast<float>(amp * m.mod_i_ratio * trapezoid(ts, on + 0.01, off, 0.05, fall));

    const double cb_edge = 0.06 * p.cb_edge_gain;
    row[cb_i] = static_cast<float>(amp * m.cb_i_ratio * trapezoid(t, on, off, cb_edge, cb_edge));
    const double droop = m.droop * p.droop_gain;
    double cbv = 1.0;
    if (t >= on && t <= off) cbv = 1.0 - droop * (t - on) / (off - on);
    else if (t > off) cbv = 1.0 - droop * std::exp(-(t - off) / 0.05);
    row[cb_v] = static_cast<float>(m.cb_v_level * cbv);

    const double decay = envelope * std::exp(-m.damping * std::max(t - on, 0.0));
    for (std::size_t k = 0; k < 3; ++k) {
      const double phase = two_pi * static_cast<double>(k) / 3.0;
      row[flux_a + k] = static_cast<float>(m.flux_amp * p.amp_jitter * p.flux_gain[k] * decay *
                                           std::sin(omega * (t - on) + phase));
      const double s = std::sin(omega * t + m.igbt_phase + phase);
      const double scale = m.igbt_amp * p.amp_jitter * p.igbt_gain[k] * envelope;
      double plus = positive(s);
      double minus = positive(-s);
      if (p.igbt_exponent != 1.0) {
        plus = std::pow(plus, p.igbt_exponent);
        minus = std::pow(minus, p.igbt_exponent);
      }
      row[igbt_a_pos + 2 * k] = static_cast<float>(scale * plus);
      row[igbt_a_pos_star + 2 * k] = static_cast<float>(scale * minus);
    }
  }
}

void add_noise_and_derivative(double noise_sd, std::uint64_t seed, std::size_t T, float* out) {
  Rng rng(seed);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t c = 0; c < channel_count; ++c) {
      if (c == dv_dt) continue;
      const double e = standard_normal(rng);
      out[i * channel_count + c] = static_cast<float>(out[i * channel_count + c] + noise_sd * e);
    }
  }
  out[dv_dt] = 0.0f;
  for (std::size_t i = 1; i < T; ++i) {
    const double d = static_cast<double>(out[i * channel_count + mod_v]) -
                     static_cast<double>(out[(i - 1) * channel_count + mod_v]);
    out[i * channel_count + dv_dt] = static_cast<float>(dvdt_scale * d);
  }
}

}  // namespace

nn::Tensor render_pulse(const GeneratorConfig& config, std::uint32_t module, Label label, double severity,
                        std::uint64_t seed, std::size_t pulse_index) {
  if (module >= config.module_count) throw DataError("module id " + std::to_string(module) + " out of range");
  if (!(severity >= 0.0)) throw ConfigError("severity must be >= 0");
  const std::size_t T = config.time_steps;
  nn::Tensor out({T, channel_count});

  const bool flatline = !label.is_normal() && std::isinf(severity);
  if (!flatline) {
    PulseShape shape{module_template(config, module)};
    Rng jitter(derive_seed(seed, pulse_index, jitter_stream));
    shape.amp_jitter = 1.0 + 0.004 * standard_normal(jitter);
    shape.shift = 0.0008 * standard_normal(jitter);
    shape.freq_jitter = 1.0 + 0.001 * standard_normal(jitter);
    if (!label.is_normal()) {
      Rng fault(derive_seed(seed, pulse_index, fault_stream));
      apply_fault(shape, *label.fault, severity, fault);
    }
    write_pulse(shape, T, out.data());
  }
  add_noise_and_derivative(config.noise_sd, derive_seed(seed, pulse_index, noise_stream), T, out.data());
  return out;
}

nn::Tensor render_record(const GeneratorConfig& config, std::uint32_t module, Label label, std::uint64_t seed) {
  const auto layout = default_layout(config.time_steps);
  const std::size_t T = config.time_steps;
  nn::Tensor record({layout.record_length(), channel_count});
  auto place = [&](const nn::Tensor& pulse, std::size_t k) {
    std::copy_n(pulse.data(), T * channel_count, record.data() + (layout.lead + k * layout.period) * channel_count);
  };
  if (label.is_normal()) {
    for (std::size_t k = 0; k < layout.pulses; ++k) place(render_pulse(config, module, label, 0.0, seed, k), k);
  } else {
    const double s = config.severity[static_cast<std::size_t>(*label.fault)];
    place(render_pulse(config, module, label, s, seed, 0), 0);
    // The fault pulse itself trips the modulator; the third window stays idle.
    place(render_pulse(config, module, label, std::numeric_limits<double>::infinity(), seed, 1), 1);
  }
  return record;
}

nn::Tensor extract_macropulses(const nn::Tensor& raw, const PulseLayout& layout, ExtractMode mode) {
  if (raw.rank() != 2) throw ShapeError("raw record must be time x channels, got " + nn::shape_string(raw.dims()));
  if (layout.pulse_length == 0 || layout.pulses == 0) throw ConfigError("pulse layout must be non-empty");
  const std::size_t length = raw.dim(0);
  const std::size_t channels = raw.dim(1);
  if (length < layout.lead + layout.pulse_length) {
    throw DataError("record of " + std::to_string(length) + " steps is too short for one pulse of " +
                    std::to_string(layout.pulse_length) + " after a lead of " + std::to_string(layout.lead));
  }
  std::size_t count = 1;
  if (mode == ExtractMode::normal) {
    count = 0;
    for (std::size_t k = 0; k < layout.pulses; ++k) {
      if (layout.lead + k * layout.period + layout.pulse_length <= length) ++count;
    }
  }
  const std::size_t block = layout.pulse_length * channels;
  nn::Tensor out({count, layout.pulse_length, channels});
  for (std::size_t k = 0; k < count; ++k) {
    std::copy_n(raw.data() + (layout.lead + k * layout.period) * channels, block, out.data() + k * block);
  }
  return out;
}

std::uint64_t record_seed(const GeneratorConfig& config, std::uint32_t module, Label label, std::size_t record) {
  return derive_seed(config.seed, (static_cast<std::uint64_t>(module) << 8) | static_cast<std::uint64_t>(label.code()),
                     record);
}

namespace {

// Largest-remainder apportionment of `total` by `shares`.
std::array<std::size_t, fault_class_count> apportion(std::size_t total,
                                                     const std::array<double, fault_class_count>& shares) {
  std::array<std::size_t, fault_class_count> counts{};
  std::array<double, fault_class_count> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < fault_class_count; ++k) {
    const double exact = shares[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  while (assigned < total) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < fault_class_count; ++k) {
      if (remainder[k] > remainder[best]) best = k;
    }
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  return counts;
}

}  // namespace

WaveformSet generate(const GeneratorConfig& config) {
  config.validate();
  const std::size_t T = config.time_steps;
  const std::size_t block = T * channel_count;
  const auto layout = default_layout(T);
  const auto fault_counts = apportion(config.fault_samples, config.fault_mix);

  WaveformSet out;
  out.channel_names = canonical_channel_names();
  std::vector<float> values;
  auto append = [&](const float* src, std::uint32_t module, Label label) {
    values.insert(values.end(), src, src + block);
    out.sample_ids.push_back(out.module_ids.size());
    out.module_ids.push_back(module);
    out.labels.push_back(label);
  };

  for (std::uint32_t m = 0; m < config.module_count; ++m) {
    std::size_t produced = 0;
    for (std::size_t r = 0; produced < config.normals_per_module; ++r) {
      const auto record = render_record(config, m, Label::normal(), record_seed(config, m, Label::normal(), r));
      const auto pulses = extract_macropulses(record, layout, ExtractMode::normal);
      for (std::size_t k = 0; k < pulses.dim(0) && produced < config.normals_per_module; ++k, ++produced) {
        append(pulses.data() + k * block, m, Label::normal());
      }
    }
  }
  for (std::size_t c = 0; c < fault_class_count; ++c) {
    const Label label = Label::of(all_fault_classes[c]);
    for (std::size_t j = 0; j < fault_counts[c]; ++j) {
      const auto m = static_cast<std::uint32_t>((j + 3 * c) % config.module_count);
      const auto record = render_record(config, m, label, record_seed(config, m, label, j));
      const auto pulse = extract_macropulses(record, layout, ExtractMode::prefault);
      append(pulse.data(), m, label);
    }
  }
  if (out.module_ids.empty()) throw ConfigError("generator configuration produces no samples");
  out.data = nn::Tensor({out.module_ids.size(), T, channel_count}, std::move(values));
  return out;
}

// ---- preprocessing ----------------------------------------------------------

std::pair<WaveformSet, ChannelStats> standardize(const WaveformSet& data, const std::optional<ChannelStats>& given) {
  data.validate();
  const std::size_t C = data.channels();
  const std::size_t rows = data.size() * data.time_steps();
  ChannelStats stats;
  if (given) {
    stats = *given;
    if (stats.mean.size() != C || stats.sd.size() != C || stats.constant.size() != C) {
      throw ShapeError("channel statistics do not match " + std::to_string(C) + " channels");
    }
  } else {
    stats.mean.assign(C, 0.0);
    stats.sd.assign(C, 0.0);
    stats.constant.assign(C, false);
    const float* x = data.data.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < C; ++c) stats.mean[c] += x[r * C + c];
    }
    for (auto& m : stats.mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        const double d = x[r * C + c] - stats.mean[c];
        stats.sd[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      stats.sd[c] = std::sqrt(stats.sd[c] / static_cast<double>(rows));
      stats.constant[c] = !(stats.sd[c] > 1e-12 * std::max(1.0, std::abs(stats.mean[c])));
    }
  }
  WaveformSet out = data;
  float* y = out.data.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      y[r * C + c] = stats.constant[c] ? 0.0f : static_cast<float>((y[r * C + c] - stats.mean[c]) / stats.sd[c]);
    }
  }
  return {std::move(out), std::move(stats)};
}

DatasetSplit split(const WaveformSet& data, const SplitFractions& f, std::uint64_t seed) {
  data.validate();
  for (double v : {f.train, f.validation, f.test}) {
    if (!(v >= 0.0) || v > 1.0) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (!(f.train > 0.0)) throw ConfigError("training fraction must be positive");

  std::map<std::pair<std::uint32_t, std::int32_t>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < data.size(); ++i) strata[{data.module_ids[i], data.labels[i].code()}].push_back(i);

  std::vector<std::size_t> train, validation, test;
  std::map<std::int32_t, std::pair<std::size_t, std::size_t>> abnormal_progress;  // class -> (seen, to validation)
  for (auto& [key, rows] : strata) {
    Rng rng(derive_seed(seed, key.first, static_cast<std::uint64_t>(key.second)));
    for (std::size_t i = rows.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(rows[i - 1], rows[std::min(j, i - 1)]);
    }
    const double n = static_cast<double>(rows.size());
    std::size_t n_train = 0, n_val = 0;
    if (key.second == 0) {
      n_train = static_cast<std::size_t>(std::llround(n * f.train));
      n_val = std::min(rows.size() - std::min(n_train, rows.size()),
                       static_cast<std::size_t>(std::llround(n * f.validation)));
      if (n_train == 0) {
        throw DataError("stratum (module " + std::to_string(key.first) + ", normal) with " +
                        std::to_string(rows.size()) + " samples is too small to split");
      }
      n_train = std::min(n_train, rows.size());
    } else {
      const double held = f.validation + f.test;
      if (held <= 0.0) throw ConfigError("abnormal samples need a validation or test share");
      // Rounded cumulatively per class: abnormal strata are often singletons,
      // and rounding each one alone would send all of them to one side.
      auto& [seen, assigned] = abnormal_progress[key.second];
      seen += rows.size();
      const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(seen) * f.validation / held));
      n_val = std::min(rows.size(), target - std::min(target, assigned));
      assigned += n_val;
    }
    train.insert(train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    validation.insert(validation.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train),
                      rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    test.insert(test.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), rows.end());
  }
  auto take = [&](std::vector<std::size_t>& rows) {
    std::sort(rows.begin(), rows.end());
    if (rows.empty()) {
      WaveformSet empty;
      empty.channel_names = data.channel_names;
      return empty;
    }
    return data.subset(rows);
  };
  return {take(train), take(validation), take(test)};
}

// ---- I/O -------------------------------------------------------------------

std::string encode_waveforms(const WaveformSet& data) {
  data.validate();
  std::ostringstream os(std::ios::binary);
  os.write("MWTS", 4);
  io::write_le<std::uint32_t>(os, tensor_file_version);
  io::write_le<std::uint32_t>(os, 3);
  for (auto d : data.data.dims()) io::write_le<std::uint64_t>(os, d);
  for (const auto& name : data.channel_names) io::write_string(os, name);
  for (auto m : data.module_ids) io::write_le<std::uint32_t>(os, m);
  for (const auto& l : data.labels) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.code()));
  for (auto id : data.sample_ids) io::write_le<std::uint64_t>(os, id);
  io::write_floats(os, data.data.values());
  return os.str();
}

WaveformSet decode_waveforms(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::expect_magic(is, "MWTS", "waveform file");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != tensor_file_version) throw DataError("unsupported waveform file version " + std::to_string(version));
  if (io::read_le<std::uint32_t>(is) != 3) throw DataError("waveform file must hold a rank-3 tensor");
  nn::Dims dims(3);
  for (auto& d : dims) d = io::read_le<std::uint64_t>(is);
  const std::size_t n = dims[0];
  const auto count = nn::element_count(dims);
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || count * 4 > bytes.size()) {
    throw DataError("waveform file dims " + nn::shape_string(dims) + " inconsistent with file size");
  }
  WaveformSet out;
  for (std::size_t c = 0; c < dims[2]; ++c) out.channel_names.push_back(io::read_string(is, 1024));
  out.module_ids.resize(n);
  for (auto& m : out.module_ids) m = io::read_le<std::uint32_t>(is);
  out.labels.resize(n);
  for (auto& l : out.labels) l = Label::from_code(static_cast<std::int32_t>(io::read_le<std::uint32_t>(is)));
  out.sample_ids.resize(n);
  for (auto& id : out.sample_ids) id = io::read_le<std::uint64_t>(is);
  out.data = nn::Tensor(dims);
  io::read_floats(is, out.data.values());
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after waveform data");
  out.validate();
  return out;
}

void save_waveforms(const std::filesystem::path& path, const WaveformSet& data) {
  const auto bytes = encode_waveforms(data);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

WaveformSet load_waveforms(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open waveform file " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return decode_waveforms(buf.str());
}

void write_metadata_csv(const std::filesystem::path& path, const WaveformSet& data) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "sample_id,module,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    os << data.sample_ids[i] << ',' << data.module_ids[i] << ',' << data.labels[i].name() << '\n';
  }
}

}  // namespace modwatch::data
