#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "modwatch/checkpoint.hpp"
#include "modwatch/error.hpp"
#include "modwatch/evaluation.hpp"
#include "modwatch/hash.hpp"
#include "modwatch/landscape.hpp"
#include "modwatch/parallel.hpp"
#include "modwatch/pipeline.hpp"
#include "modwatch/random.hpp"
#include "modwatch/training.hpp"
#include "modwatch/uq.hpp"
#include "modwatch/waveform.hpp"
#include "run_config.hpp"

namespace modwatch::cli {

namespace fs = std::filesystem;

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---- config -> library structs ------------------------------------------------

template <std::size_t N>
std::array<double, N> fixed_list(const RunConfig& c, const std::string& key) {
  const auto v = c.get_doubles(key);
  if (v.size() != N) throw ConfigError(key + " needs " + std::to_string(N) + " values, got " + std::to_string(v.size()));
  std::array<double, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

data::GeneratorConfig generator_config(const RunConfig& c) {
  data::GeneratorConfig g;
  g.module_count = c.get_size("generate.modules");
  g.normals_per_module = c.get_size("generate.samples_per_module");
  g.fault_samples = c.get_size("generate.faults");
  g.time_steps = c.get_size("generate.time_steps");
  g.noise_sd = c.get_double("generate.noise_sd");
  g.amplitude_spread = c.get_double("generate.amplitude_spread");
  g.frequency_spread = c.get_double("generate.frequency_spread");
  g.fault_mix = fixed_list<data::fault_class_count>(c, "generate.fault_mix");
  g.severity = fixed_list<data::fault_class_count>(c, "generate.severity");
  g.seed = c.get_u64("run.seed");
  g.validate();
  return g;
}

data::SplitFractions split_fractions(const RunConfig& c) {
  return {c.get_double("split.train"), c.get_double("split.validation"), c.get_double("split.test")};
}

train::TrainConfig train_config(const RunConfig& c) {
  train::TrainConfig t;
  t.batch_size = c.get_size("train.batch_size");
  t.learning_rate = c.get_double("train.learning_rate");
  t.max_epochs = c.get_size("train.epochs");
  t.patience = c.get_size("train.patience");
  t.eta = c.get_double("train.eta");
  t.seed = c.get_u64("run.seed");
  t.validate();
  return t;
}

model::Mode parse_mode(const std::string& s) {
  if (s == "cvae") return model::Mode::cvae;
  if (s == "vae") return model::Mode::vae;
  throw ConfigError("train.mode must be vae or cvae, not '" + s + "'");
}

std::uint32_t module_count_of(const data::WaveformSet& raw) {
  std::uint32_t m = 0;
  for (auto id : raw.module_ids) m = std::max(m, id + 1);
  return m;
}

model::ModelSpec model_spec(const RunConfig& c, model::Mode mode, const data::WaveformSet& raw) {
  model::ModelSpec s;
  s.mode = mode;
  s.kernels_per_block = c.get_size("model.kernels");
  s.kernel_width = c.get_size("model.kernel_width");
  s.dense_units = c.get_size("model.dense_units");
  s.decoder_dense_units = c.get_size("model.decoder_dense_units");
  s.latent_dim = c.get_size("model.latent_dim");
  s.encoder_blocks = c.get_size("model.encoder_blocks");
  s.decoder_blocks = c.get_size("model.decoder_blocks");
  s.strided_blocks = c.get_size("model.strided_blocks");
  const auto& red = c.get("model.kld_reduction");
  if (red == "batch_mean") {
    s.kld_reduction = nn::KldReduction::batch_mean;
  } else if (red == "batch_sum") {
    s.kld_reduction = nn::KldReduction::batch_sum;
  } else {
    throw ConfigError("model.kld_reduction must be batch_mean or batch_sum");
  }
  s.module_count = module_count_of(raw);
  s.time_steps = raw.time_steps();
  s.channels = raw.channels();
  s.validate();
  return s;
}

std::optional<std::uint32_t> module_choice(const RunConfig& c, const std::string& key) {
  const auto& v = c.get(key);
  if (v == "all") return std::nullopt;
  const auto id = c.get_int(key);
  if (id < 0) throw ConfigError(key + " must be a module id or all");
  return static_cast<std::uint32_t>(id);
}

// ---- data plumbing ----------------------------------------------------------------

data::WaveformSet normals_of(const data::WaveformSet& d, std::optional<std::uint32_t> module = std::nullopt) {
  return d.subset(d.rows_where(module, data::Label::normal()));
}

data::WaveformSet module_rows(const data::WaveformSet& d, std::optional<std::uint32_t> module) {
  if (!module) return d;
  return d.subset(d.rows_where(module, std::nullopt));
}

void require_module(const data::WaveformSet& raw, std::uint32_t m) {
  if (raw.rows_where(m, std::nullopt).empty()) throw DataError("module " + std::to_string(m) + " is not in the dataset");
}

data::WaveformSet select_split(const pipeline::PreparedData& p, const std::string& name) {
  if (name == "test") return p.test;
  if (name == "validation") return p.validation;
  if (name == "train") return p.train;
  if (name == "heldout") return pipeline::held_out(p);
  if (name == "all") return data::concatenate(p.train, pipeline::held_out(p));
  throw ConfigError("unknown split '" + name + "'");
}

// Evenly strided subset of at most `cap` rows (0 = all).
data::WaveformSet cap_rows(const data::WaveformSet& d, std::size_t cap) {
  if (cap == 0 || d.size() <= cap) return d;
  std::vector<std::size_t> rows(cap);
  for (std::size_t i = 0; i < cap; ++i) rows[i] = i * d.size() / cap;
  return d.subset(rows);
}

std::map<std::string, std::string> run_metadata(const RunConfig& c, const pipeline::PreparedData& p,
                                                const std::string& data_sha) {
  std::map<std::string, std::string> m;
  m["data.sha1"] = data_sha;
  m["split.seed"] = std::to_string(p.split_seed);
  const auto fr = split_fractions(c);
  m["split.train"] = exact(fr.train);
  m["split.validation"] = exact(fr.validation);
  m["split.test"] = exact(fr.test);
  pipeline::store_stats(m, p.stats);
  for (const auto& [k, v] : train_config(c).to_key_values()) m["train." + k] = v;
  return m;
}

const std::string& meta(const model::Checkpoint& ck, const std::string& key) {
  const auto it = ck.metadata.find(key);
  if (it == ck.metadata.end()) throw DataError("checkpoint lacks metadata key '" + key + "'");
  return it->second;
}

double meta_double(const model::Checkpoint& ck, const std::string& key) {
  try {
    return std::stod(meta(ck, key));
  } catch (const std::logic_error&) {
    throw DataError("checkpoint metadata '" + key + "' is not a number");
  }
}

std::uint64_t meta_u64(const model::Checkpoint& ck, const std::string& key) {
  try {
    return std::stoull(meta(ck, key));
  } catch (const std::logic_error&) {
    throw DataError("checkpoint metadata '" + key + "' is not an integer");
  }
}

// Rebuilds the checkpoint's split and standardization from the raw dataset and
// insists the statistics agree with the ones stored at training time.
pipeline::PreparedData prepare_for(const model::Checkpoint& ck, const data::WaveformSet& raw) {
  const data::SplitFractions fr{meta_double(ck, "split.train"), meta_double(ck, "split.validation"),
                                meta_double(ck, "split.test")};
  auto p = pipeline::prepare(raw, fr, meta_u64(ck, "split.seed"));
  const auto stored = pipeline::load_stats(ck.metadata);
  if (stored.mean != p.stats.mean || stored.sd != p.stats.sd) {
    throw DataError("dataset does not match the data this checkpoint was trained on");
  }
  return p;
}

struct LoadedModel {
  fs::path path;
  model::Checkpoint checkpoint;
  std::optional<std::uint32_t> module;  // vae checkpoints
};

LoadedModel load_model(const fs::path& path) {
  LoadedModel m{path, model::load_checkpoint(path), std::nullopt};
  if (m.checkpoint.spec.mode == model::Mode::vae) {
    m.module = static_cast<std::uint32_t>(meta_u64(m.checkpoint, "module"));
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << text;
}

// ---- generate ---------------------------------------------------------------------

fs::path do_generate(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const auto g = generator_config(c);
  const auto ds = data::generate(g);
  fs::create_directories(out);
  const auto path = out / "dataset.mwts";
  data::save_waveforms(path, ds);
  data::write_metadata_csv(out / "dataset.csv", ds);
  c.write(out / "config.ini");

  log << "wrote " << ds.size() << " samples (" << g.module_count << " modules, " << ds.channels() << " channels, "
      << ds.time_steps() << " time steps) to " << path.string() << '\n';
  std::map<std::uint32_t, std::array<std::size_t, 1 + data::fault_class_count>> counts;
  for (std::size_t i = 0; i < ds.size(); ++i) ++counts[ds.module_ids[i]][static_cast<std::size_t>(ds.labels[i].code())];
  log << "module normal";
  for (auto f : data::all_fault_classes) log << ' ' << data::fault_name(f);
  log << '\n';
  for (const auto& [m, row] : counts) {
    log << m;
    for (auto n : row) log << ' ' << n;
    log << '\n';
  }
  return path;
}

// ---- train --------------------------------------------------------------------------

struct TrainOutputs {
  std::vector<fs::path> checkpoints;
};

TrainOutputs do_train(const RunConfig& c, const fs::path& data_path, const fs::path& out, std::ostream& log) {
  const auto raw = data::load_waveforms(data_path);
  const auto data_sha = git_blob_sha1_file(data_path);
  const auto mode = parse_mode(c.get("train.mode"));
  const auto module = module_choice(c, "train.module");
  const auto tc = train_config(c);
  const auto jobs = std::max<std::size_t>(1, c.get_size("run.jobs"));
  const auto spec = model_spec(c, mode, raw);
  const auto p = pipeline::prepare(raw, split_fractions(c), c.get_u64("run.seed"));
  train::check_no_leak(p.train, p.validation, p.test);

  fs::create_directories(out);
  c.write(out / "config.ini");
  std::map<std::string, std::string> manifest = run_metadata(c, p, data_sha);
  manifest["data.path"] = fs::absolute(data_path).lexically_normal().string();
  manifest["mode"] = c.get("train.mode");
  for (const auto& [k, v] : spec.to_key_values()) manifest["spec." + k] = v;

  TrainOutputs outputs;
  auto save = [&](const std::string& stem, const train::TrainResult& r, std::optional<std::uint32_t> m,
                  const model::ModelSpec& s) {
    model::Checkpoint ck{s, r.params, run_metadata(c, p, data_sha)};
    ck.metadata["best_epoch"] = std::to_string(r.log.best_epoch);
    if (m) ck.metadata["module"] = std::to_string(*m);
    const auto path = out / (stem + ".mwck");
    const auto bytes = model::encode_checkpoint(ck);
    write_text(path, bytes);
    const auto log_name = m ? "trainlog_module" + std::to_string(*m) + ".csv" : std::string("trainlog.csv");
    r.log.write_csv(out / log_name);
    const auto& last = r.log.epochs.empty() ? train::EpochRecord{} : r.log.epochs.back();
    manifest["checkpoint." + stem + ".sha1"] = git_blob_sha1(bytes);
    manifest["checkpoint." + stem + ".best_epoch"] = std::to_string(r.log.best_epoch);
    manifest["checkpoint." + stem + ".epochs"] = std::to_string(r.log.epochs.size());
    manifest["checkpoint." + stem + ".final_train_total"] = exact(last.train.total);
    manifest["checkpoint." + stem + ".final_val_total"] = exact(last.validation.total);
    log << stem << ": " << r.log.epochs.size() << " epochs, best epoch " << r.log.best_epoch << ", final train "
        << short_num(last.train.total) << ", final validation " << short_num(last.validation.total) << " ("
        << short_num(r.log.wall_seconds) << " s)\n";
    outputs.checkpoints.push_back(path);
  };

  if (mode == model::Mode::cvae) {
    if (module) throw ConfigError("cvae mode trains one model over all modules; use train.module = all");
    const model::Cvae model(spec);
    const auto r = train::train(model, tc, p.train, normals_of(p.validation));
    save("cvae", r, std::nullopt, spec);
  } else {
    if (module) require_module(raw, *module);
    const auto runs =
        train::train_single_module_suite(spec, tc, module_rows(p.train, module), normals_of(p.validation), jobs);
    for (const auto& run : runs) save("vae_module" + std::to_string(run.module), run.result, run.module, spec);
  }
  train::write_manifest(out / "manifest.txt", manifest);
  return outputs;
}

// ---- eval ------------------------------------------------------------------------------

struct MethodResult {
  std::string name;
  std::vector<eval::AnomalyScore> scores;
  std::vector<std::vector<eval::AnomalyScore>> replicas;
  std::vector<eval::AucCell> table;
};

struct EvalOutputs {
  std::vector<MethodResult> methods;
  std::vector<eval::ComparisonCell> comparison;
};

std::vector<double> aggregates(std::span<const eval::AnomalyScore> s, std::optional<bool> normal = std::nullopt) {
  std::vector<double> out;
  for (const auto& a : s) {
    if (!normal || a.label.is_normal() == *normal) out.push_back(a.aggregate);
  }
  return out;
}

MethodResult evaluate_method(const RunConfig& c, const std::string& name, const eval::Detector& detector,
                             const pipeline::PreparedData& p, const fs::path& out, bool with_replicas,
                             std::ostream& log) {
  const auto jobs = std::max<std::size_t>(1, c.get_size("run.jobs"));
  const auto seed = c.get_u64("run.seed");
  eval::ScoreOptions opts;
  const auto& mode = c.get("eval.mode");
  if (mode == "sampled") {
    opts.mode = eval::ScoreMode::sampled;
  } else if (mode != "deterministic") {
    throw ConfigError("eval.mode must be deterministic or sampled");
  }
  opts.draws = c.get_size("eval.draws");
  opts.seed = derive_seed(seed, 0x5c0e);
  opts.jobs = jobs;

  const auto eval_set = select_split(p, c.get("eval.split"));
  MethodResult r;
  r.name = name;
  r.scores = eval::score(detector, eval_set, opts);

  // Threshold from validation normals; tiny validation splits fall back to training normals.
  std::string source = "validation";
  auto calibration = normals_of(p.validation);
  if (calibration.size() < 10) {
    source = "train";
    calibration = p.train;
  }
  const auto calib_scores = aggregates(eval::score(detector, calibration, opts));
  const double budget = c.get_double("eval.fpr_budget");
  const double threshold = eval::pick_threshold(calib_scores, budget);
  const auto normal = aggregates(r.scores, true);
  const auto abnormal = aggregates(r.scores, false);
  const double tpr = abnormal.empty() ? 0.0
                                      : static_cast<double>(std::count_if(abnormal.begin(), abnormal.end(),
                                                                          [&](double s) { return s >= threshold; })) /
                                            static_cast<double>(abnormal.size());

  fs::create_directories(out);
  const auto& names = eval_set.channel_names;
  eval::write_scores_csv(out / "scores.csv", r.scores, names);
  r.table = eval::auc_table(r.scores);
  eval::write_auc_table_csv(out / "auc_table.csv", r.table);
  for (auto f : data::all_fault_classes) {
    std::vector<double> pos;
    for (const auto& s : r.scores) {
      if (s.label == data::Label::of(f)) pos.push_back(s.aggregate);
    }
    if (pos.empty() || normal.empty()) continue;
    eval::write_roc_csv(out / ("roc_" + std::string(data::fault_slug(f)) + ".csv"), eval::roc_auc(normal, pos));
  }
  const auto summary = eval::summarize(r.scores);
  eval::write_boxstats_csv(out / "boxstats.csv", summary, names);
  eval::write_density_csv(out / "density.csv", summary, names);
  eval::write_channel_auc_csv(out / "channel_auc.csv", eval::channel_auc_ranking(r.scores), names);
  {
    std::ostringstream os;
    os << "method,source,fpr_budget,threshold,calibration_fpr,eval_fpr,eval_tpr\n"
       << name << ',' << source << ',' << exact(budget) << ',' << exact(threshold) << ','
       << exact(eval::false_positive_rate(calib_scores, threshold)) << ','
       << (normal.empty() ? std::string() : exact(eval::false_positive_rate(normal, threshold))) << ','
       << exact(tpr) << '\n';
    write_text(out / "threshold.csv", os.str());
  }
  if (with_replicas) r.replicas = eval::score_replicas(detector, eval_set, c.get_size("eval.replicas"), opts.seed, jobs);

  log << name << ": " << r.scores.size() << " samples, threshold " << short_num(threshold) << " (" << source
      << " normals), TPR " << short_num(tpr) << '\n';
  for (const auto& cell : r.table) {
    if (cell.module || !cell.auc) continue;
    log << "  AUC " << data::fault_name(cell.fault) << ' ' << std::fixed << std::setprecision(3) << *cell.auc
        << std::defaultfloat << std::setprecision(6) << '\n';
  }
  return r;
}

EvalOutputs do_eval(const RunConfig& c, const std::vector<fs::path>& model_paths, const fs::path& data_path,
                    const fs::path& out, std::ostream& log) {
  if (model_paths.empty()) throw ConfigError("eval needs at least one --model checkpoint");
  const auto raw = data::load_waveforms(data_path);
  std::optional<LoadedModel> multi;
  std::vector<LoadedModel> singles;
  for (const auto& path : model_paths) {
    auto m = load_model(path);
    if (m.module) {
      singles.push_back(std::move(m));
    } else if (multi) {
      throw ConfigError("eval takes at most one cvae checkpoint");
    } else {
      multi = std::move(m);
    }
  }
  fs::create_directories(out);
  c.write(out / "config.ini");
  const bool compare = multi && !singles.empty();

  EvalOutputs outputs;
  if (multi) {
    const auto p = prepare_for(multi->checkpoint, raw);
    const auto det = eval::Detector::conditional(multi->checkpoint.spec, multi->checkpoint.params);
    outputs.methods.push_back(evaluate_method(c, "multi", det, p, out / "multi", compare, log));
  }
  if (!singles.empty()) {
    const auto& first = singles.front().checkpoint;
    std::map<std::uint32_t, nn::ModelParameters> params;
    for (const auto& s : singles) {
      if (!(s.checkpoint.spec == first.spec)) throw ConfigError("single-module checkpoints disagree on the model spec");
      for (const auto* key : {"split.seed", "split.train", "split.validation", "split.test", "data.sha1"}) {
        if (meta(s.checkpoint, key) != meta(first, key)) {
          throw ConfigError("single-module checkpoints come from different runs (" + std::string(key) + ")");
        }
      }
      if (!params.emplace(*s.module, s.checkpoint.params).second) {
        throw ConfigError("two checkpoints for module " + std::to_string(*s.module));
      }
    }
    const auto p = prepare_for(first, raw);
    const auto det = eval::Detector::per_module(first.spec, std::move(params));
    outputs.methods.push_back(evaluate_method(c, "single", det, p, out / "single", compare, log));
  }
  if (compare) {
    const auto& m = outputs.methods[0];
    const auto& s = outputs.methods[1];
    std::set<std::uint32_t> module_set;
    for (const auto& a : m.scores) module_set.insert(a.module);
    const std::vector<std::uint32_t> modules(module_set.begin(), module_set.end());
    const std::vector<data::FaultClass> faults(data::all_fault_classes.begin(), data::all_fault_classes.end());
    outputs.comparison = eval::compare_methods({m.scores, m.replicas}, {s.scores, s.replicas}, faults, modules);
    eval::write_comparison_csv(out / "comparison.csv", outputs.comparison);
    std::size_t wins = 0, cells = 0;
    for (const auto& cell : outputs.comparison) {
      if (const auto d = cell.delta()) {
        ++cells;
        wins += *d >= 0.0;
      }
    }
    log << "comparison: multi >= single in " << wins << " of " << cells << " cells\n";
  }
  return outputs;
}

// ---- landscape ---------------------------------------------------------------------------

landscape::GridOptions grid_options(const RunConfig& c) {
  landscape::GridOptions g;
  g.resolution = c.get_size("landscape.resolution");
  g.range = c.get_double("landscape.range");
  g.jobs = std::max<std::size_t>(1, c.get_size("run.jobs"));
  g.eta = c.get_double("train.eta");
  return g;
}

std::uint64_t direction_seed(const RunConfig& c) { return derive_seed(c.get_u64("run.seed"), 0x4c53); }

void write_depth_sweep(const RunConfig& c, const model::ModelSpec& base, const data::WaveformSet& train_set,
                       const data::WaveformSet& validation_set, const data::WaveformSet& surface_data,
                       const fs::path& out, std::ostream& log) {
  landscape::DepthSweepOptions opts;
  opts.depths = c.get_sizes("landscape.depths");
  for (auto d : opts.depths) landscape::with_depth(base, d);  // shape errors before any training
  opts.grid = grid_options(c);
  opts.direction_seed = direction_seed(c);
  opts.jobs = opts.grid.jobs;
  const auto results = landscape::depth_sweep(base, train_config(c), train_set, validation_set, surface_data, opts);
  fs::create_directories(out);
  std::vector<std::pair<std::string, landscape::ConvexityReport>> rows;
  for (const auto& r : results) {
    const auto tag = "depth" + std::to_string(r.depth);
    landscape::write_grid_csv(out / ("grid_" + tag + ".csv"), r.grid);
    r.log.write_csv(out / ("trainlog_" + tag + ".csv"));
    rows.emplace_back(tag, r.report);
    log << tag << ": PSD fraction " << short_num(r.report.psd_fraction) << ", loss range [" << short_num(r.report.loss_min)
        << ", " << short_num(r.report.loss_max) << "], center " << short_num(r.report.center_loss) << '\n';
  }
  landscape::write_report_csv(out / "report.csv", rows);
}

void do_landscape(const RunConfig& c, const fs::path& model_path, const fs::path& data_path, const fs::path& out,
                  bool sweep, std::ostream& log) {
  const auto raw = data::load_waveforms(data_path);
  const auto m = load_model(model_path);
  const auto p = prepare_for(m.checkpoint, raw);
  auto module = module_choice(c, "landscape.module");
  if (m.module) {
    if (module && *module != *m.module) throw ConfigError("landscape.module differs from the checkpoint's module");
    module = m.module;
  }
  if (module) require_module(raw, *module);
  const auto& split_name = c.get("landscape.split");
  data::WaveformSet base;
  if (split_name == "train") {
    base = p.train;
  } else if (split_name == "validation") {
    base = normals_of(p.validation);
  } else {
    throw ConfigError("landscape.split must be train or validation");
  }
  const auto surface = cap_rows(module_rows(base, module), c.get_size("landscape.max_samples"));
  if (surface.size() == 0) throw DataError("no samples for the landscape");
  fs::create_directories(out);
  c.write(out / "config.ini");

  if (sweep) {
    write_depth_sweep(c, m.checkpoint.spec, module_rows(p.train, module), normals_of(p.validation, module), surface,
                      out, log);
    return;
  }
  const model::Cvae model(m.checkpoint.spec);
  const auto& params = m.checkpoint.params;
  const auto seed = direction_seed(c);
  const auto gamma = landscape::random_direction(params, derive_seed(seed, 1), "gamma");
  const auto nu = landscape::random_direction(params, derive_seed(seed, 2), "nu");
  const auto opts = grid_options(c);
  auto grid = landscape::evaluate_grid(model, params, gamma, nu, surface, opts);
  grid.tag = module ? "module" + std::to_string(*module) : std::string("all");
  landscape::write_grid_csv(out / "grid.csv", grid);
  const auto loss = train::evaluate_loss(model, params, surface, opts.eta, opts.batch_size, std::nullopt);
  log << "landscape over " << surface.size() << " samples: center loss " << exact(grid.center_loss)
      << ", training loss " << exact(loss.total) << '\n';
  if (opts.resolution >= 5) {
    const auto report = landscape::convexity_report(grid);
    landscape::write_report_csv(out / "report.csv", {{grid.tag, report}});
    log << "PSD fraction " << short_num(report.psd_fraction) << ", center minimal "
        << (report.center_minimal ? "yes" : "no") << '\n';
  }
}

// ---- uq -------------------------------------------------------------------------------------

void do_uq(const RunConfig& c, const fs::path& model_path, const fs::path& data_path, const fs::path& out,
           std::ostream& log) {
  const auto raw = data::load_waveforms(data_path);
  const auto m = load_model(model_path);
  const auto p = prepare_for(m.checkpoint, raw);
  const auto& split_name = c.get("uq.split");
  if (split_name != "test" && split_name != "heldout") throw ConfigError("uq.split must be test or heldout");
  const auto pool = normals_of(select_split(p, split_name));
  const auto draws = c.get_size("uq.draws");
  const auto examples = c.get_size("uq.examples");
  const auto seed = c.get_u64("run.seed");
  const auto jobs = std::max<std::size_t>(1, c.get_size("run.jobs"));
  const model::Cvae model(m.checkpoint.spec);
  const bool conditional = !m.module;

  std::vector<std::uint32_t> modules;
  if (m.module) {
    modules.push_back(*m.module);
  } else {
    const std::set<std::uint32_t> s(pool.module_ids.begin(), pool.module_ids.end());
    modules.assign(s.begin(), s.end());
  }
  fs::create_directories(out);
  c.write(out / "config.ini");
  for (auto module : modules) {
    auto rows = pool.rows_where(module, std::nullopt);
    if (rows.empty()) throw DataError("no held-out normals for module " + std::to_string(module));
    Rng rng(derive_seed(seed, 0x7571, module));
    for (std::size_t i = rows.size(); i > 1; --i) {
      const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
      std::swap(rows[i - 1], rows[j]);
    }
    rows.resize(std::min(rows.size(), examples));

    std::vector<uq::ReplicaSet> sets(rows.size());
    std::vector<nn::Tensor> observed(rows.size());
    parallel_for(rows.size(), jobs, [&](std::size_t k) {
      const std::size_t row[] = {rows[k]};
      const auto x = pool.batch(row);
      observed[k] = x.reshaped({pool.time_steps(), pool.channels()});
      const auto cond = conditional ? std::optional<std::uint32_t>(module) : std::nullopt;
      sets[k] = uq::replicate(model, m.checkpoint.params, x, cond, draws, derive_seed(seed, pool.sample_ids[rows[k]]));
    });
    std::vector<uq::ChannelCalibration> table;
    double mean_area = 0.0;
    for (std::size_t ch = 0; ch < pool.channels(); ++ch) {
      const auto curve = uq::channel_miscalibration(sets, observed, ch);
      table.push_back({pool.channel_names[ch], curve.area, curve.degenerate});
      mean_area += curve.area / static_cast<double>(pool.channels());
    }
    uq::write_uq_csv(out / ("uq_" + std::to_string(module) + ".csv"), table, draws, seed);
    uq::write_bands_csv(out / ("bands_" + std::to_string(pool.sample_ids[rows.front()]) + ".csv"), sets.front(),
                        pool.channel_names);
    log << "module " << module << ": " << rows.size() << " examples x " << draws << " draws, mean MA "
        << short_num(mean_area) << '\n';
  }
}

// ---- reproduce ---------------------------------------------------------------------------------

void copy_into(const fs::path& from, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  fs::copy_file(from, dir / name, fs::copy_options::overwrite_existing);
}

void write_bundle_manifest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "MANIFEST") files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::ostringstream os;
  os << "# path size sha1\n";
  for (const auto& f : files) {
    os << f.generic_string() << ' ' << fs::file_size(root / f) << ' ' << git_blob_sha1_file(root / f) << '\n';
  }
  write_text(root / "MANIFEST", os.str());
}

// Small-model settings for the depth sweep at desk scale; explicit values win.
const std::map<std::string, std::string>& appendix_a_desk() {
  static const std::map<std::string, std::string> d = {
      {"generate.modules", "4"}, {"generate.faults", "0"},          {"train.epochs", "30"},
      {"landscape.resolution", "9"}, {"landscape.max_samples", "64"},
  };
  return d;
}

void do_reproduce(RunConfig c, const std::string& experiment, bool force, const fs::path& out, std::ostream& log) {
  if (experiment != "figs" && experiment != "appendixA" && experiment != "appendixB") {
    throw ConfigError("--paper-experiment must be figs, appendixA or appendixB");
  }
  if (c.get("run.scale") == "paper" && !force) {
    throw ConfigError("paper scale takes many hours per experiment; pass --force to run it anyway");
  }
  if (c.get("run.scale") == "desk" && experiment == "appendixA") c.apply_defaults(appendix_a_desk());
  fs::create_directories(out);
  c.write(out / "config.ini");
  const auto data_path = do_generate(c, out / "data", log);

  if (experiment == "figs") {
    RunConfig mc = c, sc = c;
    mc.set("train.mode", "cvae");
    mc.set("train.module", "all");
    sc.set("train.mode", "vae");
    sc.set("train.module", "all");
    const auto multi = do_train(mc, data_path, out / "models" / "multi", log);
    const auto single = do_train(sc, data_path, out / "models" / "single", log);
    std::vector<fs::path> models = multi.checkpoints;
    models.insert(models.end(), single.checkpoints.begin(), single.checkpoints.end());
    const auto ev = do_eval(c, models, data_path, out / "eval", log);
    for (const auto* method : {"multi", "single"}) {
      const auto dir = out / "eval" / method;
      const std::string m = method;
      copy_into(dir / "boxstats.csv", out / "fig5", "boxstats_" + m + ".csv");
      copy_into(dir / "scores.csv", out / "fig5", "scores_" + m + ".csv");
      copy_into(dir / "density.csv", out / "fig6", "density_" + m + ".csv");
      copy_into(dir / "auc_table.csv", out / "fig7", "auc_table_" + m + ".csv");
      copy_into(dir / "channel_auc.csv", out / "fig7", "channel_auc_" + m + ".csv");
      for (auto f : data::all_fault_classes) {
        const auto roc = dir / ("roc_" + std::string(data::fault_slug(f)) + ".csv");
        if (fs::exists(roc)) copy_into(roc, out / "fig7", "roc_" + std::string(data::fault_slug(f)) + "_" + m + ".csv");
      }
    }
    copy_into(out / "eval" / "comparison.csv", out / "fig8", "comparison.csv");

    // Landscapes of both methods on the module where the single-module model does worst.
    std::map<std::uint32_t, std::pair<double, std::size_t>> single_auc;
    for (const auto& cell : ev.comparison) {
      if (!cell.single) continue;
      auto& [sum, n] = single_auc[cell.module];
      sum += cell.single->auc;
      ++n;
    }
    if (!single_auc.empty()) {
      auto worst = single_auc.begin();
      for (auto it = single_auc.begin(); it != single_auc.end(); ++it) {
        if (it->second.first / it->second.second < worst->second.first / worst->second.second) worst = it;
      }
      const auto module = std::to_string(worst->first);
      RunConfig lc = c;
      lc.set("landscape.module", module);
      do_landscape(lc, multi.checkpoints.front(), data_path, out / "fig9", false, log);
      do_landscape(lc, out / "models" / "single" / ("vae_module" + module + ".mwck"), data_path, out / "fig10", false,
                   log);
    }
  } else if (experiment == "appendixA") {
    const auto raw = data::load_waveforms(data_path);
    const auto p = pipeline::prepare(raw, split_fractions(c), c.get_u64("run.seed"));
    const auto spec = model_spec(c, model::Mode::cvae, raw);
    const auto surface = cap_rows(p.train, c.get_size("landscape.max_samples"));
    write_depth_sweep(c, spec, p.train, normals_of(p.validation), surface, out / "appendixA", log);
  } else {
    RunConfig mc = c;
    mc.set("train.mode", "cvae");
    mc.set("train.module", "all");
    const auto multi = do_train(mc, data_path, out / "models" / "multi", log);
    do_uq(c, multi.checkpoints.front(), data_path, out / "appendixB", log);
  }
  write_bundle_manifest(out);
  log << "bundle written to " << out.string() << '\n';
}

// ---- argument plumbing -------------------------------------------------------------------------

// Collects --config / --set / per-key flags for one subcommand.
class Options {
 public:
  Options(CLI::App& app, const std::string& name, const std::string& help) : sub_(app.add_subcommand(name, help)) {
    sub_->add_option("--config", config_file_, "INI config file")->check(CLI::ExistingFile);
    sub_->add_option("--set", sets_, "override a config key: section.key=value")->take_all();
    sub_->add_option("--out", out_, "output directory")->required();
    bind("--seed", "run.seed");
    bind("--jobs", "run.jobs");
    bind("--scale", "run.scale");
  }

  CLI::App* app() const { return sub_; }
  const std::string& out() const { return out_; }

  void bind(const std::string& flag, const std::string& key) {
    std::string help;
    for (const auto& k : RunConfig::keys()) {
      if (k.name == key) help = k.help + " [" + key + ", default " + k.fallback + "]";
    }
    bindings_.emplace_back(sub_->add_option(flag, storage_[key], help), key);
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_file_.empty()) c.load_file(config_file_);
    for (const auto& s : sets_) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [opt, key] : bindings_) {
      if (opt->count() > 0) c.set(key, storage_.at(key));
    }
    c.resolve();
    return c;
  }

 private:
  CLI::App* sub_;
  std::string config_file_;
  std::vector<std::string> sets_;
  std::string out_;
  std::map<std::string, std::string> storage_;
  std::vector<std::pair<CLI::Option*, std::string>> bindings_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Waveform anomaly detection with (conditional) variational autoencoders", "modwatch"};
  app.require_subcommand(1);

  Options gen(app, "generate", "generate a synthetic waveform dataset");
  for (const auto& [flag, key] : std::vector<std::pair<std::string, std::string>>{
           {"--modules", "generate.modules"},
           {"--samples-per-module", "generate.samples_per_module"},
           {"--faults", "generate.faults"},
           {"--time-steps", "generate.time_steps"},
           {"--noise-sd", "generate.noise_sd"},
           {"--fault-mix", "generate.fault_mix"},
           {"--severity", "generate.severity"}}) {
    gen.bind(flag, key);
  }

  std::string data_path;
  std::vector<std::string> model_paths;
  bool depth_sweep = false;
  std::string experiment;
  bool force = false;

  const std::vector<std::pair<std::string, std::string>> model_flags = {
      {"--kernels", "model.kernels"},         {"--latent-dim", "model.latent_dim"},
      {"--dense-units", "model.dense_units"}, {"--strided-blocks", "model.strided_blocks"},
      {"--encoder-blocks", "model.encoder_blocks"}, {"--decoder-blocks", "model.decoder_blocks"}};
  const std::vector<std::pair<std::string, std::string>> train_flags = {
      {"--epochs", "train.epochs"},           {"--batch-size", "train.batch_size"},
      {"--learning-rate", "train.learning_rate"}, {"--patience", "train.patience"},
      {"--eta", "train.eta"}};

  Options tr(app, "train", "train a cvae over all modules or one vae per module");
  tr.app()->add_option("--data", data_path, "dataset (.mwts)")->required()->check(CLI::ExistingFile);
  tr.bind("--mode", "train.mode");
  tr.bind("--module", "train.module");
  for (const auto& [f, k] : model_flags) tr.bind(f, k);
  for (const auto& [f, k] : train_flags) tr.bind(f, k);

  Options ev(app, "eval", "score held-out data, pick the threshold and write metrics");
  ev.app()->add_option("--data", data_path, "dataset (.mwts)")->required()->check(CLI::ExistingFile);
  ev.app()->add_option("--model", model_paths, "checkpoint(s): one cvae and/or vae_module*.mwck")
      ->required()
      ->check(CLI::ExistingFile);
  ev.bind("--fpr-budget", "eval.fpr_budget");
  ev.bind("--draws", "eval.draws");
  ev.bind("--replicas", "eval.replicas");
  ev.bind("--split", "eval.split");
  ev.bind("--score-mode", "eval.mode");

  Options ls(app, "landscape", "filter-normalized 2-D loss surface around a checkpoint");
  ls.app()->add_option("--data", data_path, "dataset (.mwts)")->required()->check(CLI::ExistingFile);
  ls.app()->add_option("--model", model_paths, "checkpoint")->required()->expected(1)->check(CLI::ExistingFile);
  ls.app()->add_flag("--depth-sweep", depth_sweep, "retrain at each landscape.depths and report every surface");
  ls.bind("--res", "landscape.resolution");
  ls.bind("--range", "landscape.range");
  ls.bind("--depths", "landscape.depths");
  ls.bind("--max-samples", "landscape.max_samples");
  ls.bind("--split", "landscape.split");
  ls.bind("--module", "landscape.module");
  for (const auto& [f, k] : train_flags) ls.bind(f, k);

  Options uqo(app, "uq", "latent-sampling uncertainty and miscalibration area");
  uqo.app()->add_option("--data", data_path, "dataset (.mwts)")->required()->check(CLI::ExistingFile);
  uqo.app()->add_option("--model", model_paths, "checkpoint")->required()->expected(1)->check(CLI::ExistingFile);
  uqo.bind("--draws", "uq.draws");
  uqo.bind("--examples", "uq.examples");
  uqo.bind("--split", "uq.split");

  Options rep(app, "reproduce", "run a complete experiment bundle from generated data");
  rep.app()->add_option("--paper-experiment", experiment, "figs | appendixA | appendixB")->required();
  rep.app()->add_flag("--force", force, "allow paper scale (hours of compute)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    if (gen.app()->parsed()) {
      do_generate(gen.resolve(), gen.out(), out);
    } else if (tr.app()->parsed()) {
      do_train(tr.resolve(), data_path, tr.out(), out);
    } else if (ev.app()->parsed()) {
      do_eval(ev.resolve(), {model_paths.begin(), model_paths.end()}, data_path, ev.out(), out);
    } else if (ls.app()->parsed()) {
      do_landscape(ls.resolve(), model_paths.front(), data_path, ls.out(), depth_sweep, out);
    } else if (uqo.app()->parsed()) {
      do_uq(uqo.resolve(), model_paths.front(), data_path, uqo.out(), out);
    } else if (rep.app()->parsed()) {
      do_reproduce(rep.resolve(), experiment, force, rep.out(), out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::data);
  }
  return 0;
}

}  // namespace modwatch::cli
