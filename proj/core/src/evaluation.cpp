#include "modwatch/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>

#include "modwatch/error.hpp"
#include "modwatch/parallel.hpp"
#include "modwatch/random.hpp"

namespace modwatch::eval {

using data::Label;
using data::WaveformSet;
using nn::Tensor;

// ---- Detector ------------------------------------------------------------------

Detector Detector::conditional(model::ModelSpec spec, nn::ModelParameters params) {
  if (spec.mode != model::Mode::cvae) throw ConfigError("a conditional detector needs a cvae model");
  Detector d(std::move(spec));
  d.model_.check_parameters(params);
  d.shared_ = std::move(params);
  return d;
}

Detector Detector::per_module(model::ModelSpec spec, std::map<std::uint32_t, nn::ModelParameters> params) {
  if (spec.mode != model::Mode::vae) throw ConfigError("a per-module detector needs vae models");
  if (params.empty()) throw ConfigError("per-module detector without models");
  Detector d(std::move(spec));
  for (const auto& [m, p] : params) d.model_.check_parameters(p);
  d.per_module_ = std::move(params);
  return d;
}

const nn::ModelParameters& Detector::params_for(std::uint32_t module) const {
  if (shared_) {
    if (module >= model_.spec().module_count) {
      throw DataError("unseen module id " + std::to_string(module) + " for a model trained on " +
                      std::to_string(model_.spec().module_count) + " modules");
    }
    return *shared_;
  }
  const auto it = per_module_.find(module);
  if (it == per_module_.end()) throw DataError("no single-module model for module id " + std::to_string(module));
  return it->second;
}

std::vector<std::uint32_t> Detector::modules() const {
  std::vector<std::uint32_t> out;
  if (shared_) {
    for (std::uint32_t m = 0; m < model_.spec().module_count; ++m) out.push_back(m);
  } else {
    for (const auto& [m, p] : per_module_) out.push_back(m);
  }
  return out;
}

// ---- scoring -------------------------------------------------------------------

std::vector<double> channel_mse(std::span<const float> x, std::span<const float> rec, std::size_t T, std::size_t C) {
  if (x.size() != T * C || rec.size() != T * C) throw ShapeError("channel_mse: size mismatch");
  std::vector<double> out(C, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double d = static_cast<double>(x[t * C + c]) - static_cast<double>(rec[t * C + c]);
      out[c] += d * d;
    }
  }
  for (auto& v : out) v /= static_cast<double>(T);
  return out;
}

namespace {

struct WorkItem {
  const nn::ModelParameters* params;
  std::vector<std::size_t> rows;
};

std::vector<WorkItem> plan(const Detector& detector, const WaveformSet& data, std::size_t batch_size) {
  data.validate();
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::map<const nn::ModelParameters*, std::vector<std::size_t>> groups;
  std::vector<const nn::ModelParameters*> order;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto* p = &detector.params_for(data.module_ids[i]);
    auto& g = groups[p];
    if (g.empty()) order.push_back(p);
    g.push_back(i);
  }
  std::vector<WorkItem> items;
  for (const auto* p : order) {
    const auto& rows = groups[p];
    for (std::size_t b = 0; b < rows.size(); b += batch_size) {
      items.push_back({p, {rows.begin() + static_cast<std::ptrdiff_t>(b),
                           rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), b + batch_size))}});
    }
  }
  return items;
}

AnomalyScore make_score(const WaveformSet& data, std::size_t row, std::span<const float> x,
                        std::span<const float> rec) {
  AnomalyScore s;
  s.sample_id = data.sample_ids[row];
  s.module = data.module_ids[row];
  s.label = data.labels[row];
  s.channels = channel_mse(x, rec, data.time_steps(), data.channels());
  s.aggregate = std::accumulate(s.channels.begin(), s.channels.end(), 0.0) / static_cast<double>(s.channels.size());
  return s;
}

// Latent noise for draw k of each listed sample, independent of batching.
Tensor draw_noise(const WaveformSet& data, std::span<const std::size_t> rows, std::size_t latent, std::uint64_t seed,
                  std::size_t draw) {
  Tensor eps({rows.size(), latent});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Rng rng(derive_seed(seed, draw, data.sample_ids[rows[r]]));
    for (std::size_t j = 0; j < latent; ++j) eps[r * latent + j] = static_cast<float>(standard_normal(rng));
  }
  return eps;
}

std::vector<std::uint32_t> conditions(const Detector& d, const WaveformSet& data, std::span<const std::size_t> rows) {
  return d.is_conditional() ? data.modules(rows) : std::vector<std::uint32_t>{};
}

// Calls sink(draw, reconstruction) for every latent draw of a batch.
template <typename Sink>
void sample_reconstructions(const Detector& detector, const WaveformSet& data, const WorkItem& item, const Tensor& x,
                            std::size_t draws, std::uint64_t seed, Sink&& sink) {
  const auto& model = detector.model();
  const auto mods = conditions(detector, data, item.rows);
  const auto dist = model.encode(x, mods, *item.params);
  const std::size_t latent = model.spec().latent_dim;
  Tensor z(dist.mu.dims());
  for (std::size_t k = 0; k < draws; ++k) {
    const auto eps = draw_noise(data, item.rows, latent, seed, k);
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = dist.mu[i] + std::exp(0.5f * dist.logvar[i]) * eps[i];
    }
    sink(k, model.decode(z, mods, *item.params));
  }
}

}  // namespace

std::vector<AnomalyScore> score(const Detector& detector, const WaveformSet& data, const ScoreOptions& options) {
  if (options.mode == ScoreMode::sampled && options.draws == 0) throw ConfigError("sampled scoring needs draws >= 1");
  const auto items = plan(detector, data, options.batch_size);
  std::vector<AnomalyScore> out(data.size());
  const std::size_t block = data.time_steps() * data.channels();
  parallel_for(items.size(), options.jobs, [&](std::size_t w) {
    const auto& item = items[w];
    const Tensor x = data.batch(item.rows);
    Tensor rec;
    if (options.mode == ScoreMode::deterministic) {
      rec = detector.model().reconstruct(x, conditions(detector, data, item.rows), *item.params,
                                         model::LatentNoise::zero());
    } else {
      std::vector<double> sum(x.size(), 0.0);
      sample_reconstructions(detector, data, item, x, options.draws, options.seed, [&](std::size_t, const Tensor& r) {
        for (std::size_t i = 0; i < r.size(); ++i) sum[i] += r[i];
      });
      rec = Tensor(x.dims());
      for (std::size_t i = 0; i < sum.size(); ++i) rec[i] = static_cast<float>(sum[i] / static_cast<double>(options.draws));
    }
    for (std::size_t r = 0; r < item.rows.size(); ++r) {
      out[item.rows[r]] = make_score(data, item.rows[r], x.values().subspan(r * block, block),
                                     rec.values().subspan(r * block, block));
    }
  });
  return out;
}

std::vector<std::vector<AnomalyScore>> score_replicas(const Detector& detector, const WaveformSet& data,
                                                      std::size_t replicas, std::uint64_t seed, std::size_t jobs) {
  if (replicas == 0) throw ConfigError("score replicas needs at least one draw");
  const auto items = plan(detector, data, 32);
  std::vector<std::vector<AnomalyScore>> out(replicas, std::vector<AnomalyScore>(data.size()));
  const std::size_t block = data.time_steps() * data.channels();
  parallel_for(items.size(), jobs, [&](std::size_t w) {
    const auto& item = items[w];
    const Tensor x = data.batch(item.rows);
    sample_reconstructions(detector, data, item, x, replicas, seed, [&](std::size_t k, const Tensor& rec) {
      for (std::size_t r = 0; r < item.rows.size(); ++r) {
        out[k][item.rows[r]] = make_score(data, item.rows[r], x.values().subspan(r * block, block),
                                          rec.values().subspan(r * block, block));
      }
    });
  });
  return out;
}

// ---- ROC / AUC -------------------------------------------------------------------

double auc(std::span<const double> normal, std::span<const double> abnormal) {
  if (normal.empty() || abnormal.empty()) throw DataError("AUC needs at least one normal and one abnormal score");
  std::vector<double> neg(normal.begin(), normal.end());
  std::sort(neg.begin(), neg.end());
  // 2U = 2 * #(a > n) + #(a == n), counted exactly in integers.
  std::uint64_t twice_u = 0;
  for (double a : abnormal) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), a);
    const auto hi = std::upper_bound(lo, neg.end(), a);
    twice_u += 2 * static_cast<std::uint64_t>(lo - neg.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(normal.size()) * static_cast<double>(abnormal.size()));
}

RocCurve roc_auc(std::span<const double> normal, std::span<const double> abnormal) {
  RocCurve curve;
  curve.auc = auc(normal, abnormal);
  curve.negatives = normal.size();
  curve.positives = abnormal.size();
  std::vector<double> neg(normal.begin(), normal.end()), pos(abnormal.begin(), abnormal.end());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::set<double, std::greater<>> thresholds(neg.begin(), neg.end());
  thresholds.insert(pos.begin(), pos.end());
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t fp = 0, tp = 0;
  for (double t : thresholds) {
    while (fp < neg.size() && neg[fp] >= t) ++fp;
    while (tp < pos.size() && pos[tp] >= t) ++tp;
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg.size()),
                            static_cast<double>(tp) / static_cast<double>(pos.size()), t});
  }
  return curve;
}

double false_positive_rate(std::span<const double> normal_scores, double threshold) {
  if (normal_scores.empty()) throw DataError("false positive rate of an empty set");
  const auto flagged = std::count_if(normal_scores.begin(), normal_scores.end(), [&](double s) { return s >= threshold; });
  return static_cast<double>(flagged) / static_cast<double>(normal_scores.size());
}

double pick_threshold(std::span<const double> normal_scores, double budget) {
  if (!(budget > 0.0 && budget <= 1.0)) throw ConfigError("FPR budget must be in (0, 1]");
  if (normal_scores.size() < 10) {
    throw DataError("need at least 10 normal scores to pick a threshold, got " + std::to_string(normal_scores.size()));
  }
  std::vector<double> s(normal_scores.begin(), normal_scores.end());
  for (double v : s) {
    if (!std::isfinite(v)) throw NumericError("non-finite normal score");
  }
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  // Scan distinct values upward; the first with #{>= v} <= budget * n wins.
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0 && s[i] == s[i - 1]) continue;
    const double flagged = static_cast<double>(s.size() - i);
    if (flagged <= budget * n) return s[i];
  }
  return std::nextafter(s.back(), std::numeric_limits<double>::infinity());
}

// ---- summaries -----------------------------------------------------------------

double quantile_midpoint(std::vector<double> v, double p) {
  if (v.empty()) throw DataError("quantile of an empty group");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile level must be in [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return 0.5 * (v[lo] + v[hi]);
}

BoxStats box_stats(std::span<const double> values) {
  if (values.empty()) throw DataError("box statistics of an empty group");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  BoxStats b;
  b.count = v.size();
  b.min = v.front();
  b.max = v.back();
  b.q1 = quantile_midpoint(v, 0.25);
  b.median = quantile_midpoint(v, 0.5);
  b.q3 = quantile_midpoint(v, 0.75);
  b.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return b;
}

std::size_t density_bin(double score) {
  if (!(score > 0.0)) return 0;
  const double pos = (std::log10(score) - density_log10_min) / density_bin_width;
  if (!(pos >= 0.0)) return 0;
  return std::min(density_bins - 1, static_cast<std::size_t>(std::floor(pos)));
}

std::vector<std::size_t> histogram_log10(std::span<const double> values) {
  std::vector<std::size_t> counts(density_bins, 0);
  for (double v : values) ++counts[density_bin(v)];
  return counts;
}

Summary summarize(std::span<const AnomalyScore> scores) {
  Summary out;
  if (scores.empty()) return out;
  out.channels = scores.front().channels.size();
  std::map<GroupKey, std::vector<double>> groups;
  for (const auto& s : scores) {
    if (s.channels.size() != out.channels) throw ShapeError("scores disagree on channel count");
    for (std::size_t c = 0; c < out.channels; ++c) groups[{s.module, c, s.label}].push_back(s.channels[c]);
    groups[{s.module, out.channels, s.label}].push_back(s.aggregate);
  }
  for (const auto& [key, values] : groups) {
    out.box[key] = box_stats(values);
    out.density[key] = histogram_log10(values);
  }
  return out;
}

// ---- AUC tables ------------------------------------------------------------------

namespace {

std::pair<std::vector<double>, std::vector<double>> split_scores(std::span<const AnomalyScore> scores,
                                                                 data::FaultClass fault,
                                                                 std::optional<std::uint32_t> module,
                                                                 std::optional<std::size_t> channel) {
  std::vector<double> neg, pos;
  for (const auto& s : scores) {
    if (module && s.module != *module) continue;
    const double v = channel ? s.channels.at(*channel) : s.aggregate;
    if (s.label.is_normal()) neg.push_back(v);
    else if (*s.label.fault == fault) pos.push_back(v);
  }
  return {neg, pos};
}

std::vector<std::uint32_t> modules_of(std::span<const AnomalyScore> scores) {
  std::set<std::uint32_t> m;
  for (const auto& s : scores) m.insert(s.module);
  return {m.begin(), m.end()};
}

}  // namespace

std::vector<AucCell> auc_table(std::span<const AnomalyScore> scores) {
  std::vector<AucCell> cells;
  const auto modules = modules_of(scores);
  for (auto f : data::all_fault_classes) {
    std::vector<std::optional<std::uint32_t>> scopes{std::nullopt};
    for (auto m : modules) scopes.emplace_back(m);
    for (auto scope : scopes) {
      const auto [neg, pos] = split_scores(scores, f, scope, std::nullopt);
      AucCell cell{f, scope, std::nullopt, pos.size(), neg.size()};
      if (!neg.empty() && !pos.empty()) cell.auc = auc(neg, pos);
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<ChannelAuc> channel_auc_ranking(std::span<const AnomalyScore> scores) {
  std::vector<ChannelAuc> out;
  if (scores.empty()) return out;
  const std::size_t C = scores.front().channels.size();
  for (auto f : data::all_fault_classes) {
    std::vector<ChannelAuc> row;
    for (std::size_t c = 0; c < C; ++c) {
      const auto [neg, pos] = split_scores(scores, f, std::nullopt, c);
      if (neg.empty() || pos.empty()) continue;
      row.push_back({f, c, auc(neg, pos)});
    }
    std::stable_sort(row.begin(), row.end(), [](const ChannelAuc& a, const ChannelAuc& b) { return a.auc > b.auc; });
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

namespace {

std::optional<AucEstimate> estimate(const MethodScores& m, data::FaultClass f, std::uint32_t module) {
  const auto [neg, pos] = split_scores(m.deterministic, f, module, std::nullopt);
  if (neg.empty() || pos.empty()) return std::nullopt;
  AucEstimate e;
  e.auc = auc(neg, pos);
  e.replica_mean = e.auc;
  std::vector<double> aucs;
  for (const auto& rep : m.replicas) {
    const auto [rn, rp] = split_scores(rep, f, module, std::nullopt);
    aucs.push_back(auc(rn, rp));
  }
  e.replicas = aucs.size();
  if (!aucs.empty()) {
    e.replica_mean = std::accumulate(aucs.begin(), aucs.end(), 0.0) / static_cast<double>(aucs.size());
    if (aucs.size() > 1) {
      double ss = 0.0;
      for (double a : aucs) ss += (a - e.replica_mean) * (a - e.replica_mean);
      e.replica_sd = std::sqrt(ss / static_cast<double>(aucs.size() - 1));
    }
  }
  return e;
}

std::vector<std::uint64_t> ids(std::span<const AnomalyScore> s) {
  std::vector<std::uint64_t> out;
  for (const auto& x : s) out.push_back(x.sample_id);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<ComparisonCell> compare_methods(const MethodScores& multi, const MethodScores& single,
                                            std::span<const data::FaultClass> faults,
                                            std::span<const std::uint32_t> modules) {
  if (ids(multi.deterministic) != ids(single.deterministic)) {
    throw DataError("methods must be compared on the identical test set");
  }
  std::vector<ComparisonCell> cells;
  for (auto f : faults) {
    for (auto m : modules) cells.push_back({f, m, estimate(multi, f, m), estimate(single, f, m)});
  }
  return cells;
}

// ---- CSV ---------------------------------------------------------------------------

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << std::setprecision(10);
  return os;
}

std::string channel_label(std::size_t c, std::span<const std::string> names) {
  return c < names.size() ? names[c] : "aggregate";
}

void write_optional(std::ostream& os, const std::optional<double>& v) {
  if (v) os << *v;
  else os << "NA";
}

}  // namespace

void write_scores_csv(const std::filesystem::path& path, std::span<const AnomalyScore> scores,
                      std::span<const std::string> channel_names) {
  auto os = open_csv(path);
  os << "sample,module,label";
  for (const auto& n : channel_names) os << ',' << n;
  os << ",aggregate\n";
  for (const auto& s : scores) {
    os << s.sample_id << ',' << s.module << ',' << s.label.name();
    for (double v : s.channels) os << ',' << v;
    os << ',' << s.aggregate << '\n';
  }
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
  auto os = open_csv(path);
  os << "fpr,tpr,threshold\n";
  for (const auto& p : curve.points) os << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
}

void write_auc_table_csv(const std::filesystem::path& path, std::span<const AucCell> cells) {
  auto os = open_csv(path);
  os << "fault,module,auc,positives,negatives\n";
  for (const auto& c : cells) {
    os << data::fault_name(c.fault) << ',' << (c.module ? std::to_string(*c.module) : "all") << ',';
    write_optional(os, c.auc);
    os << ',' << c.positives << ',' << c.negatives << '\n';
  }
}

void write_boxstats_csv(const std::filesystem::path& path, const Summary& summary,
                        std::span<const std::string> channel_names) {
  auto os = open_csv(path);
  os << "module,channel,label,count,min,q1,median,q3,max,mean\n";
  for (const auto& [k, b] : summary.box) {
    os << k.module << ',' << channel_label(k.channel, channel_names) << ',' << k.label.name() << ',' << b.count << ','
       << b.min << ',' << b.q1 << ',' << b.median << ',' << b.q3 << ',' << b.max << ',' << b.mean << '\n';
  }
}

void write_density_csv(const std::filesystem::path& path, const Summary& summary,
                       std::span<const std::string> channel_names) {
  auto os = open_csv(path);
  os << "module,channel,label,bin_lo_log10,bin_hi_log10,count,density\n";
  for (const auto& [k, counts] : summary.density) {
    const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    for (std::size_t b = 0; b < counts.size(); ++b) {
      const double lo = density_log10_min + density_bin_width * static_cast<double>(b);
      os << k.module << ',' << channel_label(k.channel, channel_names) << ',' << k.label.name() << ',' << lo << ','
         << lo + density_bin_width << ',' << counts[b] << ',' << static_cast<double>(counts[b]) / (n * density_bin_width)
         << '\n';
    }
  }
}

void write_channel_auc_csv(const std::filesystem::path& path, std::span<const ChannelAuc> ranking,
                           std::span<const std::string> channel_names) {
  auto os = open_csv(path);
  os << "fault,rank,channel,auc\n";
  std::map<data::FaultClass, std::size_t> rank;
  for (const auto& r : ranking) {
    os << data::fault_name(r.fault) << ',' << ++rank[r.fault] << ',' << channel_label(r.channel, channel_names) << ','
       << r.auc << '\n';
  }
}

void write_comparison_csv(const std::filesystem::path& path, std::span<const ComparisonCell> cells) {
  auto os = open_csv(path);
  os << "fault,module,auc_multi,auc_multi_replica_mean,auc_multi_sd,auc_single,auc_single_replica_mean,auc_single_sd,"
        "delta\n";
  auto put = [&](const std::optional<AucEstimate>& e) {
    if (e) os << e->auc << ',' << e->replica_mean << ',' << e->replica_sd;
    else os << "NA,NA,NA";
  };
  for (const auto& c : cells) {
    os << data::fault_name(c.fault) << ',' << c.module << ',';
    put(c.multi);
    os << ',';
    put(c.single);
    os << ',';
    write_optional(os, c.delta());
    os << '\n';
  }
}

}  // namespace modwatch::eval
