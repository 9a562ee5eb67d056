// Acceptance runner: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "gradcheck.hpp"
#include "modwatch/checkpoint.hpp"
#include "modwatch/evaluation.hpp"
#include "modwatch/hash.hpp"
#include "modwatch/landscape.hpp"
#include "modwatch/pipeline.hpp"
#include "modwatch/random.hpp"
#include "modwatch/training.hpp"
#include "modwatch/uq.hpp"
#include "modwatch/waveform.hpp"

namespace fs = std::filesystem;
namespace data = modwatch::data;
namespace eval = modwatch::eval;
namespace landscape = modwatch::landscape;
namespace model = modwatch::model;
namespace nn = modwatch::nn;
namespace pipeline = modwatch::pipeline;
namespace train = modwatch::train;
namespace uq = modwatch::uq;
namespace ref = modwatch::testing;
using modwatch::Rng;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); }

data::WaveformSet normals_of(const data::WaveformSet& d, std::optional<std::uint32_t> module = std::nullopt) {
  return d.subset(d.rows_where(module, data::Label::normal()));
}

std::pair<std::vector<double>, std::vector<double>> split_by_label(std::span<const eval::AnomalyScore> scores,
                                                                   std::optional<data::FaultClass> fault) {
  std::vector<double> n, a;
  for (const auto& s : scores) {
    if (s.label.is_normal()) {
      n.push_back(s.aggregate);
    } else if (!fault || s.label == data::Label::of(*fault)) {
      a.push_back(s.aggregate);
    }
  }
  return {n, a};
}

// ---- 1 ------------------------------------------------------------------------

Outcome gradient_correctness() {
  using namespace modwatch::nn;
  const auto t0 = Clock::now();
  constexpr int trials = 100;
  constexpr double tol = 1e-3;
  constexpr double h = 1e-3;
  Rng rng(1001);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& op, const ref::GradCheck& r) { worst[op] = std::max(worst[op], r.rel_error); };

  for (int t = 0; t < trials; ++t) {
    const std::uint64_t s = 7000 + t;
    {
      const std::size_t b = pick(rng, 1, 2), time = pick(rng, 3, 10), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
      const std::size_t width = 2 * pick(rng, 0, 2) + 1, stride = pick(rng, 1, 3);
      auto padding = (t % 2) ? Padding::same : Padding::valid;
      if (time < width) padding = Padding::same;
      note("conv1d", ref::check_op(
                         [&](Tape& tp, std::span<const Var> v) { return conv1d(tp, v[0], v[1], v[2], stride, padding); },
                         {ref::random_tensor({b, time, ci}, rng), ref::random_tensor({co, ci, width}, rng),
                          ref::random_tensor({co}, rng)},
                         {true, true, true}, s, h));
    }
    const std::size_t b = pick(rng, 1, 3), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
    note("dense", ref::check_op([&](Tape& tp, std::span<const Var> v) { return dense(tp, v[0], v[1], v[2]); },
                                {ref::random_tensor({b, in}, rng), ref::random_tensor({out, in}, rng),
                                 ref::random_tensor({out}, rng)},
                                {true, true, true}, s, h));
    note("relu", ref::check_op([&](Tape& tp, std::span<const Var> v) { return relu(tp, v[0]); },
                               {ref::away_from_zero({b, in}, rng)}, {true}, s, h));
    note("reshape", ref::check_op([&](Tape& tp, std::span<const Var> v) { return reshape(tp, v[0], {in, b}); },
                                  {ref::random_tensor({b, in}, rng)}, {true}, s, h));
    const std::size_t g = pick(rng, 1, 4), time = pick(rng, 1, 5), factor = pick(rng, 1, 3);
    note("concat", ref::check_op([&](Tape& tp, std::span<const Var> v) { return concat_features(tp, v[0], v[1]); },
                                 {ref::random_tensor({b, in}, rng), ref::random_tensor({b, g}, rng)}, {true, true}, s,
                                 h));
    note("upsample", ref::check_op([&](Tape& tp, std::span<const Var> v) { return upsample_time(tp, v[0], factor); },
                                   {ref::random_tensor({b, time, g}, rng)}, {true}, s, h));
    note("add", ref::check_op([&](Tape& tp, std::span<const Var> v) { return add(tp, v[0], v[1]); },
                              {ref::random_tensor({b, in}, rng), ref::random_tensor({b, in}, rng)}, {true, true}, s, h));
    note("mul", ref::check_op([&](Tape& tp, std::span<const Var> v) { return mul(tp, v[0], v[1]); },
                              {ref::random_tensor({b, in}, rng), ref::random_tensor({b, in}, rng)}, {true, true}, s, h));
    note("scale", ref::check_op([&](Tape& tp, std::span<const Var> v) { return scale(tp, v[0], -1.75f); },
                                {ref::random_tensor({b, in}, rng)}, {true}, s, h));
    note("sum", ref::check_op([&](Tape& tp, std::span<const Var> v) { return sum(tp, v[0]); },
                              {ref::random_tensor({b, in}, rng)}, {true}, s, h));
    note("weighted_add",
         ref::check_op([&](Tape& tp, std::span<const Var> v) { return weighted_add(tp, v[0], v[1], 0.3f); },
                       {ref::random_tensor({1}, rng), ref::random_tensor({1}, rng)}, {true, true}, s, h));
    const std::size_t l = pick(rng, 1, 5);
    note("mse", ref::check_op([&](Tape& tp, std::span<const Var> v) { return mse(tp, v[0], v[1]); },
                              {ref::random_tensor({b, l}, rng), ref::random_tensor({b, l}, rng)}, {true, true}, s, h));
    for (auto red : {KldReduction::batch_mean, KldReduction::batch_sum}) {
      note("kld", ref::check_op([&](Tape& tp, std::span<const Var> v) { return gaussian_kld(tp, v[0], v[1], red); },
                                {ref::random_tensor({b, l}, rng), ref::random_tensor({b, l}, rng)}, {true, true}, s,
                                h));
    }
    const auto eps = ref::random_tensor({b, l}, rng);
    note("reparameterize",
         ref::check_op([&](Tape& tp, std::span<const Var> v) { return reparameterize(tp, v[0], v[1], eps); },
                       {ref::random_tensor({b, l}, rng), ref::random_tensor({b, l}, rng)}, {true, true}, s, h));
  }
  double op_worst = 0.0;
  std::string op_name;
  for (const auto& [name, e] : worst) {
    if (e >= op_worst) {
      op_worst = e;
      op_name = name;
    }
  }

  // Full desk CVAE, 2-sample batch, biases moved off the ReLU kinks.
  const model::Cvae desk(model::ModelSpec::desk(model::Mode::cvae));
  auto params = desk.make_parameters(11);
  for (std::size_t s = 1; s < params.slot_count(); s += 2) {
    params.tensor(s) = ref::random_tensor(params.tensor(s).dims(), rng, 0.1);
  }
  const auto x = ref::random_tensor({2, desk.spec().time_steps, desk.spec().channels}, rng);
  const std::vector<std::uint32_t> mods = {0, 7};
  const auto full = ref::check_model(desk, params, x, mods, 1.0, 3, 4);
  const double secs = seconds_since(t0);

  const bool pass = op_worst <= tol && full.worst <= tol && secs < 120.0;
  return {pass, fmt("%zu ops x %d trials worst rel err %.2e (%s); desk cvae %zu slots worst %.2e; %.1f s", worst.size(),
                    trials, op_worst, op_name.c_str(), full.per_slot.size(), full.worst, secs)};
}

// ---- 2 ------------------------------------------------------------------------

Outcome loss_identities() {
  model::LatentDistribution prior;
  prior.mu = nn::Tensor({3, 8}, 0.0f);
  prior.logvar = nn::Tensor({3, 8}, 0.0f);
  const double at_prior = model::kld_gaussian(prior);

  Rng rng(2002);
  double min_kld = INFINITY;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t b = pick(rng, 1, 4), l = pick(rng, 1, 16);
    model::LatentDistribution d;
    d.mu = ref::random_tensor({b, l}, rng, 2.0);
    d.logvar = ref::random_tensor({b, l}, rng, 2.0);
    min_kld = std::min({min_kld, model::kld_gaussian(d), model::kld_gaussian(d, nn::KldReduction::batch_sum)});
  }

  // total recomposed outside the library from encode/decode and closed forms.
  const model::Cvae desk(model::ModelSpec::desk(model::Mode::cvae));
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    const auto params = desk.make_parameters(40 + t);
    const std::size_t b = 3;
    const auto x = ref::random_tensor({b, desk.spec().time_steps, desk.spec().channels}, rng);
    const std::vector<std::uint32_t> mods = {std::uint32_t(t), 3, 14};
    const auto noise = model::LatentNoise::seeded(90 + t);
    const double eta = 0.25 * t;
    const auto l = desk.loss(x, mods, params, eta, noise);

    const auto dist = desk.encode(x, mods, params);
    const auto eps = noise.draw(b, desk.spec().latent_dim);
    nn::Tensor z(dist.mu.dims());
    double kld = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double mu = dist.mu[i], lv = dist.logvar[i];
      z[i] = static_cast<float>(mu + std::exp(0.5 * lv) * eps[i]);
      kld += -0.5 * (1.0 + lv - mu * mu - std::exp(lv));
    }
    kld /= static_cast<double>(b);
    const auto recon = desk.decode(z, mods, params);
    double se = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) se += std::pow(double(x[i]) - recon[i], 2);
    const double external = se / static_cast<double>(x.size()) + eta * kld;
    worst = std::max(worst, std::abs(l.total - external) / std::abs(external));
    worst = std::max(worst, std::abs(l.total - (l.reconstruction + eta * l.kld)) / std::abs(l.total));
  }
  const bool pass = at_prior == 0.0 && min_kld >= 0.0 && worst <= 1e-6;
  return {pass, fmt("kld at prior %.3g; min kld over 1000 draws %.3g; total recomposition rel err %.2e", at_prior,
                    min_kld, worst)};
}

// ---- 3 ------------------------------------------------------------------------

Outcome auc_oracle() {
  Rng rng(3003);
  std::size_t mismatches = 0, tied_sets = 0;
  for (int t = 0; t < 200; ++t) {
    // Scores from a small integer pool so ties are frequent.
    const std::size_t pool = pick(rng, 2, 30);
    std::vector<double> n(20), a(20);
    for (auto& v : n) v = static_cast<double>(rng() % pool) * 0.5;
    for (auto& v : a) v = static_cast<double>(rng() % pool) * 0.5 + (t % 3);
    double wins = 0.0;
    bool tie = false;
    for (double p : a) {
      for (double q : n) {
        if (p > q) wins += 1.0;
        if (p == q) {
          wins += 0.5;
          tie = true;
        }
      }
    }
    tied_sets += tie;
    const double brute = wins / 400.0;
    if (eval::roc_auc(n, a).auc != brute || eval::auc(n, a) != brute) ++mismatches;
  }
  return {mismatches == 0, fmt("200 sets of 20+20 (%zu with ties): %zu mismatches", tied_sets, mismatches)};
}

// ---- 4 ------------------------------------------------------------------------

Outcome threshold_budget() {
  Rng rng(4004);
  constexpr double budget = 0.10;
  std::size_t own_violations = 0, fresh_violations = 0;
  double fresh_lo = 1.0, fresh_hi = 0.0;
  for (int t = 0; t < 100; ++t) {
    // Log-normal scores with a random location and spread, as reconstruction errors are.
    const double loc = -6.0 + 4.0 * modwatch::uniform01(rng), spread = 0.2 + 1.5 * modwatch::uniform01(rng);
    auto draw = [&] {
      std::vector<double> v(1000);
      for (auto& s : v) s = std::exp(loc + spread * modwatch::standard_normal(rng));
      return v;
    };
    const auto calib = draw();
    const double th = eval::pick_threshold(calib, budget);
    own_violations += eval::false_positive_rate(calib, th) > budget;
    const double fresh = eval::false_positive_rate(draw(), th);
    fresh_lo = std::min(fresh_lo, fresh);
    fresh_hi = std::max(fresh_hi, fresh);
    fresh_violations += std::abs(fresh - budget) > 0.05;
  }
  const bool pass = own_violations == 0 && fresh_violations == 0;
  return {pass, fmt("budget %.2f: own-input violations %zu/100; fresh FPR range [%.3f, %.3f], outside +/-0.05: %zu",
                    budget, own_violations, fresh_lo, fresh_hi, fresh_violations)};
}

// ---- 5 ------------------------------------------------------------------------

Outcome synthetic_detection() {
  const auto t0 = Clock::now();
  const data::GeneratorConfig g;  // default synthetic set
  const auto p = pipeline::prepare(data::generate(g), {}, 1);
  const model::Cvae m(model::ModelSpec::desk(model::Mode::cvae));
  train::TrainConfig tc;
  tc.max_epochs = 100;
  tc.patience = 100;
  const auto r = train::train(m, tc, p.train, normals_of(p.validation));
  const auto scores = eval::score(eval::Detector::conditional(m.spec(), r.params), p.test, {});

  std::size_t strong = 0;
  double sns = 0.0;
  std::string per_class;
  for (auto f : data::all_fault_classes) {
    const auto [n, a] = split_by_label(scores, f);
    const double auc = eval::auc(n, a);
    strong += auc >= 0.75;
    if (f == data::FaultClass::sns_pps) sns = auc;
    per_class += fmt(" %s=%.3f", std::string(data::fault_name(f)).c_str(), auc);
  }
  const double secs = seconds_since(t0);
  const bool pass = sns >= 0.90 && strong >= 4 && secs < 15 * 60;
  return {pass, fmt("test AUC%s; >=0.75 in %zu/6; best epoch %zu; %.0f s", per_class.c_str(), strong, r.log.best_epoch,
                    secs)};
}

// ---- 6 ------------------------------------------------------------------------

Outcome multi_vs_single() {
  constexpr std::size_t modules = 6;
  constexpr std::uint32_t sparse = 0;  // the module limited to 5 training normals
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    data::GeneratorConfig g;
    g.module_count = modules;
    g.fault_samples = 10 * modules;
    g.seed = seed;
    const auto p = pipeline::prepare(data::generate(g), {}, seed);
    std::vector<std::size_t> keep;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < p.train.size(); ++i) {
      if (p.train.module_ids[i] != sparse || seen++ < 5) keep.push_back(i);
    }
    const auto train_set = p.train.subset(keep);
    const auto val = normals_of(p.validation);
    train::TrainConfig tc;
    tc.max_epochs = 100;
    tc.seed = seed;

    auto mspec = model::ModelSpec::desk(model::Mode::cvae);
    mspec.module_count = modules;
    const auto multi = train::train(model::Cvae(mspec), tc, train_set, val);
    auto sspec = model::ModelSpec::desk(model::Mode::vae);
    sspec.module_count = modules;
    const auto single = train::train(model::Cvae(sspec), tc, train_set.subset(train_set.rows_where(sparse, std::nullopt)),
                                     normals_of(p.validation, sparse));

    const auto held = pipeline::held_out(p);
    const auto target = held.subset(held.rows_where(sparse, std::nullopt));
    const auto sm = eval::score(eval::Detector::conditional(mspec, multi.params), target, {});
    const auto ss = eval::score(eval::Detector::per_module(sspec, {{sparse, single.params}}), target, {});
    const auto [mn, ma] = split_by_label(sm, std::nullopt);
    const auto [sn, sa] = split_by_label(ss, std::nullopt);
    const double am = eval::auc(mn, ma), as = eval::auc(sn, sa);
    wins += am >= as;
    detail += fmt(" s%llu %.3f/%.3f", static_cast<unsigned long long>(seed), am, as);
  }
  return {wins >= 4, fmt("multi >= single in %zu/5 seeds (multi/single AUC:%s)", wins, detail.c_str())};
}

// ---- 7 ------------------------------------------------------------------------

Outcome landscape_exactness() {
  data::GeneratorConfig g;
  g.module_count = 4;
  g.fault_samples = 0;
  const auto p = pipeline::prepare(data::generate(g), {}, 7);
  auto spec = model::ModelSpec::desk(model::Mode::cvae);
  spec.module_count = 4;
  const model::Cvae m(spec);
  train::TrainConfig tc;
  tc.max_epochs = 5;
  const auto trained = train::train(m, tc, p.train, normals_of(p.validation)).params;

  const auto gamma = landscape::random_direction(trained, 71, "gamma");
  const auto nu = landscape::random_direction(trained, 72, "nu");
  landscape::GridOptions opt;
  opt.resolution = 9;
  const auto grid = landscape::evaluate_grid(m, trained, gamma, nu, p.train, opt);
  const auto direct = train::evaluate_loss(m, trained, p.train, opt.eta, opt.batch_size, std::nullopt);
  const bool center_exact = grid.center_loss == direct.total && grid.at(4, 4) == direct.total;
  opt.jobs = 8;
  const auto threaded = landscape::evaluate_grid(m, trained, gamma, nu, p.train, opt);
  const bool workers_exact = threaded.loss == grid.loss;

  double worst = 0.0;
  bool bias_zero = true;
  for (const auto* d : {&gamma, &nu}) {
    for (std::size_t l = 0; l < trained.layer_count(); ++l) {
      const auto& w = trained.layer(l).weights;
      const auto& dk = d->tensors[nn::ModelParameters::kernel_slot(l)];
      const std::size_t size = w.unit_size();
      for (std::size_t u = 0; u < w.unit_count(); ++u) {
        double wn = 0.0, dn = 0.0;
        for (std::size_t i = 0; i < size; ++i) {
          wn += double(w.kernel[u * size + i]) * w.kernel[u * size + i];
          dn += double(dk[u * size + i]) * dk[u * size + i];
        }
        worst = std::max(worst, std::abs(std::sqrt(dn) - std::sqrt(wn)) / std::max(std::sqrt(wn), 1e-30));
      }
      for (float v : d->tensors[nn::ModelParameters::bias_slot(l)].values()) bias_zero = bias_zero && v == 0.0f;
    }
  }
  const bool pass = center_exact && workers_exact && worst <= 1e-6 && bias_zero;
  return {pass, fmt("center %.17g vs training loss %.17g (%s); 1 vs 8 workers %s; unit norm rel err %.2e", grid.center_loss,
                    direct.total, center_exact ? "bitwise" : "differs", workers_exact ? "bitwise" : "differ", worst)};
}

// ---- 8 ------------------------------------------------------------------------

Outcome depth_trend() {
  std::size_t monotone = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    data::GeneratorConfig g;
    g.module_count = 4;
    g.fault_samples = 0;
    g.seed = seed;
    const auto p = pipeline::prepare(data::generate(g), {}, seed);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < std::min<std::size_t>(64, p.train.size()); ++i) rows.push_back(i);
    auto base = model::ModelSpec::desk(model::Mode::cvae);
    base.module_count = 4;
    train::TrainConfig tc;
    tc.max_epochs = 30;
    tc.seed = seed;
    landscape::DepthSweepOptions o;
    o.depths = {3, 10, 30};
    o.grid.resolution = 9;
    o.direction_seed = seed;
    const auto results = landscape::depth_sweep(base, tc, p.train, p.validation, p.train.subset(rows), o);
    bool ok = true;
    detail += fmt(" s%llu", static_cast<unsigned long long>(seed));
    for (std::size_t k = 0; k < results.size(); ++k) {
      detail += fmt("%c%.3f", k ? '/' : ' ', results[k].report.psd_fraction);
      if (k > 0 && results[k].report.psd_fraction > results[k - 1].report.psd_fraction) ok = false;
    }
    monotone += ok;
  }
  return {monotone >= 4, fmt("PSD fraction non-increasing over depths 3/10/30 in %zu/5 seeds:%s", monotone,
                             detail.c_str())};
}

// ---- 9 ------------------------------------------------------------------------

Outcome uq_calibration() {
  Rng rng(9009);
  std::vector<float> mean, sd, obs;
  for (int i = 0; i < 10000; ++i) {
    const double m = 3.0 * modwatch::standard_normal(rng), s = 0.1 + modwatch::uniform01(rng);
    mean.push_back(float(m));
    sd.push_back(float(s));
    obs.push_back(float(m + s * modwatch::standard_normal(rng)));
  }
  const double calibrated = uq::miscalibration_area(mean, sd, obs).area;

  // Bounds under arbitrary miscalibration.
  double lo = INFINITY, hi = -INFINITY;
  for (int t = 0; t < 200; ++t) {
    const double factor = std::pow(10.0, -4.0 + 8.0 * modwatch::uniform01(rng));
    const double shift = 5.0 * modwatch::standard_normal(rng);
    std::vector<float> s2(sd), m2(mean);
    for (std::size_t i = 0; i < s2.size(); ++i) {
      s2[i] = float(s2[i] * factor);
      m2[i] = float(m2[i] + shift);
    }
    const double a = uq::miscalibration_area(m2, s2, obs).area;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }

  // Replicas: determinism, merging of adjacent draw ranges, SD convergence.
  const model::Cvae desk(model::ModelSpec::desk(model::Mode::cvae));
  const auto params = desk.make_parameters(3);
  const nn::Tensor mu = ref::random_tensor({1, desk.spec().latent_dim}, rng);
  const nn::Tensor sigma({1, desk.spec().latent_dim}, 1.0f);
  const std::vector<std::uint32_t> mod = {2};
  const auto r1000 = uq::replicate_latent(desk, params, mu, sigma, mod, 1000, 5);
  const auto again = uq::replicate_latent(desk, params, mu, sigma, mod, 1000, 5);
  const auto r500 = uq::replicate_latent(desk, params, mu, sigma, mod, 500, 5);
  const auto rest = uq::replicate_latent(desk, params, mu, sigma, mod, 500, 5, 500);
  const auto merged = uq::merge(r500, rest);
  bool exact = true;
  for (std::size_t k = 0; k < 1000; ++k) {
    exact = exact && nn::bitwise_equal(r1000.replicas[k], again.replicas[k]) &&
            nn::bitwise_equal(r1000.replicas[k], merged.replicas[k]);
  }
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < r500.sd.size(); ++i) {
    diff += std::pow(double(r500.sd[i]) - r1000.sd[i], 2);
    norm += double(r1000.sd[i]) * r1000.sd[i];
  }
  const double sd_gap = std::sqrt(diff / norm);

  const bool pass = calibrated < 0.02 && lo >= 0.0 && hi <= 0.5 && exact && sd_gap < 0.1;
  return {pass, fmt("calibrated MA %.4f (10k points); MA range over 200 miscalibrations [%.3f, %.3f]; replicas %s; "
                    "SD 500 vs 1000 draws rel gap %.3f",
                    calibrated, lo, hi, exact ? "reproducible and mergeable" : "NOT reproducible", sd_gap)};
}

// ---- 10 -----------------------------------------------------------------------

Outcome determinism_and_formats() {
  const auto dir = fs::temp_directory_path() / ("modwatch_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::vector<std::string> failures;

  data::GeneratorConfig g;
  g.module_count = 3;
  g.fault_samples = 12;
  g.seed = 10;
  const auto ds = data::generate(g);
  const auto ds_sha = modwatch::git_blob_sha1(data::encode_waveforms(ds));
  if (modwatch::git_blob_sha1(data::encode_waveforms(data::generate(g))) != ds_sha) failures.push_back("dataset");

  data::save_waveforms(dir / "d.mwts", ds);
  const auto bytes = [](const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  };
  const auto reloaded = data::load_waveforms(dir / "d.mwts");
  if (data::encode_waveforms(reloaded) != bytes(dir / "d.mwts") ||
      !nn::bitwise_equal(reloaded.data, ds.data)) {
    failures.push_back("tensor file");
  }

  const auto p = pipeline::prepare(ds, {}, 10);
  auto spec = model::ModelSpec::desk(model::Mode::cvae);
  spec.module_count = 3;
  const model::Cvae m(spec);
  train::TrainConfig tc;
  tc.max_epochs = 3;
  tc.seed = 10;
  const auto a = train::train(m, tc, p.train, normals_of(p.validation));
  const auto b = train::train(m, tc, p.train, normals_of(p.validation));
  a.log.write_csv(dir / "a.csv");
  b.log.write_csv(dir / "b.csv");
  bool same_log = a.log.epochs.size() == b.log.epochs.size() && bytes(dir / "a.csv") == bytes(dir / "b.csv");
  for (std::size_t e = 0; same_log && e < a.log.epochs.size(); ++e) {
    const auto &x = a.log.epochs[e], &y = b.log.epochs[e];
    same_log = x.train.total == y.train.total && x.train.kld == y.train.kld && x.validation.total == y.validation.total;
  }
  if (!same_log || !(a.params == b.params)) failures.push_back("train log");

  const model::Checkpoint ck{spec, a.params, {{"note", "acceptance"}}};
  model::save_checkpoint(dir / "m.mwck", ck);
  const auto back = model::load_checkpoint(dir / "m.mwck");
  if (!(back.params == ck.params) || !(back.spec == ck.spec) || back.metadata != ck.metadata ||
      model::encode_checkpoint(back) != bytes(dir / "m.mwck")) {
    failures.push_back("checkpoint");
  }

  landscape::GridOptions opt;
  opt.resolution = 5;
  const auto gamma = landscape::random_direction(a.params, 1, "gamma"), nu = landscape::random_direction(a.params, 2, "nu");
  landscape::write_grid_csv(dir / "g1.csv", landscape::evaluate_grid(m, a.params, gamma, nu, p.train, opt));
  opt.jobs = 4;
  landscape::write_grid_csv(dir / "g2.csv", landscape::evaluate_grid(m, b.params, gamma, nu, p.train, opt));
  if (bytes(dir / "g1.csv") != bytes(dir / "g2.csv")) failures.push_back("landscape csv");

  fs::remove_all(dir);
  std::string detail = "dataset sha1 " + ds_sha.substr(0, 12) + "; ";
  if (failures.empty()) {
    detail += "dataset, train log, landscape CSV reproducible; MWTS and MWCK round-trip bit-exactly";
  } else {
    detail += "mismatch in:";
    for (const auto& f : failures) detail += " " + f;
  }
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"loss identities", loss_identities},
      {"AUC oracle equivalence", auc_oracle},
      {"threshold budget", threshold_budget},
      {"synthetic-analog detection", synthetic_detection},
      {"multi vs single trend", multi_vs_single},
      {"landscape exactness", landscape_exactness},
      {"depth sweep trend", depth_trend},
      {"UQ calibration", uq_calibration},
      {"determinism and formats", determinism_and_formats},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
