#include "modwatch/uq.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "modwatch/error.hpp"
#include "modwatch/random.hpp"

namespace modwatch::uq {

using nn::Tensor;

void ReplicaSet::summarize() {
  if (replicas.size() < 2) throw ConfigError("a replica set needs at least 2 draws");
  const auto& dims = replicas.front().dims();
  const std::size_t n = replicas.front().size();
  std::vector<double> sum(n, 0.0);
  for (const auto& r : replicas) {
    if (r.dims() != dims) throw ShapeError("replica dims disagree");
    for (std::size_t i = 0; i < n; ++i) sum[i] += r[i];
  }
  const double count = static_cast<double>(replicas.size());
  mean = Tensor(dims);
  sd = Tensor(dims);
  std::vector<double> ss(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) sum[i] /= count;
  for (const auto& r : replicas) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = r[i] - sum[i];
      ss[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    mean[i] = static_cast<float>(sum[i]);
    sd[i] = static_cast<float>(std::sqrt(ss[i] / (count - 1.0)));
  }
}

ReplicaSet replicate_latent(const model::Cvae& model, const nn::ModelParameters& params, const Tensor& mu,
                            const Tensor& sigma, std::span<const std::uint32_t> modules, std::size_t draws,
                            std::uint64_t seed, std::size_t first_draw) {
  if (draws < 2) throw ConfigError("replicate needs n-draws >= 2");
  const std::size_t latent = model.spec().latent_dim;
  if (mu.dims() != nn::Dims{1, latent} || sigma.dims() != mu.dims()) {
    throw ShapeError("replicate expects 1 x " + std::to_string(latent) + " mu and sigma");
  }
  for (float s : sigma.values()) {
    if (!(s >= 0.0f)) throw NumericError("latent sigma must be >= 0");
  }
  ReplicaSet out;
  out.seed = seed;
  out.first_draw = first_draw;
  constexpr std::size_t chunk = 32;
  for (std::size_t start = 0; start < draws; start += chunk) {
    const std::size_t b = std::min(chunk, draws - start);
    Tensor z({b, latent});
    for (std::size_t r = 0; r < b; ++r) {
      Rng rng(derive_seed(seed, first_draw + start + r));
      for (std::size_t j = 0; j < latent; ++j) {
        z[r * latent + j] = mu[j] + sigma[j] * static_cast<float>(standard_normal(rng));
      }
    }
    std::vector<std::uint32_t> mods(modules.empty() ? 0 : b, modules.empty() ? 0u : modules.front());
    const Tensor rec = model.decode(z, mods, params);
    const std::size_t block = rec.size() / b;
    for (std::size_t r = 0; r < b; ++r) {
      std::vector<float> v(rec.data() + r * block, rec.data() + (r + 1) * block);
      out.replicas.emplace_back(nn::Dims{rec.dim(1), rec.dim(2)}, std::move(v));
    }
  }
  out.summarize();
  return out;
}

ReplicaSet replicate(const model::Cvae& model, const nn::ModelParameters& params, const Tensor& x,
                     std::optional<std::uint32_t> module, std::size_t draws, std::uint64_t seed,
                     std::size_t first_draw) {
  const Tensor batch = x.rank() == 2 ? x.reshaped({1, x.dim(0), x.dim(1)}) : x;
  if (batch.rank() != 3 || batch.dim(0) != 1) throw ShapeError("replicate expects a single sample");
  std::vector<std::uint32_t> mods;
  if (module) mods.push_back(*module);
  const auto dist = model.encode(batch, mods, params);
  return replicate_latent(model, params, dist.mu, dist.sigma(), mods, draws, seed, first_draw);
}

ReplicaSet merge(const ReplicaSet& a, const ReplicaSet& b) {
  if (a.seed != b.seed) throw ConfigError("can only merge replica sets drawn from the same seed");
  const ReplicaSet& lo = a.first_draw <= b.first_draw ? a : b;
  const ReplicaSet& hi = a.first_draw <= b.first_draw ? b : a;
  if (lo.first_draw + lo.draws() != hi.first_draw) {
    throw ConfigError("replica sets must cover adjacent draw ranges to merge");
  }
  ReplicaSet out;
  out.seed = lo.seed;
  out.first_draw = lo.first_draw;
  out.replicas = lo.replicas;
  out.replicas.insert(out.replicas.end(), hi.replicas.begin(), hi.replicas.end());
  out.summarize();
  return out;
}

std::vector<double> expected_proportions() {
  std::vector<double> p;
  for (int k = 1; k <= 99; ++k) p.push_back(k / 100.0);
  return p;
}

namespace {

CalibrationCurve curve_from_counts(const std::vector<double>& expected, const std::vector<std::size_t>& inside,
                                   std::size_t points, bool degenerate) {
  CalibrationCurve c;
  c.expected = expected;
  c.points = points;
  c.degenerate = degenerate;
  for (auto k : inside) c.observed.push_back(static_cast<double>(k) / static_cast<double>(points));
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < expected.size(); ++i) {
    const double g0 = std::abs(c.observed[i] - expected[i]);
    const double g1 = std::abs(c.observed[i + 1] - expected[i + 1]);
    area += 0.5 * (g0 + g1) * (expected[i + 1] - expected[i]);
  }
  // Exactly 0.5 at worst; summation can overshoot that by an ulp.
  c.area = std::min(area / (expected.back() - expected.front()), 0.5);
  return c;
}

struct Coverage {
  std::vector<double> expected = expected_proportions();
  std::vector<double> half_width;
  std::vector<std::size_t> inside;
  std::size_t points = 0;
  bool degenerate = false;

  Coverage() : inside(expected.size(), 0) {
    const boost::math::normal standard;
    for (double p : expected) half_width.push_back(boost::math::quantile(standard, 0.5 + 0.5 * p));
  }

  void add(double mean, double sd, double observed) {
    if (!std::isfinite(mean) || !std::isfinite(sd) || !std::isfinite(observed)) {
      throw NumericError("non-finite value in calibration input");
    }
    if (sd < sd_floor) {
      sd = sd_floor;
      degenerate = true;
    }
    const double standardized = std::abs(observed - mean) / sd;
    // half_width is increasing in p, so the covered proportions form a suffix.
    const auto first = std::lower_bound(half_width.begin(), half_width.end(), standardized);
    for (auto it = first; it != half_width.end(); ++it) ++inside[static_cast<std::size_t>(it - half_width.begin())];
    ++points;
  }

  CalibrationCurve curve() const {
    if (points == 0) throw DataError("calibration needs at least one point");
    return curve_from_counts(expected, inside, points, degenerate);
  }
};

}  // namespace

CalibrationCurve miscalibration_area(std::span<const float> mean, std::span<const float> sd,
                                     std::span<const float> observed) {
  if (mean.size() != sd.size() || mean.size() != observed.size()) {
    throw ShapeError("calibration inputs must be aligned");
  }
  Coverage cov;
  for (std::size_t i = 0; i < mean.size(); ++i) cov.add(mean[i], sd[i], observed[i]);
  return cov.curve();
}

CalibrationCurve miscalibration_area(const ReplicaSet& replicas, const Tensor& observed) {
  const Tensor obs = observed.rank() == 3 ? observed.reshaped({observed.dim(1), observed.dim(2)}) : observed;
  if (obs.dims() != replicas.mean.dims()) throw ShapeError("observation does not align with the replica set");
  return miscalibration_area(replicas.mean.values(), replicas.sd.values(), obs.values());
}

CalibrationCurve channel_miscalibration(std::span<const ReplicaSet> sets, std::span<const Tensor> observed,
                                        std::size_t channel) {
  if (sets.size() != observed.size() || sets.empty()) throw ShapeError("calibration needs aligned, nonempty inputs");
  Coverage cov;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const auto& m = sets[s].mean;
    const std::size_t C = m.dim(1);
    if (channel >= C || observed[s].size() != m.size()) throw ShapeError("calibration channel/shape mismatch");
    for (std::size_t t = 0; t < m.dim(0); ++t) {
      cov.add(m[t * C + channel], sets[s].sd[t * C + channel], observed[s][t * C + channel]);
    }
  }
  return cov.curve();
}

void write_uq_csv(const std::filesystem::path& path, std::span<const ChannelCalibration> rows, std::size_t draws,
                  std::uint64_t seed) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << std::setprecision(10) << "channel,MA,n_draws,seed,degenerate\n";
  for (const auto& r : rows) {
    os << r.channel << ',' << r.area << ',' << draws << ',' << seed << ',' << (r.degenerate ? 1 : 0) << '\n';
  }
}

void write_bands_csv(const std::filesystem::path& path, const ReplicaSet& replicas,
                     std::span<const std::string> channel_names) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << std::setprecision(9) << "time_step,channel,mean,sd\n";
  const std::size_t T = replicas.mean.dim(0), C = replicas.mean.dim(1);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      os << t << ',' << (c < channel_names.size() ? channel_names[c] : std::to_string(c)) << ','
         << replicas.mean[t * C + c] << ',' << replicas.sd[t * C + c] << '\n';
    }
  }
}

}  // namespace modwatch::uq
