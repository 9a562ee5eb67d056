#include "modwatch/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "modwatch/error.hpp"
#include "modwatch/parallel.hpp"
#include "modwatch/random.hpp"

namespace modwatch::landscape {

using nn::ModelParameters;
using nn::Tensor;

void filter_normalize(Direction& d, const ModelParameters& params) {
  if (d.tensors.size() != params.slot_count()) throw ShapeError("direction does not match the parameter layout");
  for (std::size_t slot = 0; slot < params.slot_count(); ++slot) {
    const Tensor& w = params.tensor(slot);
    Tensor& t = d.tensors[slot];
    if (t.dims() != w.dims()) throw ShapeError("direction tensor dims differ at slot " + std::to_string(slot));
    if (ModelParameters::is_bias_slot(slot)) {
      t.fill(0.0f);
      continue;
    }
    const std::size_t units = w.dim(0);
    const std::size_t size = w.size() / units;
    for (std::size_t u = 0; u < units; ++u) {
      const float* wu = w.data() + u * size;
      float* du = t.data() + u * size;
      double wn = 0.0, dn = 0.0;
      for (std::size_t k = 0; k < size; ++k) {
        wn += static_cast<double>(wu[k]) * wu[k];
        dn += static_cast<double>(du[k]) * du[k];
      }
      wn = std::sqrt(wn);
      dn = std::sqrt(dn);
      const double scale = (wn == 0.0 || dn == 0.0) ? 0.0 : wn / dn;
      for (std::size_t k = 0; k < size; ++k) du[k] = static_cast<float>(du[k] * scale);
    }
  }
}

Direction random_direction(const ModelParameters& params, std::uint64_t seed, std::string tag) {
  Direction d;
  d.tag = std::move(tag);
  d.seed = seed;
  for (std::size_t slot = 0; slot < params.slot_count(); ++slot) {
    Tensor t(params.tensor(slot).dims());
    if (!ModelParameters::is_bias_slot(slot)) {
      Rng rng(derive_seed(seed, slot));
      for (auto& v : t.values()) v = static_cast<float>(standard_normal(rng));
    }
    d.tensors.push_back(std::move(t));
  }
  filter_normalize(d, params);
  return d;
}

ModelParameters displaced(const ModelParameters& params, const Direction& d1, double alpha, const Direction& d2,
                          double beta) {
  if (d1.tensors.size() != params.slot_count() || d2.tensors.size() != params.slot_count()) {
    throw ShapeError("direction does not match the parameter layout");
  }
  ModelParameters out = params;
  const auto a = static_cast<float>(alpha);
  const auto b = static_cast<float>(beta);
  for (std::size_t slot = 0; slot < out.slot_count(); ++slot) {
    Tensor& t = out.tensor(slot);
    const Tensor& g = d1.tensors[slot];
    const Tensor& n = d2.tensors[slot];
    if (g.dims() != t.dims() || n.dims() != t.dims()) throw ShapeError("direction tensor dims differ");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = t[i] + (a * g[i] + b * n[i]);
  }
  return out;
}

std::vector<double> grid_axis(std::size_t resolution, double range) {
  if (resolution == 0) throw ConfigError("grid resolution must be >= 1");
  if (!(range > 0.0) || !std::isfinite(range)) throw ConfigError("grid range must be positive");
  if (resolution == 1) return {0.0};
  std::vector<double> axis(resolution);
  const double span = static_cast<double>(resolution - 1);
  for (std::size_t i = 0; i < resolution; ++i) {
    axis[i] = range * (2.0 * static_cast<double>(i) - span) / span;
  }
  return axis;
}

namespace {

double loss_or_overflow(const model::Cvae& model, const ModelParameters& params, const data::WaveformSet& data,
                        const GridOptions& o, bool& overflow) {
  try {
    const double v = train::evaluate_loss(model, params, data, o.eta, o.batch_size, std::nullopt).total;
    overflow = !std::isfinite(v);
    return overflow ? std::numeric_limits<double>::infinity() : v;
  } catch (const NumericError&) {
    overflow = true;
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

LandscapeGrid evaluate_grid(const model::Cvae& model, const ModelParameters& params, const Direction& gamma,
                            const Direction& nu, const data::WaveformSet& data, const GridOptions& options) {
  if (data.size() == 0) throw DataError("landscape needs a nonempty dataset");
  if (options.require_distinct_seeds && gamma.seed == nu.seed) {
    throw ConfigError("landscape directions must use distinct seeds");
  }
  model.check_parameters(params);
  LandscapeGrid grid;
  grid.tag = gamma.tag + "_" + nu.tag;
  grid.alpha = grid_axis(options.resolution, options.range);
  grid.beta = grid.alpha;
  const std::size_t n = grid.alpha.size() * grid.beta.size();
  grid.loss.assign(n, 0.0);
  std::vector<char> overflow(n, 0);
  bool center_overflow = false;
  grid.center_loss = loss_or_overflow(model, params, data, options, center_overflow);
  parallel_for(n, options.jobs, [&](std::size_t cell) {
    const std::size_t i = cell / grid.beta.size();
    const std::size_t j = cell % grid.beta.size();
    bool of = false;
    grid.loss[cell] =
        loss_or_overflow(model, displaced(params, gamma, grid.alpha[i], nu, grid.beta[j]), data, options, of);
    overflow[cell] = of;
  });
  grid.overflowed.assign(overflow.begin(), overflow.end());
  return grid;
}

ConvexityReport convexity_report(const LandscapeGrid& g) {
  const std::size_t ra = g.alpha.size(), rb = g.beta.size();
  if (ra < 5 || rb < 5) throw ConfigError("convexity report needs at least a 5 x 5 grid");
  ConvexityReport r;
  r.center_loss = g.center_loss;
  r.loss_min = std::numeric_limits<double>::infinity();
  r.loss_max = -std::numeric_limits<double>::infinity();
  std::size_t finite = 0, below_center = 0;
  for (std::size_t c = 0; c < g.loss.size(); ++c) {
    if (g.overflowed[c]) {
      ++r.overflowed;
      continue;
    }
    ++finite;
    r.loss_min = std::min(r.loss_min, g.loss[c]);
    r.loss_max = std::max(r.loss_max, g.loss[c]);
    if (g.loss[c] < g.center_loss) ++below_center;
  }
  r.center_minimal = static_cast<double>(below_center) <= 0.05 * static_cast<double>(g.loss.size());

  const double ha = g.alpha[1] - g.alpha[0];
  const double hb = g.beta[1] - g.beta[0];
  std::size_t psd = 0;
  for (std::size_t i = 1; i + 1 < ra; ++i) {
    for (std::size_t j = 1; j + 1 < rb; ++j) {
      ++r.interior_points;
      bool any_overflow = false;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) any_overflow = any_overflow || g.overflow_at(i + di, j + dj);
      }
      if (any_overflow) continue;
      const double f = g.at(i, j);
      const double fxx = (g.at(i + 1, j) - 2.0 * f + g.at(i - 1, j)) / (ha * ha);
      const double fyy = (g.at(i, j + 1) - 2.0 * f + g.at(i, j - 1)) / (hb * hb);
      const double fxy =
          (g.at(i + 1, j + 1) - g.at(i + 1, j - 1) - g.at(i - 1, j + 1) + g.at(i - 1, j - 1)) / (4.0 * ha * hb);
      if (fxx >= 0.0 && fyy >= 0.0 && fxx * fyy - fxy * fxy >= 0.0) ++psd;
    }
  }
  r.psd_fraction = static_cast<double>(psd) / static_cast<double>(r.interior_points);

  // Share of outward steps along the eight rays from the grid center that do
  // not decrease the loss.
  const auto ci = static_cast<std::ptrdiff_t>(ra / 2), cj = static_cast<std::ptrdiff_t>(rb / 2);
  std::size_t steps = 0, rising = 0;
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      if (di == 0 && dj == 0) continue;
      for (std::ptrdiff_t k = 0;; ++k) {
        const auto i0 = ci + k * di, j0 = cj + k * dj, i1 = i0 + di, j1 = j0 + dj;
        if (i1 < 0 || j1 < 0 || i1 >= static_cast<std::ptrdiff_t>(ra) || j1 >= static_cast<std::ptrdiff_t>(rb)) break;
        ++steps;
        if (g.at(static_cast<std::size_t>(i1), static_cast<std::size_t>(j1)) >=
            g.at(static_cast<std::size_t>(i0), static_cast<std::size_t>(j0))) {
          ++rising;
        }
      }
    }
  }
  r.ray_monotonicity = steps ? static_cast<double>(rising) / static_cast<double>(steps) : 0.0;
  if (finite == 0) r.loss_min = r.loss_max = std::numeric_limits<double>::infinity();
  return r;
}

model::ModelSpec with_depth(const model::ModelSpec& base, std::size_t depth) {
  model::ModelSpec s = base;
  s.encoder_blocks = depth;
  s.decoder_blocks = depth;
  s.encoder_kernels.clear();
  s.decoder_kernels.clear();
  if (depth < s.strided_blocks) {
    throw ShapeError("depth " + std::to_string(depth) + " is below the " + std::to_string(s.strided_blocks) +
                     " strided blocks the time resolution requires");
  }
  s.validate();
  return s;
}

std::vector<DepthResult> depth_sweep(const model::ModelSpec& base, const train::TrainConfig& config,
                                     const data::WaveformSet& train_set, const data::WaveformSet& validation_set,
                                     const data::WaveformSet& landscape_data, const DepthSweepOptions& options) {
  if (options.depths.empty()) throw ConfigError("depth sweep needs at least one depth");
  std::vector<model::ModelSpec> specs;
  for (auto d : options.depths) specs.push_back(with_depth(base, d));
  std::vector<DepthResult> out(specs.size());
  GridOptions grid_options = options.grid;
  if (options.jobs > 1 && specs.size() > 1) grid_options.jobs = 1;
  parallel_for(specs.size(), options.jobs, [&](std::size_t k) {
    DepthResult& r = out[k];
    r.depth = options.depths[k];
    r.spec = specs[k];
    const model::Cvae model(r.spec);
    auto trained = train::train(model, config, train_set, validation_set);
    r.log = std::move(trained.log);
    const auto gamma = random_direction(trained.params, derive_seed(options.direction_seed, 1), "gamma");
    const auto nu = random_direction(trained.params, derive_seed(options.direction_seed, 2), "nu");
    r.grid = evaluate_grid(model, trained.params, gamma, nu, landscape_data, grid_options);
    r.grid.tag = "depth" + std::to_string(r.depth);
    r.report = convexity_report(r.grid);
  });
  return out;
}

void write_grid_csv(const std::filesystem::path& path, const LandscapeGrid& grid) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << std::setprecision(17);
  os << "alpha\\beta";
  for (double b : grid.beta) os << ',' << b;
  os << '\n';
  for (std::size_t i = 0; i < grid.alpha.size(); ++i) {
    os << grid.alpha[i];
    for (std::size_t j = 0; j < grid.beta.size(); ++j) {
      os << ',';
      if (grid.overflow_at(i, j)) os << "overflow";
      else os << grid.at(i, j);
    }
    os << '\n';
  }
}

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, ConvexityReport>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << std::setprecision(10);
  os << "tag,psd_fraction,loss_min,loss_max,center_loss,center_minimal,ray_monotonicity,interior_points,overflowed\n";
  for (const auto& [tag, r] : rows) {
    os << tag << ',' << r.psd_fraction << ',' << r.loss_min << ',' << r.loss_max << ',' << r.center_loss << ','
       << (r.center_minimal ? 1 : 0) << ',' << r.ray_monotonicity << ',' << r.interior_points << ',' << r.overflowed
       << '\n';
  }
}

}  // namespace modwatch::landscape
