#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "modwatch/error.hpp"
#include "modwatch/landscape.hpp"
#include "modwatch/pipeline.hpp"
#include "modwatch/random.hpp"
#include "modwatch/training.hpp"

using namespace modwatch::landscape;
using modwatch::ConfigError;
using modwatch::ShapeError;
namespace model = modwatch::model;
namespace nn = modwatch::nn;

namespace {

LandscapeGrid synthetic(std::size_t res, double (*f)(double, double)) {
  LandscapeGrid g;
  g.alpha = g.beta = grid_axis(res, 1.0);
  for (double a : g.alpha) {
    for (double b : g.beta) {
      g.loss.push_back(f(a, b));
      g.overflowed.push_back(false);
    }
  }
  g.center_loss = f(0, 0);
  return g;
}

model::ModelSpec tiny_spec() {
  model::ModelSpec s;
  s.time_steps = 32;
  s.kernels_per_block = 4;
  s.dense_units = 16;
  s.decoder_dense_units = 16;
  s.latent_dim = 4;
  s.module_count = 2;
  return s;
}

const modwatch::pipeline::PreparedData& prepared() {
  static const auto p = [] {
    modwatch::data::GeneratorConfig g;
    g.module_count = 2;
    g.normals_per_module = 20;
    g.fault_samples = 0;
    g.time_steps = 32;
    return modwatch::pipeline::prepare(modwatch::data::generate(g), {0.8, 0.1, 0.1}, 1);
  }();
  return p;
}

double unit_norm(const nn::Tensor& t, std::size_t unit, std::size_t size) {
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) s += double(t[unit * size + i]) * t[unit * size + i];
  return std::sqrt(s);
}

}  // namespace

TEST(GridAxis, SymmetricAndCentered) {
  EXPECT_EQ(grid_axis(1, 2.0), (std::vector<double>{0.0}));
  EXPECT_EQ(grid_axis(5, 1.0), (std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0}));
  const auto a = grid_axis(25, 1.0);
  EXPECT_EQ(a[12], 0.0);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_DOUBLE_EQ(a[i], -a[24 - i]);
  EXPECT_THROW(grid_axis(0, 1.0), ConfigError);
  EXPECT_THROW(grid_axis(3, 0.0), ConfigError);
}

TEST(Convexity, ParaboloidIsEverywherePsd) {
  const auto r = convexity_report(synthetic(9, [](double a, double b) { return a * a + 2 * b * b + 0.5 * a * b; }));
  EXPECT_EQ(r.psd_fraction, 1.0);
  EXPECT_EQ(r.interior_points, 49u);
  EXPECT_TRUE(r.center_minimal);
  EXPECT_EQ(r.ray_monotonicity, 1.0);
  EXPECT_EQ(r.loss_min, 0.0);
}

TEST(Convexity, SaddleIsNowherePsd) {
  const auto r = convexity_report(synthetic(9, [](double a, double b) { return a * a - b * b; }));
  EXPECT_EQ(r.psd_fraction, 0.0);
  EXPECT_FALSE(r.center_minimal);
  EXPECT_LT(r.ray_monotonicity, 1.0);
}

TEST(Convexity, NeedsFiveByFive) {
  EXPECT_THROW(convexity_report(synthetic(3, [](double a, double b) { return a + b; })), ConfigError);
  EXPECT_NO_THROW(convexity_report(synthetic(5, [](double a, double b) { return a + b; })));
}

TEST(Convexity, OverflowedStencilsCountAsNotPsd) {
  auto g = synthetic(7, [](double a, double b) { return a * a + b * b; });
  g.loss[0] = INFINITY;
  g.overflowed[0] = true;
  const auto r = convexity_report(g);
  EXPECT_EQ(r.overflowed, 1u);
  EXPECT_NEAR(r.psd_fraction, 24.0 / 25.0, 1e-12);
}

TEST(Directions, FilterNormalizedAndBiasFree) {
  const model::Cvae m(tiny_spec());
  const auto params = m.make_parameters(3);
  const auto d = random_direction(params, 17, "gamma");
  ASSERT_EQ(d.tensors.size(), params.slot_count());
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const auto& w = params.layer(l).weights;
    const auto& dk = d.tensors[nn::ModelParameters::kernel_slot(l)];
    for (std::size_t u = 0; u < w.unit_count(); ++u) {
      const double wn = unit_norm(w.kernel, u, w.unit_size());
      EXPECT_NEAR(unit_norm(dk, u, w.unit_size()), wn, 1e-6 * wn);
    }
    for (float v : d.tensors[nn::ModelParameters::bias_slot(l)].values()) EXPECT_EQ(v, 0.0f);
  }
  auto again = d;
  filter_normalize(again, params);
  for (std::size_t s = 0; s < d.tensors.size(); ++s) {
    for (std::size_t i = 0; i < d.tensors[s].size(); ++i) EXPECT_NEAR(again.tensors[s][i], d.tensors[s][i], 1e-6);
  }
}

TEST(Directions, ZeroWeightUnitGivesZeroDirection) {
  const model::Cvae m(tiny_spec());
  auto params = m.make_parameters(3);
  auto& k = params.tensor(0);
  const std::size_t size = k.size() / k.dim(0);
  for (std::size_t i = 0; i < size; ++i) k[i] = 0.0f;
  const auto d = random_direction(params, 5, "nu");
  EXPECT_EQ(unit_norm(d.tensors[0], 0, size), 0.0);
  EXPECT_GT(unit_norm(d.tensors[0], 1, size), 0.0);
}

TEST(Directions, DisplacementIsElementwise) {
  const model::Cvae m(tiny_spec());
  const auto params = m.make_parameters(3);
  const auto g = random_direction(params, 1, "g"), n = random_direction(params, 2, "n");
  const auto moved = displaced(params, g, 0.25, n, -0.5);
  for (std::size_t s = 0; s < params.slot_count(); ++s) {
    for (std::size_t i = 0; i < params.tensor(s).size(); ++i) {
      const float expect = params.tensor(s)[i] + static_cast<float>(0.25 * g.tensors[s][i] - 0.5 * n.tensors[s][i]);
      ASSERT_NEAR(moved.tensor(s)[i], expect, 1e-6f * (1.0f + std::abs(expect)));
    }
  }
  EXPECT_TRUE(nn::bitwise_equal(displaced(params, g, 0.0, n, 0.0), params));
}

TEST(Grid, CenterEqualsTrainingLossBitwise) {
  const auto& d = prepared();
  const model::Cvae m(tiny_spec());
  const auto params = m.make_parameters(4);
  const auto g = random_direction(params, 1, "g"), n = random_direction(params, 2, "n");
  GridOptions opt;
  opt.resolution = 5;
  opt.batch_size = 8;
  const auto grid = evaluate_grid(m, params, g, n, d.train, opt);
  const auto direct = modwatch::train::evaluate_loss(m, params, d.train, 1.0, 8, std::nullopt);
  EXPECT_EQ(grid.at(2, 2), direct.total);
  EXPECT_EQ(grid.center_loss, direct.total);
  opt.jobs = 8;
  const auto threaded = evaluate_grid(m, params, g, n, d.train, opt);
  EXPECT_EQ(threaded.loss, grid.loss);
  // Swapping the directions transposes the grid.
  opt.jobs = 1;
  const auto swapped = evaluate_grid(m, params, n, g, d.train, opt);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(swapped.at(i, j), grid.at(j, i));
  }
  EXPECT_THROW(evaluate_grid(m, params, g, g, d.train, opt), ConfigError);
}

TEST(DepthSweep, ShapesAndTinyRun) {
  const auto base = tiny_spec();
  EXPECT_EQ(with_depth(base, 5).encoder_blocks, 5u);
  EXPECT_EQ(with_depth(base, 5).decoder_blocks, 5u);
  EXPECT_THROW(with_depth(base, 2), ShapeError);
  const auto& d = prepared();
  modwatch::train::TrainConfig c;
  c.batch_size = 8;
  c.max_epochs = 2;
  DepthSweepOptions o;
  o.depths = {3, 4};
  o.grid.resolution = 5;
  o.grid.batch_size = 16;
  const auto results = depth_sweep(base, c, d.train, d.validation, d.train, o);
  ASSERT_EQ(results.size(), 2u);
  for (const auto& r : results) {
    EXPECT_EQ(r.spec.encoder_blocks, r.depth);
    EXPECT_EQ(r.log.epochs.size(), 2u);
    EXPECT_EQ(r.report.interior_points, 9u);
    EXPECT_GE(r.report.psd_fraction, 0.0);
    EXPECT_LE(r.report.psd_fraction, 1.0);
  }
  o.depths = {};
  EXPECT_THROW(depth_sweep(base, c, d.train, d.validation, d.train, o), ConfigError);
}

TEST(Grid, CsvIsAlphaByBetaMatrix) {
  auto g = synthetic(3, [](double a, double b) { return a + 10 * b; });
  g.loss[8] = INFINITY;
  g.overflowed[8] = true;
  const auto path = std::filesystem::temp_directory_path() / "modwatch_grid.csv";
  write_grid_csv(path, g);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "alpha\\beta,-1,0,1");
  std::getline(is, line);
  EXPECT_EQ(line, "-1,-11,-1,9");
  std::getline(is, line);
  std::getline(is, line);
  EXPECT_EQ(line, "1,-9,1,overflow");
  std::filesystem::remove(path);
}

TEST(Directions, ScaleWithTheWeightsAndMatchUnitNorms) {
  const model::Cvae m(tiny_spec());
  const auto params = m.make_parameters(3);
  auto big = params;
  for (std::size_t l = 0; l < big.layer_count(); ++l) {
    for (auto& v : big.tensor(nn::ModelParameters::kernel_slot(l)).values()) v *= 10.0f;
  }
  const auto d = random_direction(params, 8, "d"), d10 = random_direction(big, 8, "d");
  for (std::size_t s = 0; s < d.tensors.size(); ++s) {
    for (std::size_t i = 0; i < d.tensors[s].size(); ++i) {
      ASSERT_NEAR(d10.tensors[s][i], 10.0f * d.tensors[s][i], 1e-5f * (1.0f + std::abs(d10.tensors[s][i])));
    }
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto r = random_direction(params, seed, "r");
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
      const auto& w = params.layer(l).weights;
      for (std::size_t u = 0; u < w.unit_count(); ++u) {
        const double ratio = unit_norm(r.tensors[2 * l], u, w.unit_size()) / unit_norm(w.kernel, u, w.unit_size());
        ASSERT_NEAR(ratio, 1.0, 1e-6);
      }
    }
  }
}

TEST(Grid, SingleCellAndCollinearDirections) {
  const auto& d = prepared();
  const model::Cvae m(tiny_spec());
  const auto params = m.make_parameters(4);
  const auto g = random_direction(params, 1, "g");
  GridOptions opt;
  opt.resolution = 1;
  opt.batch_size = 8;
  const auto n = random_direction(params, 2, "n");
  const auto one = evaluate_grid(m, params, g, n, d.train, opt);
  ASSERT_EQ(one.loss.size(), 1u);
  EXPECT_EQ(one.loss[0], one.center_loss);

  // gamma == nu: the grid depends on alpha + beta only, so anti-diagonals are constant.
  opt.resolution = 5;
  opt.require_distinct_seeds = false;
  const auto grid = evaluate_grid(m, params, g, g, d.train, opt);
  for (std::size_t i = 0; i + 1 < 5; ++i) {
    for (std::size_t j = 1; j < 5; ++j) {
      EXPECT_NEAR(grid.at(i, j), grid.at(i + 1, j - 1), 1e-5 * std::abs(grid.at(i, j)));
    }
  }
}

TEST(DepthSweep, SingleDepthMatchesGridAndRepeatsExactly) {
  const auto& d = prepared();
  modwatch::train::TrainConfig c;
  c.batch_size = 8;
  c.max_epochs = 2;
  DepthSweepOptions o;
  o.depths = {3, 3};
  o.grid.resolution = 5;
  o.grid.batch_size = 16;
  o.direction_seed = 21;
  const auto results = depth_sweep(tiny_spec(), c, d.train, d.validation, d.train, o);
  ASSERT_EQ(results.size(), 2u);
  EXPECT_EQ(results[0].grid.loss, results[1].grid.loss);
  EXPECT_EQ(results[0].report.psd_fraction, results[1].report.psd_fraction);

  // Rebuild the depth-3 grid by hand: train, then evaluate with the sweep's directions.
  const model::Cvae m(with_depth(tiny_spec(), 3));
  const auto trained = modwatch::train::train(m, c, d.train, d.validation);
  const auto ga = random_direction(trained.params, modwatch::derive_seed(21, 1), "gamma");
  const auto nu = random_direction(trained.params, modwatch::derive_seed(21, 2), "nu");
  const auto grid = evaluate_grid(m, trained.params, ga, nu, d.train, o.grid);
  EXPECT_EQ(grid.loss, results[0].grid.loss);
}
