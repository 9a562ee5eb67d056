#include <benchmark/benchmark.h>

#include "modwatch/evaluation.hpp"
#include "modwatch/model.hpp"
#include "modwatch/ops.hpp"
#include "modwatch/optim.hpp"
#include "modwatch/random.hpp"

namespace {

using namespace modwatch;

nn::Tensor noise(nn::Dims dims, std::uint64_t seed) {
  Rng rng(seed);
  nn::Tensor t(std::move(dims));
  for (auto& v : t.storage()) v = static_cast<float>(standard_normal(rng));
  return t;
}

nn::LayerWeights filled(nn::LayerWeights w, std::uint64_t seed) {
  w.kernel = noise(w.kernel.dims(), seed);
  return w;
}

// args: time steps, channels in/out, stride
void BM_Conv1dForward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0)), c = static_cast<std::size_t>(state.range(1));
  const auto stride = static_cast<std::size_t>(state.range(2));
  const auto x = noise({16, t, c}, 1);
  const auto w = filled(nn::LayerWeights::conv1d(c, c, 3), 2);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv1d_forward(x, w, stride, nn::Padding::same));
  state.SetItemsProcessed(state.iterations() * 16 * static_cast<std::int64_t>(t * c * c * 3 / stride));
}
BENCHMARK(BM_Conv1dForward)->Args({512, 16, 1})->Args({512, 16, 2})->Args({4500, 16, 2})->Args({512, 64, 1});

void BM_DenseForward(benchmark::State& state) {
  const auto in = static_cast<std::size_t>(state.range(0)), out = static_cast<std::size_t>(state.range(1));
  const auto x = noise({16, in}, 3);
  const auto w = filled(nn::LayerWeights::dense(out, in), 4);
  for (auto _ : state) benchmark::DoNotOptimize(nn::dense_forward(x, w));
  state.SetItemsProcessed(state.iterations() * 16 * static_cast<std::int64_t>(in * out));
}
BENCHMARK(BM_DenseForward)->Args({1024, 64})->Args({1024, 32})->Args({64, 1024});

// One desk CVAE training step (forward, backward, Adam) on a batch of 16.
void BM_DeskTrainStep(benchmark::State& state) {
  const model::Cvae m(model::ModelSpec::desk(model::Mode::cvae));
  auto params = m.make_parameters(1);
  auto adam = nn::AdamState::for_parameters(params, 1e-3);
  const auto x = noise({16, m.spec().time_steps, m.spec().channels}, 5);
  std::vector<std::uint32_t> mods(16);
  for (std::size_t i = 0; i < mods.size(); ++i) mods[i] = static_cast<std::uint32_t>(i % m.spec().module_count);
  std::uint64_t step = 0;
  for (auto _ : state) {
    const auto lg = m.loss_and_gradients(x, mods, params, 1.0, model::LatentNoise::seeded(++step));
    nn::adam_step(params, lg.gradients, adam);
    benchmark::DoNotOptimize(lg.loss.total);
  }
}
BENCHMARK(BM_DeskTrainStep)->Unit(benchmark::kMillisecond);

void BM_DeskScoreBatch(benchmark::State& state) {
  const model::Cvae m(model::ModelSpec::desk(model::Mode::cvae));
  const auto params = m.make_parameters(1);
  const auto x = noise({32, m.spec().time_steps, m.spec().channels}, 6);
  std::vector<std::uint32_t> mods(32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(m.reconstruct(x, mods, params, model::LatentNoise::zero()));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_DeskScoreBatch)->Unit(benchmark::kMillisecond);

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  std::vector<double> a(n), b(n);
  for (auto& v : a) v = standard_normal(rng);
  for (auto& v : b) v = standard_normal(rng) + 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(eval::auc(a, b));
}
BENCHMARK(BM_Auc)->Arg(100)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
