#include <random>

#include <benchmark/benchmark.h>

#include "facesearch/agent.hpp"
#include "facesearch/backbone.hpp"
#include "facesearch/cleaner.hpp"
#include "facesearch/marginloss.hpp"
#include "facesearch/traineval.hpp"

using namespace facesearch;

namespace {

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<std::uint32_t> labels(std::size_t n, std::size_t k) {
  std::vector<std::uint32_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<std::uint32_t>(i % k);
  return y;
}

const LossParams kLoss{1.15, 0.22, 0.0, 40, 48};

}  // namespace

static void BM_LossBackward(benchmark::State& state) {
  const auto b = state.range(0), k = state.range(1);
  std::mt19937_64 rng(1);
  const Matrix x = gaussian(rng, b, 16), w = gaussian(rng, k, 16);
  const auto y = labels(b, k);
  for (auto _ : state) benchmark::DoNotOptimize(loss_backward(x, y, w, kLoss));
}
BENCHMARK(BM_LossBackward)->Args({64, 20})->Args({256, 100});

static void BM_ForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto net = instantiate({32, 2, 32, 16}, 1.0, state.range(0) / 100.0, 3);
  const Matrix x = gaussian(rng, 64, 32);
  for (auto _ : state) {
    ActivationCache cache;
    const Matrix out = forward(net, x, &cache);
    benchmark::DoNotOptimize(backward(net, cache, out));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(100)->Arg(200);

static void BM_Clean(benchmark::State& state) {
  DatasetSpec spec;
  spec.n_classes = static_cast<std::size_t>(state.range(0));
  spec.samples_per_class = 50;
  spec.seed = 4;
  const auto ds = generate_dataset(spec);
  for (auto _ : state) benchmark::DoNotOptimize(clean(ds, {0.3, 0.7, false}));
}
BENCHMARK(BM_Clean)->Arg(20)->Arg(100);

static void BM_ControllerSample(benchmark::State& state) {
  const auto policy = make_controller(default_space(), 64, 5);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sample_tokens(policy, 8, ++seed));
}
BENCHMARK(BM_ControllerSample);

static void BM_PpoUpdate(benchmark::State& state) {
  const PpoConfig cfg;
  auto agent = make_agent(default_space().cardinalities(), cfg, 6);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto batch = sample_batch(agent.policy, 8, ++seed);
    for (std::size_t j = 0; j < batch.size(); ++j) batch[j].reward = 0.1 * static_cast<double>(j);
    benchmark::DoNotOptimize(ppo_update(agent, batch, cfg));
  }
}
BENCHMARK(BM_PpoUpdate);

static void BM_TarAtFar(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> g(static_cast<std::size_t>(state.range(0) / 5)), im(static_cast<std::size_t>(state.range(0)));
  for (auto& v : g) v = n(rng) + 2.0;
  for (auto& v : im) v = n(rng);
  for (auto _ : state) benchmark::DoNotOptimize(tar_at_far(g, im, 1e-3));
}
BENCHMARK(BM_TarAtFar)->Arg(5000)->Arg(100000);
BENCHMARK_MAIN();
