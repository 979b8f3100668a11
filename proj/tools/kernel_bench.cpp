// Serial reference vs OpenMP dense kernels, plus one full PPO minibatch step.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "greenwave/kernels.hpp"
#include "greenwave/ppo.hpp"

namespace {

using namespace greenwave;

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  const auto x = noise(batch * width, 1);
  const auto w = noise(width * width, 2);
  const auto b = noise(width, 3);
  std::vector<double> y(batch * width);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::dense_forward(x, w, b, y, batch, width, width);
    } else {
      kernels::serial::dense_forward(x, w, b, y, batch, width, width);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch * width * width));
}

template <bool Parallel>
void BM_DenseBackwardParams(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  const auto x = noise(batch * width, 4);
  const auto dy = noise(batch * width, 5);
  std::vector<double> dw(width * width), db(width);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::dense_backward_params(dy, x, dw, db, batch, width, width);
    } else {
      kernels::serial::dense_backward_params(dy, x, dw, db, batch, width, width);
    }
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch * width * width));
}

void BM_PpoMinibatch(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto layers = static_cast<std::size_t>(state.range(1));
  auto params = PolicyParams::make(36, std::vector<std::size_t>(layers, width), PolicyHead::SquashedGaussian, 4);
  Rng rng(7);
  params.initialize(rng, -1.0);
  PpoBatch batch;
  batch.obs_dim = 36;
  batch.obs = noise(128 * 36, 8);
  batch.dv_max.assign(4, 1.389);
  for (std::size_t i = 0; i < 128; ++i) {
    batch.actions.push_back(Action{-1, noise(4, 100 + i)});
    batch.old_log_probs.push_back(-2.0);
    batch.advantages.push_back(0.1 * static_cast<double>(i % 7) - 0.3);
    batch.returns.push_back(-1.0);
  }
  std::vector<std::size_t> idx(128);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  PolicyParams grad = params;
  for (auto _ : state) {
    grad.policy.zero();
    grad.value.zero();
    benchmark::DoNotOptimize(ppo_loss(params, batch, idx, PPOConfig{}, &grad));
  }
}

}  // namespace

BENCHMARK(BM_DenseForward<false>)->Args({128, 64})->Args({128, 256});
BENCHMARK(BM_DenseForward<true>)->Args({128, 64})->Args({128, 256});
BENCHMARK(BM_DenseBackwardParams<false>)->Args({128, 64})->Args({128, 256});
BENCHMARK(BM_DenseBackwardParams<true>)->Args({128, 64})->Args({128, 256});
BENCHMARK(BM_PpoMinibatch)->Args({64, 2})->Args({256, 4});

BENCHMARK_MAIN();
