#include <random>

#include <benchmark/benchmark.h>

#include "cathnav/learner.hpp"
#include "cathnav/nn.hpp"

using namespace cathnav;

namespace {

Matrix random_batch(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void BM_MlpForward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const int hidden = static_cast<int>(state.range(0)), batch = static_cast<int>(state.range(1));
  const Mlp net({30, hidden, hidden, 3}, rng);
  const Matrix x = random_batch(30, batch, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpForward)->Args({64, 1})->Args({64, 256});

void BM_MlpForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const int hidden = static_cast<int>(state.range(0)), batch = static_cast<int>(state.range(1));
  const Mlp net({30, hidden, hidden, 3}, rng);
  const Matrix x = random_batch(30, batch, rng);
  const Matrix c = random_batch(3, batch, rng);
  Vector grad = Vector::Zero(net.params().size());
  Mlp::Tape tape;
  for (auto _ : state) {
    net.forward(x, &tape);
    benchmark::DoNotOptimize(net.backward(tape, c, grad));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpForwardBackward)->Args({64, 256});

void BM_GailLossAndGradient(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const Mlp disc({33, 64, 64, 1}, rng);
  const Matrix pol = random_batch(33, 256, rng), demo = random_batch(33, 256, rng);
  Vector g;
  for (auto _ : state) benchmark::DoNotOptimize(gail_loss(disc, pol, demo, &g));
}
BENCHMARK(BM_GailLossAndGradient);

}  // namespace
