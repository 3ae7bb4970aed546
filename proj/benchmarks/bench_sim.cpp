#include <random>

#include <benchmark/benchmark.h>

#include "cathnav/environment.hpp"
#include "cathnav/mesh.hpp"
#include "cathnav/scenario.hpp"
#include "cathnav/softbody.hpp"

using namespace cathnav;

namespace {

SoftBodyWorld tube(int segments, int rings) {
  return SoftBodyWorld::from_mesh(make_straight_tube(10.0, 120.0, segments, rings), SoftBodyParams{});
}

void BM_Raycast(benchmark::State& state) {
  const SoftBodyWorld w = tube(static_cast<int>(state.range(0)), 30);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (auto _ : state) {
    const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
    benchmark::DoNotOptimize(raycast(w, Vec3(1.0, 60.0, -2.0), d, 30.0));
  }
  state.SetLabel(std::to_string(w.triangles.size()) + " triangles");
}
BENCHMARK(BM_Raycast)->Arg(16)->Arg(32)->Arg(64);

void BM_PbdStep(benchmark::State& state) {
  SoftBodyWorld w = tube(static_cast<int>(state.range(0)), 30);
  w.heartbeat.amplitude = {0.0, 0.0, 1.0};
  for (auto _ : state) pbd_step(w, 0.1);
  state.SetLabel(std::to_string(w.particles.size()) + " particles");
}
BENCHMARK(BM_PbdStep)->Arg(16)->Arg(32);

void BM_EnvironmentStep(benchmark::State& state) {
  BuildOptions o;
  o.heartbeat = o.contact_deformation = state.range(0) != 0;
  Environment env = build_environment(preset_scenario("curved_tube"), o);
  std::mt19937_64 rng(2);
  env.reset(rng);
  const Action forward{0.0, 0.0, env.config().catheter.max_insertion()};
  for (auto _ : state) {
    if (env.step(forward).termination != Termination::none) {
      state.PauseTiming();
      env.reset(rng);
      state.ResumeTiming();
    }
  }
  state.SetLabel(state.range(0) ? "dynamic" : "static");
}
BENCHMARK(BM_EnvironmentStep)->Arg(0)->Arg(1);

}  // namespace
