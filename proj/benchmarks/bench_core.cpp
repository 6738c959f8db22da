#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "ionmirror/config.hpp"
#include "ionmirror/dynamics.hpp"
#include "ionmirror/photon.hpp"
#include "ionmirror/rng.hpp"
#include "ionmirror/spectral.hpp"

using namespace ionmirror;

namespace {

config::RunConfig preset() {
  static const config::RunConfig cfg = [] {
    config::RunConfig c = config::defaults();
    c.plan = protocol::resolve_plan(c.plan);
    return c;
  }();
  return cfg;
}

}  // namespace

// One integrator step at the preset time step.
static void BM_Step(benchmark::State& state) {
  const auto cfg = preset();
  dynamics::SimParams sp = cfg.plan.sim;
  sp.resolve(cfg.plan.system);
  Engine rng = make_stream(1, 0);
  dynamics::MotionState s{};
  for (auto _ : state) {
    s = dynamics::step(s, sp.mirror_offset, cfg.plan.system, sp, rng);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_Step);

// Simulated milliseconds of full dynamics with photon emission.
static void BM_SimulateRun(benchmark::State& state) {
  const auto cfg = preset();
  dynamics::SimParams sp = cfg.plan.sim;
  sp.duration = 1e-3 * static_cast<double>(state.range(0));
  for (auto _ : state) {
    auto r = dynamics::simulate_run(cfg.plan.system, sp);
    benchmark::DoNotOptimize(r.photons.event_times.data());
  }
}
BENCHMARK(BM_SimulateRun)->Arg(10)->Unit(benchmark::kMillisecond);

// Welch PSD of one simulated second of sparse photon events at 1e-7 s bins.
static void BM_SpectrumFromEvents(benchmark::State& state) {
  Engine rng = make_stream(2, 0);
  const auto ev = photon::emit_photons([](double) { return 7e3; }, 0.0, 1.0, 7e3, rng);
  spectral::WelchSettings ws;
  ws.sample_interval = 1e-7;
  ws.segment_length = spectral::segment_length_for(50.0, 1e-7);
  for (auto _ : state) {
    auto ps = spectral::spectrum_from_events(ev, 0.0, 1.0, ws);
    benchmark::DoNotOptimize(ps.psd.data());
  }
}
BENCHMARK(BM_SpectrumFromEvents)->Unit(benchmark::kMillisecond);

static void BM_FitLorentzian(benchmark::State& state) {
  std::vector<double> f, y;
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> e(1.0);
  for (double x = 1.017e6; x <= 1.023e6; x += 50.0) {
    const double u = 2 * (x - 1.02e6) / 500.0;
    f.push_back(x);
    y.push_back((1.4e4 + 3e4 / (1 + u * u)) * (0.8 + 0.4 * e(rng) / 2.0));
  }
  const std::vector<double> rho{1.0, 4.0 / 9.0, 1.0 / 36.0};
  for (auto _ : state) {
    auto fit = spectral::fit_lorentzian(f, y, rho);
    benchmark::DoNotOptimize(fit.f0);
  }
}
BENCHMARK(BM_FitLorentzian)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
