#include "ionmirror/cli.hpp"

#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ionmirror/config.hpp"
#include "ionmirror/dynamics.hpp"
#include "ionmirror/io.hpp"
#include "ionmirror/model.hpp"
#include "ionmirror/photon.hpp"
#include "ionmirror/protocol.hpp"
#include "ionmirror/servo.hpp"
#include "ionmirror/spectral.hpp"
#include "ionmirror/units.hpp"

namespace ionmirror::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string format = "csv";
};

struct Context {
  config::RunConfig cfg;
  std::uint64_t seed = 1;
  fs::path out_dir;
  io::Format format = io::Format::csv;
  std::string ext;

  fs::path file(const std::string& stem) const { return out_dir / (stem + "." + ext); }
  fs::path json(const std::string& stem) const { return out_dir / (stem + ".json"); }
};

// Raised for failures that map to exit code 2.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Context make_context(const Globals& g) {
  Context ctx;
  ctx.cfg = g.config_path.empty() ? config::defaults() : config::load(g.config_path);
  ctx.seed = g.seed.value_or(ctx.cfg.plan.master_seed);
  ctx.cfg.plan.master_seed = ctx.seed;
  ctx.cfg.plan.sim.seed = ctx.seed;
  ctx.format = io::parse_format(g.format);
  ctx.ext = g.format;
  ctx.out_dir = g.out_dir;
  return ctx;
}

void prepare_out_dir(const Context& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw io::IoError("cannot create output directory '" + ctx.out_dir.string() + "'");
}

dynamics::SimParams calibrated_sim(const config::RunConfig& cfg) {
  protocol::ExperimentPlan plan = cfg.plan;
  plan.kind = protocol::ExperimentKind::alternating_slope;
  plan.n_spectra = std::max<std::size_t>(4, plan.n_spectra + plan.n_spectra % 2);
  return protocol::resolve_plan(plan).sim;
}

int cmd_predict(const Context& ctx, std::ostream& out) {
  const model::IonMirrorSystem& sys = ctx.cfg.plan.system;
  for (const std::string& w : sys.validate()) out << "# warning: " << w << '\n';
  out << io::predictions_table(model::predict(sys, ctx.cfg.plan.sim.projection), ctx.format);
  return kOk;
}

int cmd_simulate(const Context& ctx, std::ostream& out) {
  dynamics::SimParams sim = calibrated_sim(ctx.cfg);
  sim.seed = ctx.seed;
  sim.resolve(ctx.cfg.plan.system);
  if (sim.record_stride == 0) {
    const double steps = sim.duration / sim.dt;
    sim.record_stride = static_cast<std::size_t>(std::max(1.0, std::ceil(steps / 20000.0)));
  }
  const dynamics::RunResult run = dynamics::simulate_run(ctx.cfg.plan.system, sim);
  const auto counts =
      photon::bin_counts(run.photons.event_times, sim.bin_width, run.photons.duration, 0.0);
  prepare_out_dir(ctx);
  io::write_atomic(ctx.file("trajectory"), io::trajectory_table(run.trajectory, ctx.format));
  io::write_atomic(ctx.file("counts"), io::counts_table(counts, sim.bin_width, ctx.format));
  const ordered_json results{{"events", run.photons.event_times.size()},
                             {"mean_rate_cps", run.photons.mean_rate()},
                             {"cooling_rate_per_s", sim.cooling_rate},
                             {"diffusion_m2_per_s3", sim.diffusion}};
  io::write_atomic(ctx.json("manifest"),
                   io::manifest_json(ctx.cfg, ctx.seed, "simulate", run.photons.duration,
                                     results.dump()));
  out << "simulated " << run.photons.duration << " s, " << run.photons.event_times.size()
      << " photons (" << run.photons.mean_rate() << " counts/s)\n";
  return kOk;
}

int cmd_spectrum(const Context& ctx, const std::string& counts_path, std::ostream& out) {
  const io::CountSeries series = io::parse_counts(io::read_file(counts_path));
  const protocol::SpectrumSettings& s = ctx.cfg.plan.spectrum;
  const spectral::PowerSpectrum psd = spectral::estimate_psd(
      std::span<const std::uint32_t>(series.counts), series.bin_width,
      spectral::segment_length_for(s.resolution_bandwidth_hz, series.bin_width), s.overlap,
      s.window);
  const double fc = units::angular_to_hz(ctx.cfg.plan.system.trap.omega_trap);
  const spectral::LorentzianFit fit =
      spectral::fit_lorentzian(psd, fc - s.fit_half_width_hz, fc + s.fit_half_width_hz);
  prepare_out_dir(ctx);
  io::write_atomic(ctx.file("spectrum"),
                   io::spectrum_table(psd, fc - 3.0 * s.fit_half_width_hz,
                                      fc + 3.0 * s.fit_half_width_hz, ctx.format));
  io::write_atomic(ctx.json("fit"), io::fit_json(fit));
  io::write_atomic(ctx.json("manifest"),
                   io::manifest_json(ctx.cfg, ctx.seed, "spectrum",
                                     static_cast<double>(series.counts.size()) * series.bin_width,
                                     io::fit_json(fit)));
  out << "f0 = " << fit.f0 << " Hz +- " << fit.f0_uncertainty << " Hz, fwhm = " << fit.fwhm
      << " Hz";
  if (fit.converged && fit.floor > 0.0) out << ", snr = " << spectral::snr_db(fit) << " dB";
  out << (fit.peak_found ? "" : " (no peak)") << '\n';
  if (!fit.converged) throw RuntimeFailure("Lorentzian fit did not converge");
  return kOk;
}

int cmd_lock(const Context& ctx, std::ostream& out) {
  const config::RunConfig& cfg = ctx.cfg;
  const dynamics::SimParams sim = calibrated_sim(cfg);
  const servo::FringeModel fringe = dynamics::fringe_model(cfg.plan.system, sim);
  servo::ServoConfig sc = cfg.plan.servo;
  sc.setpoint = fringe.mean_rate;
  sc = servo::select_slope(sc, servo::Slope::positive);
  if (sc.gain <= 0.0) sc.gain = servo::nominal_gain(fringe, sc.integration_time);
  servo::LockRunOptions opt;
  opt.duration = cfg.lock.duration_s;
  opt.initial_offset = cfg.lock.initial_offset_m != 0.0
                           ? cfg.lock.initial_offset_m
                           : fringe.lock_position(sc.setpoint, servo::Slope::positive, 0);
  opt.seed = ctx.seed;
  const servo::LockRun run = servo::run_lock(fringe, sc, cfg.plan.drift, opt);
  const double window = std::min(cfg.lock.quality_window_s, opt.duration);
  double rms = std::numeric_limits<double>::quiet_NaN();
  if (window >= 10.0 * sc.integration_time) {
    rms = servo::lock_quality(run.telemetry, window, sc.integration_time);
  }
  prepare_out_dir(ctx);
  io::write_atomic(ctx.file("telemetry"), io::telemetry_table(run.telemetry, ctx.format, 10));
  const ordered_json results{
      {"residual_rms_nm", rms},
      {"lost_lock", run.lost_lock},
      {"gain_m_per_count", sc.gain},
      {"stability_limit_gain_m_per_count",
       servo::stability_limit_gain(sc, fringe.midpoint_slope())},
      {"loop_time_constant_s", servo::loop_time_constant(sc, fringe.midpoint_slope())}};
  io::write_atomic(ctx.json("lock"), results.dump(2) + "\n");
  io::write_atomic(ctx.json("manifest"),
                   io::manifest_json(cfg, ctx.seed, "lock", opt.duration, results.dump()));
  out << "lock residual rms = " << rms << " nm" << (run.lost_lock ? " (lock lost)" : "") << '\n';
  if (run.lost_lock) throw RuntimeFailure("servo lost lock");
  return kOk;
}

int cmd_experiment(const Context& ctx, const std::string& kind_name, std::ostream& out) {
  const protocol::ExperimentKind kind = protocol::parse_kind(kind_name);
  protocol::ExperimentPlan plan = ctx.cfg.plan_for(kind);
  plan.validate();

  std::size_t total = 0, excluded = 0;
  double sim_seconds = 0.0;
  ordered_json results;
  auto finish_records = [&](std::span<const protocol::MeasurementRecord> records) {
    total = records.size();
    for (const auto& r : records) {
      if (r.excluded) ++excluded;
      sim_seconds = std::max(sim_seconds, r.wall_time_s);
    }
    sim_seconds += plan.spectrum_duration;
  };

  if (kind == protocol::ExperimentKind::alternating_slope) {
    const protocol::AlternatingResult r = protocol::run_alternating_slope(plan);
    finish_records(r.records);
    prepare_out_dir(ctx);
    io::write_atomic(ctx.file("records"), io::records_table(r.records, ctx.format));
    io::write_atomic(ctx.json("shift"), io::shift_json(r.estimate));
    results = ordered_json::parse(io::shift_json(r.estimate));
    results["model_peak_to_peak_hz"] =
        model::peak_to_peak_shift_hz(plan.system, plan.sim.projection);
    out << "shift = " << r.estimate.shift_hz << " +- " << r.estimate.uncertainty_hz << " Hz ("
        << r.estimate.n_pairs << " pairs, " << r.n_excluded << " excluded); model "
        << results["model_peak_to_peak_hz"].get<double>() << " Hz\n";
  } else {
    const protocol::ScanResult r = kind == protocol::ExperimentKind::pe_scan
                                       ? protocol::run_pe_scan(plan)
                                       : protocol::run_spatial_scan(plan);
    if (kind == protocol::ExperimentKind::pe_scan) {
      finish_records(r.records);
    } else {
      total = r.records.size();
      excluded = r.n_excluded;
      sim_seconds = static_cast<double>(total) *
                    (plan.spectrum_duration +
                     plan.settle_integration_times * plan.servo.integration_time);
    }
    prepare_out_dir(ctx);
    io::write_atomic(ctx.file("records"), io::records_table(r.records, ctx.format));
    io::write_atomic(ctx.file("scan"), io::scan_table(r, ctx.format));
    if (r.reference) io::write_atomic(ctx.file("reference"), io::reference_table(*r.reference, ctx.format));
    if (r.linear) {
      results["linear"] = {{"slope_hz_per_cps", r.linear->slope},
                           {"slope_sigma", r.linear->slope_sigma},
                           {"intercept_hz", r.linear->intercept},
                           {"intercept_sigma_hz", r.linear->intercept_sigma},
                           {"chi2", r.linear->chi2},
                           {"dof", r.linear->dof}};
      out << "linear fit: slope = " << r.linear->slope << " +- " << r.linear->slope_sigma
          << " Hz/(counts/s), intercept = " << r.linear->intercept << " +- "
          << r.linear->intercept_sigma << " Hz\n";
    }
    if (r.sinusoid) {
      results["sinusoid"] = {{"amplitude_hz", r.sinusoid->amplitude},
                             {"period_nm", units::to_nm(r.sinusoid->period)},
                             {"period_sigma_nm", units::to_nm(r.sinusoid->period_sigma)},
                             {"phase_rad", r.sinusoid->phase},
                             {"offset_hz", r.sinusoid->offset},
                             {"extremum_offset_fraction", r.extremum_offset_fraction},
                             {"chi2", r.sinusoid->chi2},
                             {"dof", r.sinusoid->dof}};
      out << "sinusoid fit: amplitude = " << r.sinusoid->amplitude << " Hz, period = "
          << units::to_nm(r.sinusoid->period) << " nm, extremum offset = "
          << r.extremum_offset_fraction << " period\n";
    }
    if (!results.is_null()) io::write_atomic(ctx.json("fit"), results.dump(2) + "\n");
  }
  results["records"] = total;
  results["excluded"] = excluded;
  io::write_atomic(ctx.json("manifest"),
                   io::manifest_json(ctx.cfg, ctx.seed, std::string("experiment ") +
                                                           protocol::kind_name(kind),
                                     sim_seconds, results.dump()));
  if (total > 0 &&
      static_cast<double>(excluded) > plan.max_excluded_fraction * static_cast<double>(total)) {
    throw RuntimeFailure(std::to_string(excluded) + " of " + std::to_string(total) +
                         " records excluded (lock loss or fit failure)");
  }
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single trapped ion in front of a distant mirror: simulation and analysis",
               "ionmirror"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI configuration file");
  app.add_option("--seed", g.seed, "Master seed (overrides plan.seed)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--format", g.format, "Output table format")
      ->check(CLI::IsMember({"csv", "json"}));

  auto* simulate = app.add_subcommand("simulate", "One run: trajectory and photon counts");
  std::string counts_path;
  auto* spectrum = app.add_subcommand("spectrum", "Counts file to PSD and Lorentzian fit");
  spectrum->add_option("counts", counts_path, "Counts file written by simulate")->required();
  auto* lock = app.add_subcommand("lock", "Servo-only lock stress test with drift injection");
  std::string kind;
  auto* experiment = app.add_subcommand("experiment", "Full measurement protocol");
  experiment->add_option("kind", kind, "alternating | pe-scan | spatial-scan")
      ->required()
      ->check(CLI::IsMember({"alternating", "pe-scan", "spatial-scan"}));
  auto* predict = app.add_subcommand("predict", "Print the closed-form model quantities");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  Context ctx;
  try {
    ctx = make_context(g);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (predict->parsed()) return cmd_predict(ctx, out);
    if (simulate->parsed()) return cmd_simulate(ctx, out);
    if (spectrum->parsed()) return cmd_spectrum(ctx, counts_path, out);
    if (lock->parsed()) return cmd_lock(ctx, out);
    if (experiment->parsed()) return cmd_experiment(ctx, kind, out);
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const protocol::ProtocolError& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  err << app.help();
  return kUsageError;
}

}  // namespace ionmirror::cli
