#include "ionmirror/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "ionmirror/units.hpp"

namespace ionmirror::protocol {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ProtocolError(what);
}

double bare_trap_hz(const model::IonMirrorSystem& sys) {
  return units::angular_to_hz(sys.trap.omega_trap);
}

// State carried between the records of one experiment.
struct Apparatus {
  servo::ServoState state;
  servo::DriftInjector drift;
  double clock = 0.0;
};

struct LockTarget {
  double setpoint;
  servo::Slope slope;
  double position;  // lock position inferred from the fringe model
};

servo::ServoConfig servo_for(const ExperimentPlan& plan, const servo::FringeModel& fringe,
                             const LockTarget& target) {
  servo::ServoConfig cfg = servo::select_slope(plan.servo, target.slope);
  cfg.setpoint = target.setpoint;
  if (cfg.gain <= 0.0) cfg.gain = servo::nominal_gain(fringe, cfg.integration_time);
  return cfg;
}

MeasurementRecord measure(const ExperimentPlan& plan, const model::IonMirrorSystem& sys,
                          const LockTarget& target, double mirror_offset, Apparatus& app,
                          std::uint64_t seed) {
  dynamics::SimParams sim = plan.sim;
  sim.duration = plan.spectrum_duration;
  sim.seed = seed;
  sim.mirror_offset = mirror_offset;
  sim.record_stride = 0;
  const servo::FringeModel fringe = dynamics::fringe_model(sys, sim);
  const servo::ServoConfig cfg = servo_for(plan, fringe, target);

  MeasurementRecord rec;
  rec.wall_time_s = app.clock;
  rec.slope = servo::slope_sign(target.slope);
  rec.mirror_position_m = target.position;

  // Settle on the servo-only fringe model; retry a few times if the loop has
  // not reached the requested slope yet.
  Engine settle_rng = make_stream(seed, 1);
  const double settle = plan.settle_integration_times * cfg.integration_time;
  for (int attempt = 0; attempt < 4; ++attempt) {
    app.state = servo::evolve_lock(fringe, cfg, app.state, mirror_offset, settle, app.drift,
                                   settle_rng);
    app.clock += settle;
    const double z = mirror_offset + app.state.mirror_displacement + app.drift.value();
    if (app.state.saturated || servo::on_lock_slope(fringe, cfg, z)) break;
  }

  dynamics::ServoLoop loop{.config = cfg, .state = app.state, .drift = app.drift,
                           .telemetry = {}, .record_telemetry = false};
  const dynamics::RunResult run = dynamics::simulate_run(sys, sim, &loop);
  app.state = loop.state;
  app.drift = loop.drift;
  app.clock += run.photons.duration;
  rec.mean_rate = static_cast<double>(run.photons.event_times.size()) / run.photons.duration;

  const double z_end = mirror_offset + app.state.mirror_displacement + app.drift.value();
  if (app.state.saturated || !servo::on_lock_slope(fringe, cfg, z_end)) {
    rec.excluded = true;
    rec.exclusion_reason = "lock lost";
    // Re-arm the actuator for the next record.
    app.state = servo::ServoState::initial(0.0, cfg.setpoint);
    return rec;
  }

  const spectral::WelchSettings ws{
      .sample_interval = sim.bin_width,
      .segment_length =
          spectral::segment_length_for(plan.spectrum.resolution_bandwidth_hz, sim.bin_width),
      .overlap = plan.spectrum.overlap,
      .window = plan.spectrum.window};
  const spectral::PowerSpectrum psd =
      spectral::spectrum_from_events(run.photons.event_times, 0.0, run.photons.duration, ws);
  const double fc = bare_trap_hz(sys);
  rec.fit = spectral::fit_lorentzian(psd, fc - plan.spectrum.fit_half_width_hz,
                                     fc + plan.spectrum.fit_half_width_hz);
  if (!rec.fit.converged) {
    rec.excluded = true;
    rec.exclusion_reason = "fit did not converge";
  } else if (!rec.fit.peak_found) {
    rec.excluded = true;
    rec.exclusion_reason = "no sideband peak";
  }
  if (rec.fit.converged && rec.fit.floor > 0.0) rec.snr_db = spectral::snr_db(rec.fit);
  return rec;
}

AlternatingResult alternating(const ExperimentPlan& plan) {
  const model::IonMirrorSystem& base = plan.system;
  dynamics::SimParams sim = plan.sim;
  const servo::FringeModel fringe = dynamics::fringe_model(base, sim);
  const double setpoint = fringe.mean_rate;
  const double mirror_offset = fringe.lock_position(setpoint, servo::Slope::positive, 0);

  Apparatus app{.state = servo::ServoState::initial(0.0, setpoint),
                .drift = servo::DriftInjector(plan.drift)};
  AlternatingResult out;
  out.records.reserve(plan.n_spectra);
  for (std::size_t i = 0; i < plan.n_spectra; ++i) {
    model::IonMirrorSystem sys = base;
    sys.trap.omega_trap += units::hz_to_angular(plan.trap_drift_hz_per_record * static_cast<double>(i));
    const servo::Slope slope = i % 2 == 0 ? servo::Slope::positive : servo::Slope::negative;
    const LockTarget target{setpoint, slope, fringe.lock_position(setpoint, slope, 0)};
    MeasurementRecord rec =
        measure(plan, sys, target, mirror_offset, app, derive_seed(plan.master_seed, i));
    rec.index = i;
    if (rec.excluded) ++out.n_excluded;
    out.records.push_back(std::move(rec));
  }
  try {
    out.estimate = estimate_shift(out.records);
  } catch (const ProtocolError&) {
    out.estimate = ShiftEstimate{.shift_hz = std::numeric_limits<double>::quiet_NaN(),
                                 .uncertainty_hz = std::numeric_limits<double>::infinity(),
                                 .n_pairs = 0,
                                 .per_pair_values = {}};
  }
  return out;
}

}  // namespace

ExperimentKind parse_kind(const std::string& name) {
  if (name == "alternating" || name == "alternating_slope") return ExperimentKind::alternating_slope;
  if (name == "pe-scan" || name == "pe_scan") return ExperimentKind::pe_scan;
  if (name == "spatial-scan" || name == "spatial_scan") return ExperimentKind::spatial_scan;
  throw ProtocolError("unknown experiment kind '" + name + "'");
}

const char* kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::alternating_slope: return "alternating";
    case ExperimentKind::pe_scan: return "pe-scan";
    case ExperimentKind::spatial_scan: return "spatial-scan";
  }
  return "unknown";
}

void ExperimentPlan::validate() const {
  system.validate();
  require(spectrum_duration > 0.0, "plan.spectrum_duration_s must be > 0");
  require(n_spectra >= 1, "plan.n_spectra must be >= 1");
  if (kind == ExperimentKind::alternating_slope) {
    require(n_spectra % 2 == 0, "plan.n_spectra must be even for alternating runs");
    require(n_spectra >= 4, "plan.n_spectra must be >= 4 for alternating runs");
  }
  if (kind == ExperimentKind::pe_scan) {
    require(!scan_points.empty(), "plan.scan_points must be nonempty for pe-scan");
    for (double p : scan_points) {
      require(p > 0.0 && p <= 0.5, "plan.scan_points: P_e values must lie in (0, 0.5]");
    }
    require(n_spectra >= 4 && n_spectra % 2 == 0, "plan.n_spectra must be even and >= 4");
  }
  if (kind == ExperimentKind::spatial_scan) {
    require(!scan_points.empty(), "plan.scan_points must be nonempty for spatial-scan");
    require(fringe_orders >= 1, "plan.fringe_orders must be >= 1");
  }
  require(settle_integration_times >= 0.0, "plan.settle_integration_times must be >= 0");
  require(max_excluded_fraction >= 0.0 && max_excluded_fraction <= 1.0,
          "plan.max_excluded_fraction must lie in [0, 1]");
  require(spectrum.resolution_bandwidth_hz > 0.0, "spectral.rbw_hz must be > 0");
  require(spectrum.fit_half_width_hz > 0.0, "spectral.fit_half_width_hz must be > 0");
  require(spectrum.overlap >= 0.0 && spectrum.overlap <= 0.9,
          "spectral.overlap must lie in [0, 0.9]");
  servo.validate();
  dynamics::SimParams s = sim;
  s.duration = spectrum_duration;
  s.resolve(system);
  try {
    s.validate(system);
  } catch (const dynamics::DynamicsError& e) {
    throw ProtocolError(e.what());
  }
}

ExperimentPlan resolve_plan(ExperimentPlan plan) {
  plan.validate();
  plan.sim.resolve(plan.system);
  if (plan.cooling.calibrate) {
    const dynamics::CoolingParams cp =
        dynamics::calibrate_cooling(plan.cooling.fwhm_hz, plan.system, plan.sim,
                                    plan.cooling.snr_db, plan.cooling.reference_rate);
    plan.sim.cooling_rate = cp.cooling_rate;
    plan.sim.diffusion = cp.diffusion;
  }
  return plan;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  Engine e = make_stream(master, index);
  return e();
}

double detection_efficiency_for(double rate, double p_e, const model::IonSpecies& ion) {
  require(rate > 0.0 && p_e > 0.0, "count-rate calibration needs positive rate and P_e");
  const double eta = rate / (p_e * ion.decay_rate);
  require(eta <= 1.0, "count-rate calibration implies a detection efficiency above 1");
  return eta;
}

ShiftEstimate estimate_shift(std::span<const MeasurementRecord> records) {
  require(records.size() >= 3, "estimate_shift needs at least 3 records");
  for (std::size_t i = 0; i < records.size(); ++i) {
    require(records[i].slope == 1 || records[i].slope == -1, "record slope must be +1 or -1");
    if (i > 0) {
      require(records[i].slope == -records[i - 1].slope,
              "estimate_shift needs a slope-alternating sequence");
    }
  }
  ShiftEstimate est;
  std::vector<std::size_t> where;
  for (std::size_t i = 1; i + 1 < records.size(); ++i) {
    if (records[i - 1].excluded || records[i].excluded || records[i + 1].excluded) continue;
    const double pair = records[i].slope * (records[i].fit.f0 -
                                            0.5 * (records[i - 1].fit.f0 + records[i + 1].fit.f0));
    est.per_pair_values.push_back(pair);
    where.push_back(i);
  }
  est.n_pairs = est.per_pair_values.size();
  require(est.n_pairs >= 1, "estimate_shift: no triple of included records");
  const double n = static_cast<double>(est.n_pairs);
  double mean = 0.0;
  for (double v : est.per_pair_values) mean += v;
  mean /= n;
  est.shift_hz = mean;
  if (est.n_pairs < 2) {
    est.uncertainty_hz = std::numeric_limits<double>::infinity();
    return est;
  }
  double ss = 0.0;
  for (double v : est.per_pair_values) ss += (v - mean) * (v - mean);
  const double var = ss / (n - 1.0);
  double weight = 0.0;
  for (std::size_t a = 0; a < where.size(); ++a) {
    for (std::size_t b = 0; b < where.size(); ++b) {
      const std::size_t lag = where[a] > where[b] ? where[a] - where[b] : where[b] - where[a];
      weight += lag == 0 ? 1.0 : lag == 1 ? 2.0 / 3.0 : lag == 2 ? 1.0 / 6.0 : 0.0;
    }
  }
  est.uncertainty_hz = std::sqrt(var * weight) / n;
  return est;
}

AlternatingResult run_alternating_slope(const ExperimentPlan& plan) {
  return alternating(resolve_plan(plan));
}

LinearFit fit_line(std::span<const double> x, std::span<const double> y,
                   std::span<const double> sigma) {
  require(x.size() == y.size() && x.size() == sigma.size(), "fit_line: array sizes differ");
  require(x.size() >= 2, "fit_line needs at least 2 points");
  double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(sigma[i] > 0.0 && std::isfinite(sigma[i]), "fit_line: sigma must be finite and > 0");
    const double w = 1.0 / (sigma[i] * sigma[i]);
    s += w;
    sx += w * x[i];
    sy += w * y[i];
    sxx += w * x[i] * x[i];
    sxy += w * x[i] * y[i];
  }
  const double det = s * sxx - sx * sx;
  require(det > 0.0, "fit_line: degenerate abscissae");
  LinearFit fit;
  fit.slope = (s * sxy - sx * sy) / det;
  fit.intercept = (sxx * sy - sx * sxy) / det;
  fit.slope_sigma = std::sqrt(s / det);
  fit.intercept_sigma = std::sqrt(sxx / det);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = (y[i] - fit.intercept - fit.slope * x[i]) / sigma[i];
    fit.chi2 += r * r;
  }
  fit.dof = x.size() - 2;
  return fit;
}

double SinusoidFit::operator()(double z) const {
  return amplitude * std::sin(2.0 * std::numbers::pi * z / period + phase) + offset;
}

double SinusoidFit::maximum_position() const {
  const double z = (0.5 * std::numbers::pi - phase) * period / (2.0 * std::numbers::pi);
  const double r = std::fmod(z, period);
  return r < 0.0 ? r + period : r;
}

SinusoidFit fit_sinusoid(std::span<const double> z, std::span<const double> y,
                         std::span<const double> sigma, double period_guess) {
  const std::size_t n = z.size();
  require(n == y.size() && n == sigma.size(), "fit_sinusoid: array sizes differ");
  require(n >= 5, "fit_sinusoid needs at least 5 points");
  require(period_guess > 0.0, "fit_sinusoid: period guess must be > 0");
  for (double s : sigma) {
    require(s > 0.0 && std::isfinite(s), "fit_sinusoid: sigma must be finite and > 0");
  }
  double zc = 0.0;
  for (double v : z) zc += v;
  zc /= static_cast<double>(n);

  const auto N = static_cast<Eigen::Index>(n);
  Eigen::VectorXd w(N), yy(N), u(N);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    w(r) = 1.0 / sigma[i];
    yy(r) = y[i];
    u(r) = z[i] - zc;
  }

  // Linear start at the guessed period: y = a sin(ku) + b cos(ku) + c.
  double k = 2.0 * std::numbers::pi / period_guess;
  Eigen::MatrixXd basis(N, 3);
  for (Eigen::Index r = 0; r < N; ++r) {
    basis(r, 0) = w(r) * std::sin(k * u(r));
    basis(r, 1) = w(r) * std::cos(k * u(r));
    basis(r, 2) = w(r);
  }
  const Eigen::Vector3d lin =
      basis.colPivHouseholderQr().solve(yy.cwiseProduct(w));
  // theta = (A, k, phi', c) in y = A sin(k u + phi') + c.
  Eigen::Vector4d theta(std::hypot(lin(0), lin(1)), k, std::atan2(lin(1), lin(0)), lin(2));

  auto residuals = [&](const Eigen::Vector4d& t) {
    Eigen::VectorXd r(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      r(i) = w(i) * (yy(i) - (t(0) * std::sin(t(1) * u(i) + t(2)) + t(3)));
    }
    return r;
  };
  auto jac = [&](const Eigen::Vector4d& t) {
    Eigen::MatrixXd j(N, 4);
    for (Eigen::Index i = 0; i < N; ++i) {
      const double arg = t(1) * u(i) + t(2);
      j(i, 0) = w(i) * std::sin(arg);
      j(i, 1) = w(i) * t(0) * u(i) * std::cos(arg);
      j(i, 2) = w(i) * t(0) * std::cos(arg);
      j(i, 3) = w(i);
    }
    return j;
  };

  SinusoidFit fit;
  double cost = residuals(theta).squaredNorm();
  double lambda = 1e-3;
  for (int it = 0; it < 200; ++it) {
    const Eigen::MatrixXd j = jac(theta);
    const Eigen::Matrix4d h = j.transpose() * j;
    const Eigen::Vector4d g = j.transpose() * residuals(theta);
    const Eigen::Vector4d gn = h.ldlt().solve(g);
    auto relative = [&](const Eigen::Vector4d& d) {
      const double scales[4] = {std::abs(theta(0)) + 1e-300, theta(1), 1.0,
                                std::abs(theta(0)) + std::abs(theta(3)) + 1e-300};
      double rel = 0.0;
      for (int q = 0; q < 4; ++q) rel = std::max(rel, std::abs(d(q)) / scales[q]);
      return rel;
    };
    if (gn.allFinite() && relative(gn) < 1e-10) {
      fit.converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted && lambda < 1e16) {
      Eigen::Matrix4d damped = h;
      for (int q = 0; q < 4; ++q) damped(q, q) += lambda * std::max(h(q, q), 1e-300);
      const Eigen::Vector4d step = damped.ldlt().solve(g);
      const Eigen::Vector4d trial = theta + step;
      const double c = trial(1) > 0.0 ? residuals(trial).squaredNorm() : INFINITY;
      if (c <= cost) {
        theta = trial;
        cost = c;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (relative(step) < 1e-10) fit.converged = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (fit.converged || !accepted) break;
  }

  const Eigen::MatrixXd j = jac(theta);
  const Eigen::Matrix4d cov =
      (j.transpose() * j).completeOrthogonalDecomposition().pseudoInverse();
  double a = theta(0), phi_c = theta(2);
  if (a < 0.0) {
    a = -a;
    phi_c += std::numbers::pi;
  }
  k = theta(1);
  // Back to y = A sin(k z + phi) + c: phi = phi' - k zc.
  double phi = std::remainder(phi_c - k * zc, 2.0 * std::numbers::pi);
  fit.amplitude = a;
  fit.period = 2.0 * std::numbers::pi / k;
  fit.phase = phi;
  fit.offset = theta(3);
  fit.amplitude_sigma = std::sqrt(std::max(0.0, cov(0, 0)));
  fit.period_sigma = 2.0 * std::numbers::pi / (k * k) * std::sqrt(std::max(0.0, cov(1, 1)));
  const double var_phi = cov(2, 2) + zc * zc * cov(1, 1) - 2.0 * zc * cov(1, 2);
  fit.phase_sigma = std::sqrt(std::max(0.0, var_phi));
  fit.offset_sigma = std::sqrt(std::max(0.0, cov(3, 3)));
  fit.chi2 = cost;
  fit.dof = n - 4;
  return fit;
}

ReferenceCurves reference_curves(const model::IonMirrorSystem& sys, double z_min, double z_max,
                                 std::size_t n) {
  require(n >= 2 && z_max > z_min, "reference curves need n >= 2 and z_max > z_min");
  ReferenceCurves rc;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = z_min + (z_max - z_min) * static_cast<double>(i) / static_cast<double>(n - 1);
    rc.z_m.push_back(z);
    rc.decay_rate_hz.push_back(units::angular_to_hz(model::modified_decay_rate(z, sys)));
    rc.level_shift_hz.push_back(model::mirror_potential(z, sys) / constants::planck);
  }
  return rc;
}

ScanResult run_pe_scan(const ExperimentPlan& input) {
  const ExperimentPlan plan = resolve_plan(input);
  ScanResult out;
  std::size_t next_index = 0;
  for (std::size_t j = 0; j < plan.scan_points.size(); ++j) {
    ExperimentPlan point = plan;
    point.system.excitation.p_e = plan.scan_points[j];
    point.master_seed = derive_seed(plan.master_seed, 1000000 + j);
    AlternatingResult r = alternating(point);

    ScanPoint sp;
    sp.scan_value = plan.scan_points[j];
    double rate_sum = 0.0;
    std::size_t used = 0;
    for (MeasurementRecord& rec : r.records) {
      rec.scan_value = sp.scan_value;
      rec.index = next_index++;
      if (!rec.excluded) {
        rate_sum += rec.mean_rate;
        ++used;
      }
      out.records.push_back(rec);
    }
    out.n_excluded += r.n_excluded;
    sp.x = used > 0 ? rate_sum / static_cast<double>(used) : 0.0;
    sp.shift_hz = r.estimate.shift_hz;
    sp.shift_sigma_hz = r.estimate.uncertainty_hz;
    sp.excluded = used == 0 || !std::isfinite(sp.shift_hz) || !std::isfinite(sp.shift_sigma_hz) ||
                  !(sp.shift_sigma_hz > 0.0);
    out.points.push_back(sp);
  }
  std::vector<double> x, y, s;
  for (const ScanPoint& p : out.points) {
    if (p.excluded) continue;
    x.push_back(p.x);
    y.push_back(p.shift_hz);
    s.push_back(p.shift_sigma_hz);
  }
  if (x.size() >= 2) out.linear = fit_line(x, y, s);
  return out;
}

ScanResult run_spatial_scan(const ExperimentPlan& input) {
  const ExperimentPlan plan = resolve_plan(input);
  const model::IonMirrorSystem& sys = plan.system;
  const servo::FringeModel fringe = dynamics::fringe_model(sys, plan.sim);
  const double half_wave = 0.5 * sys.ion.wavelength_m;

  ScanResult out;
  std::size_t index = 0;
  for (int order = 0; order < plan.fringe_orders; ++order) {
    for (const servo::Slope slope : {servo::Slope::positive, servo::Slope::negative}) {
      for (double o : plan.scan_points) {
        const std::size_t i = index++;
        ScanPoint sp;
        sp.scan_value = o;
        MeasurementRecord rec;
        rec.index = i;
        rec.slope = servo::slope_sign(slope);
        rec.scan_value = o;
        const double setpoint = fringe.mean_rate * (1.0 + o * fringe.visibility);
        double z = 0.0;
        try {
          z = fringe.lock_position(setpoint, slope, order);
        } catch (const servo::ServoError&) {
          rec.excluded = true;
          rec.exclusion_reason = "setpoint beyond fringe extremes";
        }
        if (!rec.excluded) {
          Apparatus app{.state = servo::ServoState::initial(0.0, setpoint),
                        .drift = servo::DriftInjector(plan.drift)};
          rec = measure(plan, sys, LockTarget{setpoint, slope, z}, z, app,
                        derive_seed(plan.master_seed, i));
          rec.index = i;
          rec.scan_value = o;
        }
        sp.x = z;
        sp.shift_hz = rec.fit.f0 - bare_trap_hz(sys);
        sp.shift_sigma_hz = rec.fit.f0_uncertainty;
        sp.excluded = rec.excluded || !(sp.shift_sigma_hz > 0.0);
        if (rec.excluded) ++out.n_excluded;
        out.points.push_back(sp);
        out.records.push_back(std::move(rec));
      }
    }
  }
  std::stable_sort(out.points.begin(), out.points.end(),
                   [](const ScanPoint& a, const ScanPoint& b) { return a.x < b.x; });

  std::vector<double> x, y, s;
  for (const ScanPoint& p : out.points) {
    if (p.excluded) continue;
    x.push_back(p.x);
    y.push_back(p.shift_hz);
    s.push_back(p.shift_sigma_hz);
  }
  if (x.size() >= 5) {
    out.sinusoid = fit_sinusoid(x, y, s, half_wave);
    double zc = 0.0;
    for (double v : x) zc += v;
    zc /= static_cast<double>(x.size());
    // Fitted maximum nearest the data centroid, compared with the nearest
    // positive-slope midpoint.
    const SinusoidFit& f = *out.sinusoid;
    double zmax = f.maximum_position();
    zmax += f.period * std::round((zc - zmax) / f.period);
    const double mid = model::positive_slope_midpoint(sys.ion);
    out.extremum_offset_fraction =
        std::abs(std::remainder(zmax - mid, half_wave)) / half_wave;
  }
  if (!x.empty()) {
    const double lo = *std::min_element(x.begin(), x.end()) - 0.25 * half_wave;
    const double hi = *std::max_element(x.begin(), x.end()) + 0.25 * half_wave;
    out.reference = reference_curves(sys, lo, hi, 400);
  }
  return out;
}

}  // namespace ionmirror::protocol
