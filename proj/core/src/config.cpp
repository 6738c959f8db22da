#include "ionmirror/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ionmirror/units.hpp"

namespace ionmirror::config {

namespace {

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number(key, item));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of numbers");
  return out;
}

std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_number(v[i]);
  }
  return s;
}

struct Key {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Access>
Key number(std::string section, std::string name, double scale, Access access) {
  return Key{section, name,
             [=](RunConfig& c, const std::string& key, const std::string& v) {
               access(c) = parse_number(key, v) * scale;
             },
             [=](const RunConfig& c) {
               return format_number(access(const_cast<RunConfig&>(c)) / scale);
             }};
}

template <class Access>
Key count(std::string section, std::string name, Access access) {
  return Key{section, name,
             [=](RunConfig& c, const std::string& key, const std::string& v) {
               access(c) = static_cast<std::remove_reference_t<decltype(access(c))>>(
                   parse_unsigned(key, v));
             },
             [=](const RunConfig& c) {
               return std::to_string(access(const_cast<RunConfig&>(c)));
             }};
}

template <class Access>
Key flag(std::string section, std::string name, Access access) {
  return Key{section, name,
             [=](RunConfig& c, const std::string& key, const std::string& v) {
               access(c) = parse_bool(key, v);
             },
             [=](const RunConfig& c) {
               return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false");
             }};
}

template <class Access>
Key list(std::string section, std::string name, Access access) {
  return Key{section, name,
             [=](RunConfig& c, const std::string& key, const std::string& v) {
               access(c) = parse_list(key, v);
             },
             [=](const RunConfig& c) { return format_list(access(const_cast<RunConfig&>(c))); }};
}

const std::vector<Key>& registry() {
  using C = RunConfig;
  constexpr double hz_to_w = constants::two_pi;
  static const std::vector<Key> keys = {
      number("ion", "mass_amu", constants::atomic_mass_unit, [](C& c) -> double& { return c.plan.system.ion.mass_kg; }),
      number("ion", "linewidth_mhz", 1e6 * hz_to_w, [](C& c) -> double& { return c.plan.system.ion.decay_rate; }),
      number("ion", "wavelength_nm", 1e-9, [](C& c) -> double& { return c.plan.system.ion.wavelength_m; }),
      number("mirror", "epsilon", 1.0, [](C& c) -> double& { return c.plan.system.mirror.epsilon; }),
      number("mirror", "distance_m", 1.0, [](C& c) -> double& { return c.plan.system.mirror.nominal_distance_m; }),
      number("trap", "frequency_mhz", 1e6 * hz_to_w, [](C& c) -> double& { return c.plan.system.trap.omega_trap; }),
      number("trap", "mode_angle_deg", std::numbers::pi / 180.0, [](C& c) -> double& { return c.plan.system.trap.mode_angle_rad; }),
      number("excitation", "p_e", 1.0, [](C& c) -> double& { return c.plan.system.excitation.p_e; }),
      number("excitation", "saturation", 1.0, [](C& c) -> double& { return c.saturation; }),
      number("excitation", "detuning_mhz", 1.0, [](C& c) -> double& { return c.detuning_mhz; }),
      number("excitation", "calibration_rate_cps", 1.0, [](C& c) -> double& { return c.calibration_rate_cps; }),
      number("excitation", "calibration_p_e", 1.0, [](C& c) -> double& { return c.calibration_pe; }),
      number("sim", "dt_ns", 1e-9, [](C& c) -> double& { return c.plan.sim.dt; }),
      number("sim", "bin_width_ns", 1e-9, [](C& c) -> double& { return c.plan.sim.bin_width; }),
      number("sim", "projection", 1.0, [](C& c) -> double& { return c.plan.sim.projection; }),
      Key{"sim", "detection_efficiency",
          [](C& c, const std::string& key, const std::string& v) {
            c.plan.sim.detection_efficiency = parse_number(key, v);
            c.detection_efficiency_explicit = true;
          },
          [](const C& c) { return format_number(c.plan.sim.detection_efficiency); }},
      number("sim", "fringe_visibility", 1.0, [](C& c) -> double& { return c.plan.sim.fringe_visibility; }),
      number("sim", "cooling_rate_per_s", 1.0, [](C& c) -> double& { return c.plan.sim.cooling_rate; }),
      number("sim", "diffusion_m2_per_s3", 1.0, [](C& c) -> double& { return c.plan.sim.diffusion; }),
      number("sim", "mirror_offset_nm", 1e-9, [](C& c) -> double& { return c.plan.sim.mirror_offset; }),
      flag("sim", "thermal_start", [](C& c) -> bool& { return c.plan.sim.thermal_start; }),
      count("sim", "record_stride", [](C& c) -> std::size_t& { return c.plan.sim.record_stride; }),
      number("sim", "duration_s", 1.0, [](C& c) -> double& { return c.plan.sim.duration; }),
      flag("cooling", "calibrate", [](C& c) -> bool& { return c.plan.cooling.calibrate; }),
      number("cooling", "fwhm_hz", 1.0, [](C& c) -> double& { return c.plan.cooling.fwhm_hz; }),
      number("cooling", "snr_db", 1.0, [](C& c) -> double& { return c.plan.cooling.snr_db; }),
      number("cooling", "reference_rate_cps", 1.0, [](C& c) -> double& { return c.plan.cooling.reference_rate; }),
      number("servo", "gain_m_per_count", 1.0, [](C& c) -> double& { return c.plan.servo.gain; }),
      number("servo", "integration_time_s", 1.0, [](C& c) -> double& { return c.plan.servo.integration_time; }),
      number("servo", "smoothing_window_s", 1.0, [](C& c) -> double& { return c.plan.servo.smoothing_window; }),
      number("servo", "actuator_range_nm", 1e-9, [](C& c) -> double& { return c.plan.servo.actuator_range; }),
      number("servo", "update_period_ms", 1e-3, [](C& c) -> double& { return c.plan.servo.update_period; }),
      number("spectral", "rbw_hz", 1.0, [](C& c) -> double& { return c.plan.spectrum.resolution_bandwidth_hz; }),
      number("spectral", "overlap", 1.0, [](C& c) -> double& { return c.plan.spectrum.overlap; }),
      Key{"spectral", "window",
          [](C& c, const std::string& key, const std::string& v) {
            try {
              c.plan.spectrum.window = spectral::parse_window(trim(v));
            } catch (const spectral::SpectralError& e) {
              throw ConfigError(key + ": " + e.what());
            }
          },
          [](const C& c) { return std::string(spectral::window_name(c.plan.spectrum.window)); }},
      number("spectral", "fit_half_width_hz", 1.0, [](C& c) -> double& { return c.plan.spectrum.fit_half_width_hz; }),
      count("plan", "n_spectra", [](C& c) -> std::size_t& { return c.plan.n_spectra; }),
      number("plan", "spectrum_duration_s", 1.0, [](C& c) -> double& { return c.plan.spectrum_duration; }),
      list("plan", "pe_points", [](C& c) -> std::vector<double>& { return c.pe_points; }),
      list("plan", "setpoint_offsets", [](C& c) -> std::vector<double>& { return c.setpoint_offsets; }),
      Key{"plan", "fringe_orders",
          [](C& c, const std::string& key, const std::string& v) {
            c.plan.fringe_orders = static_cast<int>(parse_unsigned(key, v));
          },
          [](const C& c) { return std::to_string(c.plan.fringe_orders); }},
      count("plan", "seed", [](C& c) -> std::uint64_t& { return c.plan.master_seed; }),
      number("plan", "settle_integration_times", 1.0, [](C& c) -> double& { return c.plan.settle_integration_times; }),
      number("plan", "max_excluded_fraction", 1.0, [](C& c) -> double& { return c.plan.max_excluded_fraction; }),
      number("plan", "trap_drift_hz_per_record", 1.0, [](C& c) -> double& { return c.plan.trap_drift_hz_per_record; }),
      number("drift", "linear_nm_per_s", 1e-9, [](C& c) -> double& { return c.plan.drift.linear_rate; }),
      number("drift", "sine_amplitude_nm", 1e-9, [](C& c) -> double& { return c.plan.drift.sine_amplitude; }),
      number("drift", "sine_frequency_hz", 1.0, [](C& c) -> double& { return c.plan.drift.sine_frequency; }),
      number("drift", "random_walk_nm_per_sqrt_s", 1e-9, [](C& c) -> double& { return c.plan.drift.random_walk; }),
      number("lock", "duration_s", 1.0, [](C& c) -> double& { return c.lock.duration_s; }),
      number("lock", "initial_offset_nm", 1e-9, [](C& c) -> double& { return c.lock.initial_offset_m; }),
      number("lock", "quality_window_s", 1.0, [](C& c) -> double& { return c.lock.quality_window_s; }),
  };
  return keys;
}

}  // namespace

RunConfig defaults() {
  RunConfig c;
  c.plan.system = model::IonMirrorSystem::typical();
  c.plan.sim.dt = 1.0 / (dynamics::kMinStepsPerPeriod * 1.02e6);
  c.plan.sim.bin_width = 1e-7;
  c.plan.sim.projection = 1.0;
  c.plan.sim.fringe_visibility = 0.95;
  c.plan.sim.duration = 1.0;
  c.plan.sim.mirror_offset = model::positive_slope_midpoint(c.plan.system.ion);
  c.plan.servo.integration_time = 1.0;
  c.plan.servo.smoothing_window = 0.1;
  c.plan.servo.update_period = 1e-3;
  c.plan.servo.actuator_range = 1e-5;
  c.plan.n_spectra = 60;
  c.plan.spectrum_duration = 5.0;
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  if (saturation >= 0.0) {
    plan.system.excitation = model::Excitation::from_saturation(
        saturation, units::mhz_to_angular(detuning_mhz), plan.system.ion.decay_rate);
  }
  try {
    plan.system.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (!detection_efficiency_explicit) {
    try {
      plan.sim.detection_efficiency =
          protocol::detection_efficiency_for(calibration_rate_cps, calibration_pe, plan.system.ion);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("excitation.calibration_rate_cps: ") + e.what());
    }
  }
  if (!(lock.duration_s > 0.0)) throw ConfigError("lock.duration_s must be > 0");
  if (!(lock.quality_window_s > 0.0)) throw ConfigError("lock.quality_window_s must be > 0");
  for (double p : pe_points) {
    if (!(p > 0.0 && p <= 0.5)) throw ConfigError("plan.pe_points: values must lie in (0, 0.5]");
  }
  for (double o : setpoint_offsets) {
    if (!(o > -1.0 && o < 1.0)) throw ConfigError("plan.setpoint_offsets: values must lie in (-1, 1)");
  }
  try {
    plan.servo.validate();
    dynamics::SimParams s = plan.sim;
    s.resolve(plan.system);
    s.validate(plan.system);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

protocol::ExperimentPlan RunConfig::plan_for(protocol::ExperimentKind kind) const {
  protocol::ExperimentPlan p = plan;
  p.kind = kind;
  if (kind == protocol::ExperimentKind::pe_scan) p.scan_points = pe_points;
  if (kind == protocol::ExperimentKind::spatial_scan) p.scan_points = setpoint_offsets;
  return p;
}

RunConfig parse(std::istream& in, const std::string& source) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  std::map<std::string, const Key*> lookup;
  std::set<std::string> sections;
  for (const Key& k : registry()) {
    lookup[k.section + "." + k.name] = &k;
    sections.insert(k.section);
  }
  RunConfig cfg = defaults();
  cfg.detection_efficiency_explicit = false;
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      throw ConfigError(source + ": unknown section [" + section + "]");
    }
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(source + ": key '" + section + "' outside a section");
    }
    for (const auto& [name, value] : body) {
      const std::string key = section + "." + name;
      const auto it = lookup.find(key);
      if (it == lookup.end()) throw ConfigError(source + ": unknown key " + key);
      it->second->set(cfg, key, value.data());
    }
  }
  cfg.finalize();
  return cfg;
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in, path);
}

std::string to_ini(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const Key& k : registry()) {
    if (k.section == "sim" && k.name == "detection_efficiency" && !cfg.detection_efficiency_explicit) {
      continue;
    }
    if (k.section == "excitation" && (k.name == "saturation" || k.name == "detuning_mhz") &&
        cfg.saturation < 0.0) {
      continue;
    }
    if (k.section != section) {
      if (!section.empty()) out << '\n';
      section = k.section;
      out << '[' << section << "]\n";
    }
    out << k.name << " = " << k.get(cfg) << '\n';
  }
  return out.str();
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const Key& k : registry()) out.push_back(k.section + "." + k.name);
  return out;
}

}  // namespace ionmirror::config
