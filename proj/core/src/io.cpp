#include "ionmirror/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ionmirror/units.hpp"

#ifndef IONMIRROR_VERSION
#define IONMIRROR_VERSION "unknown"
#endif

namespace ionmirror::io {

namespace {

using nlohmann::ordered_json;

std::string num(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Column-oriented table rendered as CSV (header + rows) or as a JSON array
// of row objects.
class Table {
 public:
  explicit Table(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void row(std::vector<ordered_json> cells) { rows_.push_back(std::move(cells)); }

  std::string render(Format format) const {
    if (format == Format::json) {
      ordered_json arr = ordered_json::array();
      for (const auto& r : rows_) {
        ordered_json obj = ordered_json::object();
        for (std::size_t c = 0; c < columns_.size(); ++c) obj[columns_[c]] = r[c];
        arr.push_back(std::move(obj));
      }
      return arr.dump(2) + "\n";
    }
    std::string out;
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (c) out += ',';
      out += columns_[c];
    }
    out += '\n';
    for (const auto& r : rows_) {
      for (std::size_t c = 0; c < r.size(); ++c) {
        if (c) out += ',';
        const ordered_json& v = r[c];
        if (v.is_number_float()) {
          out += num(v.get<double>());
        } else if (v.is_string()) {
          out += v.get<std::string>();
        } else if (v.is_null()) {
          out += "nan";
        } else {
          out += v.dump();
        }
      }
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<ordered_json>> rows_;
};

ordered_json fit_object(const spectral::LorentzianFit& fit) {
  double snr = std::numeric_limits<double>::quiet_NaN();
  if (fit.converged && fit.floor > 0.0) snr = spectral::snr_db(fit);
  return ordered_json{{"f0_hz", fit.f0},
                      {"fwhm_hz", fit.fwhm},
                      {"amplitude", fit.amplitude},
                      {"floor", fit.floor},
                      {"f0_sigma_hz", fit.f0_uncertainty},
                      {"snr_db", snr},
                      {"converged", fit.converged},
                      {"peak_found", fit.peak_found}};
}

}  // namespace

Format parse_format(const std::string& name) {
  if (name == "csv") return Format::csv;
  if (name == "json") return Format::json;
  throw IoError("unknown format '" + name + "' (expected csv or json)");
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw IoError("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string records_table(std::span<const protocol::MeasurementRecord> records, Format format) {
  Table t({"index", "slope", "scan_value", "wall_time_s", "f0_hz", "fwhm_hz", "f0_sigma_hz",
           "snr_db", "mean_rate_cps", "excluded", "reason"});
  for (const auto& r : records) {
    t.row({r.index, r.slope, r.scan_value, r.wall_time_s, r.fit.f0, r.fit.fwhm,
           r.fit.f0_uncertainty, r.snr_db, r.mean_rate, r.excluded ? 1 : 0,
           r.exclusion_reason});
  }
  return t.render(format);
}

std::string scan_table(const protocol::ScanResult& scan, Format format) {
  Table t({"x_value", "shift_hz", "shift_sigma_hz", "scan_value", "excluded"});
  for (const auto& p : scan.points) {
    t.row({p.x, p.shift_hz, p.shift_sigma_hz, p.scan_value, p.excluded ? 1 : 0});
  }
  return t.render(format);
}

std::string reference_table(const protocol::ReferenceCurves& curves, Format format) {
  Table t({"z_nm", "decay_rate_hz", "level_shift_hz"});
  for (std::size_t i = 0; i < curves.z_m.size(); ++i) {
    t.row({units::to_nm(curves.z_m[i]), curves.decay_rate_hz[i], curves.level_shift_hz[i]});
  }
  return t.render(format);
}

std::string spectrum_table(const spectral::PowerSpectrum& spectrum, double f_lo, double f_hi,
                           Format format) {
  Table t({"frequency_hz", "psd"});
  for (std::size_t i = 0; i < spectrum.frequencies.size(); ++i) {
    const double f = spectrum.frequencies[i];
    if (f >= f_lo && f <= f_hi) t.row({f, spectrum.psd[i]});
  }
  return t.render(format);
}

std::string fit_json(const spectral::LorentzianFit& fit) { return fit_object(fit).dump(2) + "\n"; }

std::string shift_json(const protocol::ShiftEstimate& e) {
  ordered_json j{{"shift_hz", e.shift_hz},
                 {"uncertainty_hz", e.uncertainty_hz},
                 {"n_pairs", e.n_pairs},
                 {"per_pair_values", e.per_pair_values}};
  return j.dump(2) + "\n";
}

std::string trajectory_table(const dynamics::Trajectory& tr, Format format) {
  Table t({"time_s", "q_m", "v_m_per_s", "mirror_path_m"});
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    t.row({tr.times[i], tr.positions[i], tr.velocities[i], tr.mirror_path[i]});
  }
  return t.render(format);
}

std::string counts_table(std::span<const std::uint32_t> counts, double bin_width, Format format) {
  std::vector<std::size_t> bins;
  std::vector<std::uint32_t> values;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    bins.push_back(i);
    values.push_back(counts[i]);
  }
  if (format == Format::json) {
    ordered_json j{{"bin_width_s", bin_width},
                   {"n_bins", counts.size()},
                   {"bins", bins},
                   {"counts", values}};
    return j.dump() + "\n";
  }
  std::string out = "# bin_width_s=" + num(bin_width) + "\n# n_bins=" +
                    std::to_string(counts.size()) + "\nbin,counts\n";
  for (std::size_t i = 0; i < bins.size(); ++i) {
    out += std::to_string(bins[i]);
    out += ',';
    out += std::to_string(values[i]);
    out += '\n';
  }
  return out;
}

CountSeries parse_counts(const std::string& text) {
  CountSeries s;
  std::size_t n_bins = 0;
  bool have_n = false;
  std::vector<std::pair<std::size_t, std::uint32_t>> cells;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      const auto j = ordered_json::parse(text);
      s.bin_width = j.at("bin_width_s").get<double>();
      n_bins = j.at("n_bins").get<std::size_t>();
      have_n = true;
      const auto bins = j.at("bins").get<std::vector<std::size_t>>();
      const auto values = j.at("counts").get<std::vector<std::uint32_t>>();
      if (bins.size() != values.size()) throw IoError("counts file: bins and counts differ in length");
      for (std::size_t i = 0; i < bins.size(); ++i) cells.emplace_back(bins[i], values[i]);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("malformed counts file: ") + e.what());
    }
  } else {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      try {
        if (line.rfind("# bin_width_s=", 0) == 0) {
          s.bin_width = std::stod(line.substr(14));
          continue;
        }
        if (line.rfind("# n_bins=", 0) == 0) {
          n_bins = std::stoul(line.substr(9));
          have_n = true;
          continue;
        }
      } catch (const std::exception&) {
        throw IoError("malformed counts header: '" + line + "'");
      }
      if (line[0] == '#' || line.rfind("bin,", 0) == 0) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw IoError("malformed counts line: '" + line + "'");
      try {
        cells.emplace_back(std::stoul(line.substr(0, comma)),
                           static_cast<std::uint32_t>(std::stoul(line.substr(comma + 1))));
      } catch (const std::exception&) {
        throw IoError("malformed counts line: '" + line + "'");
      }
    }
  }
  if (!(s.bin_width > 0.0)) throw IoError("counts file does not define a positive bin width");
  if (!have_n) throw IoError("counts file does not define the number of bins");
  s.counts.assign(n_bins, 0);
  for (const auto& [bin, value] : cells) {
    if (bin >= n_bins) throw IoError("counts file: bin index beyond n_bins");
    s.counts[bin] = value;
  }
  return s;
}

std::string telemetry_table(std::span<const servo::TelemetrySample> telemetry, Format format,
                            std::size_t stride) {
  Table t({"time_s", "mirror_displacement_m", "distance_offset_m", "smoothed_rate", "error_signal",
           "saturated"});
  stride = std::max<std::size_t>(1, stride);
  for (std::size_t i = 0; i < telemetry.size(); i += stride) {
    const auto& s = telemetry[i];
    t.row({s.time, s.mirror_displacement, s.distance_offset, s.smoothed_rate, s.error_signal,
           s.saturated ? 1 : 0});
  }
  return t.render(format);
}

std::string predictions_table(const model::Predictions& p, Format format) {
  Table t({"quantity", "value", "unit"});
  t.row({"vacuum_frequency", p.vacuum_frequency_hz, "Hz"});
  t.row({"shift_amplitude", p.shift_amplitude_hz, "Hz"});
  t.row({"peak_to_peak_shift", p.peak_to_peak_shift_hz, "Hz"});
  t.row({"exact_shift", p.exact_shift_hz, "Hz"});
  t.row({"recoil_frequency", p.recoil_frequency_hz, "Hz"});
  t.row({"max_force", p.max_force_n, "N"});
  t.row({"max_acceleration", p.max_acceleration_mps2, "m/s^2"});
  t.row({"max_acceleration_g", p.max_acceleration_g, "g"});
  t.row({"level_shift_amplitude", p.level_shift_amplitude_hz, "Hz"});
  t.row({"projection", p.projection, "1"});
  return t.render(format);
}

std::string manifest_json(const config::RunConfig& cfg, std::uint64_t seed,
                          const std::string& command, double simulated_seconds,
                          const std::string& extra) {
  const model::Predictions p = model::predict(cfg.plan.system, cfg.plan.sim.projection);
  ordered_json config_obj = ordered_json::object();
  std::istringstream ini(config::to_ini(cfg));
  std::string line, section;
  while (std::getline(ini, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      config_obj[section] = ordered_json::object();
      continue;
    }
    const auto eq = line.find(" = ");
    config_obj[section][line.substr(0, eq)] = line.substr(eq + 3);
  }
  ordered_json j;
  j["config"] = config_obj;
  j["seed"] = seed;
  j["predictions"] = ordered_json{{"vacuum_frequency_hz", p.vacuum_frequency_hz},
                                  {"shift_amplitude_hz", p.shift_amplitude_hz},
                                  {"peak_to_peak_shift_hz", p.peak_to_peak_shift_hz},
                                  {"exact_shift_hz", p.exact_shift_hz},
                                  {"recoil_frequency_hz", p.recoil_frequency_hz},
                                  {"max_force_n", p.max_force_n},
                                  {"max_acceleration_mps2", p.max_acceleration_mps2},
                                  {"max_acceleration_g", p.max_acceleration_g},
                                  {"level_shift_amplitude_hz", p.level_shift_amplitude_hz},
                                  {"projection", p.projection}};
  j["versions"] = ordered_json{{"ionmirror", IONMIRROR_VERSION}, {"format", 1}};
  j["timestamps"] = ordered_json{{"clock", "simulated"},
                                 {"simulated_seconds", simulated_seconds}};
  j["command"] = command;
  if (!extra.empty()) j["results"] = ordered_json::parse(extra);
  return j.dump(2) + "\n";
}

}  // namespace ionmirror::io
