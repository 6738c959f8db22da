#pragma once

// Photon-event generation (inhomogeneous Poisson process by thinning) and
// binning of event streams into count time series.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "ionmirror/rng.hpp"

namespace ionmirror::photon {

class PhotonError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Detected photon stream of one run, either as event times or as counts.
struct PhotonRecord {
  std::vector<double> event_times;  // s, strictly increasing
  double start_time = 0.0;          // s
  double duration = 0.0;            // s

  bool empty() const { return event_times.empty(); }
  double mean_rate() const {
    return duration > 0.0 ? static_cast<double>(event_times.size()) / duration : 0.0;
  }
};

/// Streaming thinning sampler. Candidate times are drawn from a homogeneous
/// process at rate_max; each candidate t is accepted with probability
/// rate(t) / rate_max. The caller evaluates the rate only at candidates,
/// which keeps it out of tight integration loops.
class ThinningSampler {
 public:
  ThinningSampler(double rate_max, double t0, Engine& rng);

  double rate_max() const { return rate_max_; }
  /// Time of the next pending candidate.
  double next_candidate() const { return next_; }

  /// Accepts or rejects the pending candidate given the true rate there, and
  /// draws the next candidate. Returns true when accepted.
  bool resolve(double rate, Engine& rng);

 private:
  double rate_max_;
  double next_;
  boost::random::exponential_distribution<double> gap_;
  boost::random::uniform_01<double> uniform_;
};

/// Samples an inhomogeneous Poisson process on [t0, t1). Throws PhotonError if
/// rate_fn exceeds rate_max at a candidate or is negative.
std::vector<double> emit_photons(const std::function<double(double)>& rate_fn, double t0,
                                 double t1, double rate_max, Engine& rng);

/// Index of the bin [start + i*bin_width, start + (i+1)*bin_width) holding t,
/// with edges as evaluated in floating point; -1 before start.
std::int64_t bin_index(double t, double bin_width, double start = 0.0);

/// Number of whole bins in `duration`.
std::size_t bin_total(double duration, double bin_width);

/// counts[i] = number of events in [start + i*bin_width, start + (i+1)*bin_width)
/// for i < floor(duration / bin_width).
std::vector<std::uint32_t> bin_counts(std::span<const double> event_times, double bin_width,
                                      double duration, double start = 0.0);

}  // namespace ionmirror::photon
