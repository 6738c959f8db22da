#include "ionmirror/photon.hpp"

#include <cmath>
#include <limits>

namespace ionmirror::photon {

ThinningSampler::ThinningSampler(double rate_max, double t0, Engine& rng)
    : rate_max_(rate_max), next_(t0), gap_(rate_max > 0.0 ? rate_max : 1.0) {
  if (!(rate_max >= 0.0) || !std::isfinite(rate_max)) {
    throw PhotonError("rate majorant must be finite and >= 0");
  }
  next_ = rate_max > 0.0 ? t0 + gap_(rng) : std::numeric_limits<double>::infinity();
}

bool ThinningSampler::resolve(double rate, Engine& rng) {
  // Allow for rounding in rates evaluated at the majorant itself.
  if (rate > rate_max_ * (1.0 + 1e-12) || rate < 0.0 || !std::isfinite(rate)) {
    throw PhotonError("photon rate outside [0, rate_max]: majorant violated");
  }
  const bool accepted = uniform_(rng) * rate_max_ < rate;
  next_ += gap_(rng);
  return accepted;
}

std::vector<double> emit_photons(const std::function<double(double)>& rate_fn, double t0,
                                 double t1, double rate_max, Engine& rng) {
  std::vector<double> events;
  if (rate_max == 0.0 || t1 <= t0) return events;
  ThinningSampler sampler(rate_max, t0, rng);
  while (sampler.next_candidate() < t1) {
    const double t = sampler.next_candidate();
    if (sampler.resolve(rate_fn(t), rng)) events.push_back(t);
  }
  return events;
}

std::int64_t bin_index(double t, double bin_width, double start) {
  const double rel = (t - start) / bin_width;
  if (rel < 0.0) return -1;
  auto idx = static_cast<std::int64_t>(std::floor(rel));
  // Bin edges are start + i * bin_width as evaluated in floating point.
  if (start + static_cast<double>(idx + 1) * bin_width <= t) {
    ++idx;
  } else if (idx > 0 && start + static_cast<double>(idx) * bin_width > t) {
    --idx;
  }
  return idx;
}

std::size_t bin_total(double duration, double bin_width) {
  return static_cast<std::size_t>(std::floor(duration / bin_width + 1e-9));
}

std::vector<std::uint32_t> bin_counts(std::span<const double> event_times, double bin_width,
                                      double duration, double start) {
  if (!(bin_width > 0.0)) throw PhotonError("bin_width must be > 0");
  const std::size_t n_bins = bin_total(duration, bin_width);
  std::vector<std::uint32_t> counts(n_bins, 0);
  for (double t : event_times) {
    const std::int64_t idx = bin_index(t, bin_width, start);
    if (idx >= 0 && static_cast<std::size_t>(idx) < n_bins) ++counts[static_cast<std::size_t>(idx)];
  }
  return counts;
}

}  // namespace ionmirror::photon
