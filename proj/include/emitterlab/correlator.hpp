#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "emitterlab/channel.hpp"

namespace emitterlab::correlator {

/// Cross-correlation histogram of delays tau = t_b - t_a.
///
/// Bins are centred on zero delay: bin k covers [(k - 1/2) w, (k + 1/2) w)
/// for k in [-half_bins, half_bins], so the window is tiled by whole bins.
struct CorrelationHistogram {
  std::int64_t bin_width = 0;  ///< ps
  std::int64_t half_bins = 0;
  std::vector<std::int64_t> counts;
  std::vector<double> g2;
  std::vector<double> g2_err;
  /// Expected coincidences per bin for uncorrelated channels: r_a r_b T w.
  double normalization = 0.0;
  double overlap = 0.0;  ///< ps

  std::size_t size() const { return counts.size(); }
  /// Bin centre, ps.
  double tau(std::size_t i) const {
    return static_cast<double>((static_cast<std::int64_t>(i) - half_bins) * bin_width);
  }
  std::size_t zero_index() const { return static_cast<std::size_t>(half_bins); }
};

/// Bin index of a delay under the centred-bin convention (floor((2 tau + w) / 2w)).
std::int64_t bin_of(std::int64_t tau, std::int64_t bin_width);

/// Multi-stop correlation: every (a, b) pair whose delay falls in the window.
///
/// Channel A is split into chunks that are correlated concurrently and merged;
/// the integer histogram does not depend on the chunking. `threads` = 0 uses
/// default_thread_count(). Events after the shorter channel's duration are ignored.
CorrelationHistogram correlate(const TimestampChannel& a, const TimestampChannel& b,
                               std::int64_t bin_width, std::int64_t tau_max, unsigned threads = 0);

struct PulsedG2Result {
  double period = 0.0;  ///< ps
  int n_peaks = 0;
  /// Coincidences per pulse offset n in [-n_peaks, n_peaks].
  std::vector<std::int64_t> peak_areas;
  double g2_zero = 0.0;
  double g2_zero_sigma = 0.0;
  /// Expected area of one peak window for uncorrelated channels (N_a N_b T_rep / T).
  double uncorrelated_area = 0.0;

  std::int64_t area(int n) const { return peak_areas[static_cast<std::size_t>(n + n_peaks)]; }
  double mean_side_area() const;
};

/// Folds coincidences into windows of one repetition period centred on n T_rep.
/// Throws InvalidArgument when fewer than two side peaks (n_peaks < 1) are requested.
PulsedG2Result pulsed_g2(const TimestampChannel& a, const TimestampChannel& b, double rep_rate_mhz,
                         int n_peaks);

/// Background-to-signal photon ratio x = B/S that lifts a pilot measurement
/// to `target` g2(0) once uncorrelated Poissonian light is mixed in.
///
/// With the pilot's central and side areas normalized by the uncorrelated
/// expectation (g_c, g_s), mixing in background at ratio x gives
/// g2(0) = (g_c + 2x + x^2) / (g_s + 2x + x^2); this solves that for x.
double pulsed_background_ratio(const PulsedG2Result& pilot, double target);

struct IntensityTrace {
  double bin_ms = 0.0;
  std::vector<std::int64_t> counts;
  double mean = 0.0;
  double stddev = 0.0;
  std::int64_t min = 0;
  std::int64_t max = 0;
  /// max/min; infinite when a bin is empty.
  double max_min_ratio = 0.0;
  /// Largest |count - mean| in units of the Poisson sigma sqrt(mean).
  double max_deviation_sigma = 0.0;
  bool blinking_suspected = false;
};

/// Bins a channel into contiguous windows; a trailing partial bin is dropped.
IntensityTrace intensity_trace(const TimestampChannel& a, double bin_ms,
                               double blink_threshold_sigma = 5.0);

/// CSV with header `tau_ps,counts,g2,g2_err`.
void write_histogram_csv(std::ostream& out, const CorrelationHistogram& hist);
/// Inverse of write_histogram_csv; normalization is recovered from counts/g2.
CorrelationHistogram read_histogram_csv(std::istream& in);

}  // namespace emitterlab::correlator
