#include "emitterlab/correlator.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <thread>

#include "emitterlab/csv.hpp"
#include "emitterlab/error.hpp"
#include "emitterlab/parallel.hpp"
#include "emitterlab/units.hpp"

namespace emitterlab::correlator {

namespace {

std::int64_t floor_div(std::int64_t num, std::int64_t den) {
  std::int64_t q = num / den;
  if ((num % den != 0) && ((num < 0) != (den < 0))) --q;
  return q;
}

void require_sorted(const TimestampChannel& c, const char* name) {
  if (c.empty()) {
    throw EmptyChannelError(std::string("correlate: channel ") + name + " is empty");
  }
  for (std::size_t i = 1; i < c.timestamps.size(); ++i) {
    if (c.timestamps[i] <= c.timestamps[i - 1]) {
      throw UnsortedInputError(std::string("correlate: channel ") + name +
                               " is not strictly increasing at index " + std::to_string(i));
    }
  }
}

// Events at or before the overlap end.
std::span<const std::int64_t> clip(const TimestampChannel& c, std::int64_t overlap) {
  const auto end = std::upper_bound(c.timestamps.begin(), c.timestamps.end(), overlap);
  return {c.timestamps.data(), static_cast<std::size_t>(end - c.timestamps.begin())};
}

void accumulate_chunk(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                      std::int64_t w, std::int64_t half_bins, std::vector<std::int64_t>& counts) {
  // Delay window in doubled units: -(2K+1) w <= 2 tau < (2K+1) w.
  const std::int64_t edge = (2 * half_bins + 1) * w;
  std::size_t lo = 0;
  if (!a.empty()) {
    // First b that can pair with a.front().
    const std::int64_t first = a.front() + floor_div(-edge + 1, 2);
    lo = static_cast<std::size_t>(std::lower_bound(b.begin(), b.end(), first) - b.begin());
  }
  for (std::int64_t ta : a) {
    while (lo < b.size() && 2 * (b[lo] - ta) < -edge) ++lo;
    for (std::size_t j = lo; j < b.size(); ++j) {
      const std::int64_t tau = b[j] - ta;
      if (2 * tau >= edge) break;
      ++counts[static_cast<std::size_t>(bin_of(tau, w) + half_bins)];
    }
  }
}

}  // namespace

std::int64_t bin_of(std::int64_t tau, std::int64_t bin_width) {
  return floor_div(2 * tau + bin_width, 2 * bin_width);
}

CorrelationHistogram correlate(const TimestampChannel& a, const TimestampChannel& b,
                               std::int64_t bin_width, std::int64_t tau_max, unsigned threads) {
  if (bin_width <= 0) {
    throw InvalidArgument("correlate: bin width must be positive");
  }
  if (tau_max < bin_width) {
    throw InvalidArgument("correlate: tau_max must be at least one bin width");
  }
  require_sorted(a, "A");
  require_sorted(b, "B");

  const std::int64_t overlap = std::min(a.duration, b.duration);
  if (overlap <= 0) {
    throw InvalidArgument("correlate: channels have no overlapping duration");
  }
  const auto ta = clip(a, overlap);
  const auto tb = clip(b, overlap);
  if (ta.empty() || tb.empty()) {
    throw EmptyChannelError("correlate: no events inside the overlap window");
  }

  CorrelationHistogram hist;
  hist.bin_width = bin_width;
  hist.half_bins = tau_max / bin_width;
  const auto n_bins = static_cast<std::size_t>(2 * hist.half_bins + 1);
  hist.counts.assign(n_bins, 0);

  unsigned workers = threads == 0 ? default_thread_count() : threads;
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(1, ta.size() / 4096)));
  if (workers <= 1) {
    accumulate_chunk(ta, tb, bin_width, hist.half_bins, hist.counts);
  } else {
    std::vector<std::vector<std::int64_t>> partial(workers, std::vector<std::int64_t>(n_bins, 0));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        const auto r = chunk(ta.size(), workers, w);
        accumulate_chunk(ta.subspan(r.begin, r.end - r.begin), tb, bin_width, hist.half_bins,
                         partial[w]);
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& p : partial) {
      for (std::size_t k = 0; k < n_bins; ++k) hist.counts[k] += p[k];
    }
  }

  hist.overlap = static_cast<double>(overlap);
  hist.normalization = static_cast<double>(ta.size()) * static_cast<double>(tb.size()) *
                       static_cast<double>(bin_width) / hist.overlap;
  hist.g2.resize(n_bins);
  hist.g2_err.resize(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    const auto c = static_cast<double>(hist.counts[k]);
    hist.g2[k] = c / hist.normalization;
    hist.g2_err[k] = std::sqrt(c) / hist.normalization;
  }
  return hist;
}

double PulsedG2Result::mean_side_area() const {
  double sum = 0.0;
  for (int n = -n_peaks; n <= n_peaks; ++n) {
    if (n != 0) sum += static_cast<double>(area(n));
  }
  return sum / (2.0 * n_peaks);
}

PulsedG2Result pulsed_g2(const TimestampChannel& a, const TimestampChannel& b, double rep_rate_mhz,
                         int n_peaks) {
  if (n_peaks < 1) {
    throw InvalidArgument("pulsed_g2: at least two side peaks (n_peaks >= 1) are required");
  }
  if (!(rep_rate_mhz > 0.0)) {
    throw InvalidArgument("pulsed_g2: repetition rate must be positive");
  }
  require_sorted(a, "A");
  require_sorted(b, "B");
  const std::int64_t overlap = std::min(a.duration, b.duration);
  if (overlap <= 0) {
    throw InvalidArgument("pulsed_g2: channels have no overlapping duration");
  }
  const auto ta = clip(a, overlap);
  const auto tb = clip(b, overlap);

  PulsedG2Result res;
  res.period = 1.0e6 / rep_rate_mhz;
  res.n_peaks = n_peaks;
  res.peak_areas.assign(static_cast<std::size_t>(2 * n_peaks + 1), 0);
  const double reach = (n_peaks + 0.5) * res.period;

  std::size_t lo = 0;
  for (std::int64_t t : ta) {
    while (lo < tb.size() && static_cast<double>(tb[lo] - t) < -reach) ++lo;
    for (std::size_t j = lo; j < tb.size(); ++j) {
      const double tau = static_cast<double>(tb[j] - t);
      if (tau >= reach) break;
      const auto n = static_cast<int>(std::floor(tau / res.period + 0.5));
      if (n >= -n_peaks && n <= n_peaks) {
        ++res.peak_areas[static_cast<std::size_t>(n + n_peaks)];
      }
    }
  }

  res.uncorrelated_area = static_cast<double>(ta.size()) * static_cast<double>(tb.size()) *
                          res.period / static_cast<double>(overlap);
  double side_total = 0.0;
  for (int n = -n_peaks; n <= n_peaks; ++n) {
    if (n != 0) side_total += static_cast<double>(res.area(n));
  }
  const double side_mean = side_total / (2.0 * n_peaks);
  const double center = static_cast<double>(res.area(0));
  if (side_mean > 0.0) {
    res.g2_zero = center / side_mean;
    const double var = std::max(center, 1.0) / (side_mean * side_mean) +
                       res.g2_zero * res.g2_zero / std::max(side_total, 1.0);
    res.g2_zero_sigma = std::sqrt(var);
  } else {
    res.g2_zero = center > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    res.g2_zero_sigma = std::numeric_limits<double>::infinity();
  }
  return res;
}

double pulsed_background_ratio(const PulsedG2Result& pilot, double target) {
  if (!(target >= 0.0 && target < 1.0)) {
    throw InvalidArgument("pulsed_background_ratio: target must lie in [0, 1)");
  }
  if (!(pilot.uncorrelated_area > 0.0)) {
    throw InvalidArgument("pulsed_background_ratio: pilot has no coincidences");
  }
  const double gc = static_cast<double>(pilot.area(0)) / pilot.uncorrelated_area;
  const double gs = pilot.mean_side_area() / pilot.uncorrelated_area;
  const double c = (gc - target * gs) / (1.0 - target);
  if (c >= 0.0) {
    return 0.0;  // already at or above the target without background
  }
  return -1.0 + std::sqrt(1.0 - c);
}

IntensityTrace intensity_trace(const TimestampChannel& a, double bin_ms, double blink_threshold_sigma) {
  if (!(bin_ms > 0.0)) {
    throw InvalidArgument("intensity_trace: bin must be positive");
  }
  IntensityTrace trace;
  trace.bin_ms = bin_ms;
  const double bin_ps = bin_ms * units::kPsPerMs;
  const auto n_bins = static_cast<std::size_t>(std::floor(static_cast<double>(a.duration) / bin_ps));
  trace.counts.assign(n_bins, 0);
  for (std::int64_t t : a.timestamps) {
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(t) / bin_ps));
    if (k < n_bins) ++trace.counts[k];
  }
  if (n_bins == 0) {
    return trace;
  }
  const double n = static_cast<double>(n_bins);
  const double sum = std::accumulate(trace.counts.begin(), trace.counts.end(), 0.0);
  trace.mean = sum / n;
  double ss = 0.0;
  for (auto c : trace.counts) ss += (static_cast<double>(c) - trace.mean) * (static_cast<double>(c) - trace.mean);
  trace.stddev = n_bins > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  const auto [mn, mx] = std::minmax_element(trace.counts.begin(), trace.counts.end());
  trace.min = *mn;
  trace.max = *mx;
  trace.max_min_ratio = trace.min > 0 ? static_cast<double>(trace.max) / static_cast<double>(trace.min)
                                      : std::numeric_limits<double>::infinity();
  if (trace.mean > 0.0) {
    const double sigma = std::sqrt(trace.mean);
    for (auto c : trace.counts) {
      trace.max_deviation_sigma =
          std::max(trace.max_deviation_sigma, std::abs(static_cast<double>(c) - trace.mean) / sigma);
    }
  }
  trace.blinking_suspected = trace.min == 0 || trace.max_deviation_sigma > blink_threshold_sigma;
  return trace;
}

void write_histogram_csv(std::ostream& out, const CorrelationHistogram& hist) {
  out << "tau_ps,counts,g2,g2_err\n";
  for (std::size_t i = 0; i < hist.size(); ++i) {
    out << static_cast<std::int64_t>(hist.tau(i)) << ',' << hist.counts[i] << ','
        << csv::format_number(hist.g2[i]) << ',' << csv::format_number(hist.g2_err[i]) << '\n';
  }
}

CorrelationHistogram read_histogram_csv(std::istream& in) {
  const auto table = csv::read(in);
  const auto tau = table.values("tau_ps");
  const auto counts = table.values("counts");
  const auto g2 = table.values("g2");
  const auto err = table.values("g2_err");
  if (tau.size() < 3) {
    throw FormatError("histogram CSV: need at least three bins");
  }
  CorrelationHistogram hist;
  hist.bin_width = std::llround(tau[1] - tau[0]);
  if (hist.bin_width <= 0) {
    throw FormatError("histogram CSV: tau_ps must increase");
  }
  for (std::size_t i = 1; i < tau.size(); ++i) {
    if (std::llround(tau[i] - tau[i - 1]) != hist.bin_width) {
      throw FormatError("histogram CSV: non-uniform bin spacing at row " + std::to_string(i + 1));
    }
  }
  hist.half_bins = -std::llround(tau.front()) / hist.bin_width;
  if (static_cast<std::size_t>(2 * hist.half_bins + 1) != tau.size()) {
    throw FormatError("histogram CSV: bins are not centred on zero delay");
  }
  double count_sum = 0.0;
  double g2_sum = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    hist.counts.push_back(std::llround(counts[i]));
    if (counts[i] > 0.0 && g2[i] > 0.0) {
      count_sum += counts[i];
      g2_sum += g2[i];
    }
  }
  hist.g2 = g2;
  hist.g2_err = err;
  hist.normalization = g2_sum > 0.0 ? count_sum / g2_sum : 1.0;
  return hist;
}

}  // namespace emitterlab::correlator
