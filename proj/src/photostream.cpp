#include "emitterlab/photostream.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>

#include "emitterlab/error.hpp"
#include "emitterlab/rng.hpp"
#include "emitterlab/units.hpp"

namespace emitterlab {

double TimestampChannel::mean_rate() const {
  if (duration <= 0) {
    return 0.0;
  }
  return static_cast<double>(timestamps.size()) * units::kPsPerSecond / static_cast<double>(duration);
}

void TimestampChannel::validate() const {
  if (duration < 0) {
    throw InvalidArgument("channel '" + label + "': negative duration");
  }
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    if (timestamps[i] < 0 || timestamps[i] > duration) {
      throw InvalidArgument("channel '" + label + "': timestamp outside [0, duration]");
    }
    if (i > 0 && timestamps[i] <= timestamps[i - 1]) {
      throw UnsortedInputError("channel '" + label + "': timestamps not strictly increasing at index " +
                               std::to_string(i));
    }
  }
}

namespace photostream {

namespace {

enum class Level { kGround, kExcited, kShelved };

// Sub-stream ids so emitter, background and each detector draw independently.
constexpr std::uint64_t kEmitterStream = 1;
constexpr std::uint64_t kBackgroundStream = 2;
constexpr std::uint64_t kSplitterStream = 3;
constexpr std::uint64_t kDetectorAStream = 4;
constexpr std::uint64_t kDetectorBStream = 5;

void validate_cw_rates(const kinetics::RateSet& r) {
  if (!(r.k12 > 0.0) || !(r.k21 > 0.0) || !(r.k31 > 0.0) || !(r.k23 >= 0.0) ||
      !std::isfinite(r.k12 + r.k21 + r.k23 + r.k31)) {
    throw InvalidArgument("simulate: rates must be positive (k23 may be zero)");
  }
}

std::int64_t to_ps(double t_ns) { return std::llround(t_ns * units::kPsPerNs); }

std::vector<std::int64_t> poisson_arrivals(double rate_cps, std::int64_t duration_ps, Rng& rng) {
  std::vector<std::int64_t> out;
  if (!(rate_cps > 0.0) || duration_ps <= 0) {
    return out;
  }
  const double rate_per_ps = rate_cps / units::kPsPerSecond;
  out.reserve(static_cast<std::size_t>(rate_per_ps * static_cast<double>(duration_ps) * 1.1) + 16);
  double t = rng.exponential(rate_per_ps);
  while (t <= static_cast<double>(duration_ps)) {
    out.push_back(std::llround(t));
    t += rng.exponential(rate_per_ps);
  }
  return out;
}

PhotonStream merge_background(std::vector<std::int64_t> emitter, std::int64_t duration_ps,
                              const BackgroundModel& background, std::uint64_t seed) {
  if (background.rate < 0.0 || !std::isfinite(background.rate)) {
    throw InvalidArgument("background rate must be finite and non-negative");
  }
  Rng rng(Rng::derive_seed(seed, kBackgroundStream));
  auto bg = poisson_arrivals(background.rate, duration_ps, rng);

  PhotonStream out;
  out.duration = duration_ps;
  out.emitter_photons = emitter.size();
  out.background_photons = bg.size();
  out.times.reserve(emitter.size() + bg.size());
  std::merge(emitter.begin(), emitter.end(), bg.begin(), bg.end(), std::back_inserter(out.times));
  return out;
}

Level draw_steady_level(const kinetics::RateSet& rates, Rng& rng) {
  const auto ss = kinetics::steady_state(rates);
  const double u = rng.uniform();
  if (u < ss.p1) return Level::kGround;
  if (u < ss.p1 + ss.p2) return Level::kExcited;
  return Level::kShelved;
}

}  // namespace

void DetectorModel::validate() const {
  if (!(efficiency >= 0.0 && efficiency <= 1.0)) {
    throw InvalidArgument("detector efficiency must lie in [0, 1]");
  }
  if (!(jitter_sigma >= 0.0) || !(dead_time >= 0.0) || !(dark_rate >= 0.0) ||
      !std::isfinite(jitter_sigma + dead_time + dark_rate)) {
    throw InvalidArgument("detector jitter, dead time and dark rate must be finite and non-negative");
  }
}

void PulseTrain::validate() const {
  if (!(rep_rate > 0.0) || !std::isfinite(rep_rate)) {
    throw InvalidArgument("pulse repetition rate must be positive");
  }
  if (!(pulse_width >= 0.0)) {
    throw InvalidArgument("pulse width must be non-negative");
  }
  if (!(excitation_prob >= 0.0 && excitation_prob <= 1.0)) {
    throw InvalidArgument("excitation probability must lie in [0, 1]");
  }
  if (pulse_width >= period_ps()) {
    throw InvalidArgument("pulse width must be much shorter than the repetition period");
  }
}

PhotonStream simulate_cw(const kinetics::RateSet& rates, std::int64_t duration_ps,
                         const BackgroundModel& background, std::uint64_t seed) {
  if (duration_ps < 0) {
    throw InvalidArgument("simulate_cw: negative duration");
  }
  validate_cw_rates(rates);
  std::vector<std::int64_t> emitted;
  if (duration_ps > 0) {
    Rng rng(Rng::derive_seed(seed, kEmitterStream));
    const double end_ns = units::ps_to_ns(static_cast<double>(duration_ps));
    const double leave_excited = rates.k21 + rates.k23;
    const double radiative_branch = rates.k21 / leave_excited;
    emitted.reserve(static_cast<std::size_t>(kinetics::emission_rate(rates) * end_ns * 1.05) + 16);

    Level level = draw_steady_level(rates, rng);
    double t = 0.0;
    while (true) {
      switch (level) {
        case Level::kGround:
          t += rng.exponential(rates.k12);
          level = Level::kExcited;
          break;
        case Level::kExcited:
          t += rng.exponential(leave_excited);
          if (rng.uniform() < radiative_branch) {
            if (t <= end_ns) {
              emitted.push_back(to_ps(t));
            }
            level = Level::kGround;
          } else {
            level = Level::kShelved;
          }
          break;
        case Level::kShelved:
          t += rng.exponential(rates.k31);
          level = Level::kGround;
          break;
      }
      if (t > end_ns) {
        break;
      }
    }
    // Rounding can nudge the final photon past the end.
    while (!emitted.empty() && emitted.back() > duration_ps) {
      emitted.pop_back();
    }
  }
  return merge_background(std::move(emitted), duration_ps, background, seed);
}

PhotonStream simulate_pulsed(const kinetics::RateSet& rates, const PulseTrain& train,
                             std::int64_t duration_ps, const BackgroundModel& background,
                             std::uint64_t seed) {
  if (duration_ps < 0) {
    throw InvalidArgument("simulate_pulsed: negative duration");
  }
  if (!(rates.k21 > 0.0) || !(rates.k31 > 0.0) || !(rates.k23 >= 0.0)) {
    throw InvalidArgument("simulate_pulsed: k21, k31 must be positive and k23 non-negative");
  }
  train.validate();

  std::vector<std::int64_t> emitted;
  if (duration_ps > 0) {
    Rng rng(Rng::derive_seed(seed, kEmitterStream));
    const double period_ns = units::ps_to_ns(train.period_ps());
    const double end_ns = units::ps_to_ns(static_cast<double>(duration_ps));
    const double leave_excited = rates.k21 + rates.k23;
    const double radiative_branch = rates.k21 / leave_excited;

    Level level = Level::kGround;
    for (std::int64_t n = 0;; ++n) {
      const double pulse = static_cast<double>(n) * period_ns;
      if (pulse > end_ns) {
        break;
      }
      if (level == Level::kGround && rng.bernoulli(train.excitation_prob)) {
        level = Level::kExcited;
      }
      // Dark evolution until the next pulse. Waiting times are memoryless, so a
      // draw that overshoots the pulse is simply discarded.
      const double next_pulse = pulse + period_ns;
      double t = pulse;
      while (level != Level::kGround) {
        const double rate = level == Level::kExcited ? leave_excited : rates.k31;
        const double dt = rng.exponential(rate);
        if (t + dt >= next_pulse) {
          break;
        }
        t += dt;
        if (level == Level::kExcited) {
          if (rng.uniform() < radiative_branch) {
            if (t <= end_ns) {
              emitted.push_back(to_ps(t));
            }
            level = Level::kGround;
          } else {
            level = Level::kShelved;
          }
        } else {
          level = Level::kGround;
        }
      }
    }
    while (!emitted.empty() && emitted.back() > duration_ps) {
      emitted.pop_back();
    }
  }
  return merge_background(std::move(emitted), duration_ps, background, seed);
}

namespace {

TimestampChannel finish_channel(const std::vector<double>& arrivals, const DetectorModel& det,
                                std::int64_t duration, Rng& rng, std::string label) {
  std::vector<std::int64_t> raw;
  raw.reserve(arrivals.size() + 16);
  for (double t : arrivals) {
    const double jittered = det.jitter_sigma > 0.0 ? t + det.jitter_sigma * rng.normal() : t;
    const std::int64_t ps = std::llround(jittered);
    if (ps >= 0 && ps <= duration) {
      raw.push_back(ps);
    }
  }
  const auto dark = poisson_arrivals(det.dark_rate, duration, rng);
  raw.insert(raw.end(), dark.begin(), dark.end());
  std::sort(raw.begin(), raw.end());

  TimestampChannel out;
  out.duration = duration;
  out.label = std::move(label);
  out.timestamps.reserve(raw.size());
  const auto dead = static_cast<double>(det.dead_time);
  for (std::int64_t t : raw) {
    if (out.timestamps.empty() ||
        static_cast<double>(t - out.timestamps.back()) > dead) {
      out.timestamps.push_back(t);
    }
  }
  return out;
}

}  // namespace

std::pair<TimestampChannel, TimestampChannel> detect_hbt(const PhotonStream& photons,
                                                         double splitter_ratio,
                                                         const DetectorModel& det_a,
                                                         const DetectorModel& det_b,
                                                         std::uint64_t seed) {
  if (!(splitter_ratio >= 0.0 && splitter_ratio <= 1.0)) {
    throw InvalidArgument("detect_hbt: splitter ratio must lie in [0, 1]");
  }
  det_a.validate();
  det_b.validate();

  Rng splitter(Rng::derive_seed(seed, kSplitterStream));
  Rng rng_a(Rng::derive_seed(seed, kDetectorAStream));
  Rng rng_b(Rng::derive_seed(seed, kDetectorBStream));

  std::vector<double> to_a;
  std::vector<double> to_b;
  to_a.reserve(photons.times.size() / 2 + 16);
  to_b.reserve(photons.times.size() / 2 + 16);
  for (std::int64_t t : photons.times) {
    const bool arm_a = splitter.uniform() < splitter_ratio;
    // Each arm consumes exactly one efficiency draw per routed photon.
    if (arm_a) {
      if (rng_a.uniform() < det_a.efficiency) to_a.push_back(static_cast<double>(t));
    } else {
      if (rng_b.uniform() < det_b.efficiency) to_b.push_back(static_cast<double>(t));
    }
  }
  return {finish_channel(to_a, det_a, photons.duration, rng_a, "A"),
          finish_channel(to_b, det_b, photons.duration, rng_b, "B")};
}

}  // namespace photostream
}  // namespace emitterlab
