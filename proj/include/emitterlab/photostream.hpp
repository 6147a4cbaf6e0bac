#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "emitterlab/channel.hpp"
#include "emitterlab/kinetics.hpp"

namespace emitterlab::photostream {

struct DetectorModel {
  double efficiency = 1.0;        ///< detection probability per photon
  double jitter_sigma = 30.0;     ///< Gaussian timing jitter std, ps
  double dead_time = 20'000.0;    ///< ps
  double dark_rate = 100.0;       ///< counts/s

  void validate() const;

  /// Perfect detector: unit efficiency, no jitter, no dead time, no dark counts.
  static DetectorModel ideal() { return {1.0, 0.0, 0.0, 0.0}; }
};

struct PulseTrain {
  double rep_rate = 80.0;       ///< MHz
  double pulse_width = 1.0;     ///< ps; documentation only, pulses are instantaneous
  double excitation_prob = 1.0; ///< chance that a pulse promotes |1> to |2>

  void validate() const;
  double period_ps() const { return 1.0e6 / rep_rate; }
};

struct BackgroundModel {
  double rate = 0.0;  ///< counts/s of Poissonian photons reaching the beam splitter
};

/// Photons arriving at the beam splitter: non-decreasing integer ps in [0, duration].
struct PhotonStream {
  std::vector<std::int64_t> times;
  std::int64_t duration = 0;
  std::size_t emitter_photons = 0;     ///< photons from the |2> -> |1> channel
  std::size_t background_photons = 0;
};

/// Continuous-time Markov trajectory of the emitter under cw drive.
///
/// The initial level is drawn from the steady state, so the stream is
/// stationary from t = 0. Every |2> -> |1> jump emits a photon. Background
/// photons from an independent Poisson process are merged in.
PhotonStream simulate_cw(const kinetics::RateSet& rates, std::int64_t duration_ps,
                         const BackgroundModel& background, std::uint64_t seed);

/// Pulsed drive: at each pulse an emitter in |1> is promoted to |2> with
/// `excitation_prob`; between pulses the chain evolves with k12 = 0. The
/// shelved state persists across pulse boundaries. `rates.k12` is ignored.
PhotonStream simulate_pulsed(const kinetics::RateSet& rates, const PulseTrain& train,
                             std::int64_t duration_ps, const BackgroundModel& background,
                             std::uint64_t seed);

/// Hanbury Brown-Twiss detection: beam splitter, per-channel efficiency,
/// jitter, dark counts and non-paralyzable dead time.
///
/// An event is accepted only if it lies more than `dead_time` after the
/// previously accepted event on that channel; events that round to the same
/// picosecond therefore collapse even with zero dead time.
std::pair<TimestampChannel, TimestampChannel> detect_hbt(const PhotonStream& photons,
                                                         double splitter_ratio,
                                                         const DetectorModel& det_a,
                                                         const DetectorModel& det_b,
                                                         std::uint64_t seed);

}  // namespace emitterlab::photostream
