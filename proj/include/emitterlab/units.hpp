#pragma once

// Unit conventions used across the toolkit:
//   rates          1/ns
//   emitter times  ns (g2 timescales, lifetimes inside kinetics)
//   timestamps     integer ps
//   optical power  mW
//   count rates    counts/s
//   lengths        nm, energies eV (exciton model)

namespace emitterlab::units {

inline constexpr double kPsPerNs = 1.0e3;
inline constexpr double kNsPerSecond = 1.0e9;
inline constexpr double kPsPerSecond = 1.0e12;
inline constexpr double kPsPerMs = 1.0e9;

/// hbar^2 / (2 m_e), eV nm^2.
inline constexpr double kHbarSqOver2Me = 0.0380998212;
/// e^2 / (4 pi eps0), eV nm.
inline constexpr double kCoulombEvNm = 1.439964548;
/// h c, eV nm. Converts photon energy to vacuum wavelength.
inline constexpr double kHcEvNm = 1239.842;
/// 1 MV/cm expressed as an electron potential-energy gradient, eV/nm.
inline constexpr double kEvPerNmPerMvPerCm = 0.1;

inline constexpr double per_ns_to_per_s(double r) { return r * kNsPerSecond; }
inline constexpr double ns_to_ps(double t) { return t * kPsPerNs; }
inline constexpr double ps_to_ns(double t) { return t / kPsPerNs; }

}  // namespace emitterlab::units
