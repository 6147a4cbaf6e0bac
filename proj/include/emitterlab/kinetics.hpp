#pragma once

#include <array>

namespace emitterlab::kinetics {

/// Transition rates of the three-level emitter, all in 1/ns.
///
/// |1> ground, |2> excited, |3> metastable (shelving) state. Under cw drive
/// only k12 depends on power (k12 = eta * P).
struct RateSet {
  double k12 = 0.0;  ///< excitation |1> -> |2>
  double k21 = 0.0;  ///< radiative decay |2> -> |1>
  double k23 = 0.0;  ///< shelving |2> -> |3>
  double k31 = 0.0;  ///< deshelving |3> -> |1>

  /// Throws InvalidArgument unless every rate is finite and strictly positive.
  void validate() const;
};

/// Parameters of g2(tau) = 1 - alpha exp(-|tau|/tau1) + beta exp(-|tau|/tau2).
///
/// alpha is independent of beta so background-degraded curves can be
/// represented; a background-free three-level emitter has alpha = 1 + beta.
struct G2Params {
  double alpha = 1.0;
  double beta = 0.0;
  double tau1 = 1.0;  ///< ns
  double tau2 = 1.0;  ///< ns

  double g2_zero() const { return 1.0 - alpha + beta; }
};

struct SteadyState {
  double p1 = 1.0;
  double p2 = 0.0;
  double p3 = 0.0;
};

struct SaturationParams {
  double p_sat = 0.0;  ///< mW
  double i_inf = 0.0;  ///< counts/s
  double p_sat_sigma = 0.0;
  double i_inf_sigma = 0.0;
};

/// Relative tolerance on A^2 - 4B below which the timescales are treated as coalesced.
inline constexpr double kDegenerateRootTolerance = 1e-12;

/// Closed-form correlation parameters of a background-free three-level emitter.
/// Throws DegenerateRootsError when A^2 - 4B <= 1e-12 A^2.
G2Params g2_params_from_rates(const RateSet& rates);

double g2_eval(const G2Params& params, double tau_ns);

/// Mean of g2 over [lo_ns, hi_ns], integrated analytically (the cusp at 0 included).
double g2_bin_average(const G2Params& params, double lo_ns, double hi_ns);

/// k31 = 1 / (beta (tau2 - tau1) + tau2). Throws NonPositiveDenominatorError.
double k31_from_g2_params(const G2Params& params);

SteadyState steady_state(const RateSet& rates);

/// Photons emitted per ns on the |2> -> |1> channel in steady state (k21 * p2).
double emission_rate(const RateSet& rates);

/// Saturation curve implied by the rates.
///
/// `rates_at_unit_power` supplies k21, k23 and k31; its k12 is ignored because
/// the excitation is k12 = eta * P. `eta` is in 1/(ns mW) and `xi` is the
/// probability that an emitted photon is detected. The returned i_inf is in
/// counts/s.
SaturationParams saturation_from_rates(const RateSet& rates_at_unit_power, double eta, double xi);

/// I(P) = i_inf * P / (P + p_sat), counts/s.
double saturation_count_rate(const SaturationParams& sat, double power_mw);

/// Mixes in uncorrelated Poissonian light: alpha and beta scale by rho^2, where
/// rho is the fraction of detected photons coming from the emitter.
G2Params background_degraded_g2(const G2Params& params, double rho);

/// Generator of dp/dt = M p for populations (p1, p2, p3), row-major.
std::array<double, 9> rate_matrix(const RateSet& rates);

}  // namespace emitterlab::kinetics
