#include "emitterlab/kinetics.hpp"

#include <cmath>
#include <string>

#include "emitterlab/error.hpp"
#include "emitterlab/units.hpp"

namespace emitterlab::kinetics {

namespace {

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

// Integral of exp(-|tau|/t) from 0 to x (odd in x).
double folded_exp_integral(double x, double t) {
  const double magnitude = -t * std::expm1(-std::abs(x) / t);
  return x < 0.0 ? -magnitude : magnitude;
}

}  // namespace

void RateSet::validate() const {
  if (!positive_finite(k12) || !positive_finite(k21) || !positive_finite(k23) ||
      !positive_finite(k31)) {
    throw InvalidArgument("rates must be finite and strictly positive (k12=" + std::to_string(k12) +
                          ", k21=" + std::to_string(k21) + ", k23=" + std::to_string(k23) +
                          ", k31=" + std::to_string(k31) + ")");
  }
}

G2Params g2_params_from_rates(const RateSet& rates) {
  // k23 = 0 is the two-level limit and is allowed here; everything else must be positive.
  if (!positive_finite(rates.k12) || !positive_finite(rates.k21) || !positive_finite(rates.k31) ||
      !std::isfinite(rates.k23) || rates.k23 < 0.0) {
    throw InvalidArgument("g2_params_from_rates: invalid rate set");
  }
  const double a = rates.k12 + rates.k21 + rates.k23 + rates.k31;
  const double b = rates.k12 * (rates.k23 + rates.k31) + rates.k31 * (rates.k21 + rates.k23);
  const double disc = a * a - 4.0 * b;
  if (disc <= kDegenerateRootTolerance * a * a) {
    throw DegenerateRootsError("g2_params_from_rates: correlation timescales coalesce (A^2-4B=" +
                               std::to_string(disc) + ")");
  }
  // Larger root directly, smaller one via the product of roots to avoid cancellation.
  const double fast = 0.5 * (a + std::sqrt(disc));
  const double slow = b / fast;

  G2Params p;
  p.tau1 = 1.0 / fast;
  p.tau2 = 1.0 / slow;
  p.beta = (1.0 - p.tau2 * rates.k31) / (rates.k31 * (p.tau2 - p.tau1));
  p.alpha = 1.0 + p.beta;
  return p;
}

double g2_eval(const G2Params& params, double tau_ns) {
  const double t = std::abs(tau_ns);
  return 1.0 - params.alpha * std::exp(-t / params.tau1) + params.beta * std::exp(-t / params.tau2);
}

double g2_bin_average(const G2Params& params, double lo_ns, double hi_ns) {
  const double width = hi_ns - lo_ns;
  if (!(width > 0.0)) {
    return g2_eval(params, lo_ns);
  }
  const double fast = folded_exp_integral(hi_ns, params.tau1) - folded_exp_integral(lo_ns, params.tau1);
  const double slow = folded_exp_integral(hi_ns, params.tau2) - folded_exp_integral(lo_ns, params.tau2);
  return 1.0 - (params.alpha * fast - params.beta * slow) / width;
}

double k31_from_g2_params(const G2Params& params) {
  const double denom = params.beta * (params.tau2 - params.tau1) + params.tau2;
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    throw NonPositiveDenominatorError("k31_from_g2_params: beta*(tau2-tau1)+tau2 = " +
                                      std::to_string(denom) + " is not positive");
  }
  return 1.0 / denom;
}

SteadyState steady_state(const RateSet& rates) {
  // Unnormalized: p1 = 1.
  const double p2 = rates.k12 / (rates.k21 + rates.k23);
  const double p3 = rates.k23 / rates.k31 * p2;
  const double norm = 1.0 + p2 + p3;
  return {1.0 / norm, p2 / norm, p3 / norm};
}

double emission_rate(const RateSet& rates) { return rates.k21 * steady_state(rates).p2; }

SaturationParams saturation_from_rates(const RateSet& rates_at_unit_power, double eta, double xi) {
  const auto& r = rates_at_unit_power;
  if (!positive_finite(r.k21) || !positive_finite(r.k31) || !std::isfinite(r.k23) || r.k23 < 0.0) {
    throw InvalidArgument("saturation_from_rates: invalid rate set");
  }
  if (!positive_finite(eta) || !positive_finite(xi)) {
    throw InvalidArgument("saturation_from_rates: eta and xi must be positive");
  }
  const double shelving = 1.0 + r.k23 / r.k31;
  SaturationParams sat;
  sat.i_inf = units::per_ns_to_per_s(xi * r.k21 / shelving);
  sat.p_sat = (r.k21 + r.k23) / (eta * shelving);
  return sat;
}

double saturation_count_rate(const SaturationParams& sat, double power_mw) {
  return sat.i_inf * power_mw / (power_mw + sat.p_sat);
}

G2Params background_degraded_g2(const G2Params& params, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw InvalidArgument("background_degraded_g2: signal fraction must lie in (0, 1], got " +
                          std::to_string(rho));
  }
  G2Params out = params;
  out.alpha *= rho * rho;
  out.beta *= rho * rho;
  return out;
}

std::array<double, 9> rate_matrix(const RateSet& r) {
  return {-r.k12, r.k21,            r.k31,  //
          r.k12,  -(r.k21 + r.k23), 0.0,    //
          0.0,    r.k23,            -r.k31};
}

}  // namespace emitterlab::kinetics
