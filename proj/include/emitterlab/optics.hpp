#pragma once

#include <vector>

#include "emitterlab/kinetics.hpp"

namespace emitterlab::optics {

/// asin(na / n_medium) in degrees. Throws InvalidArgument for na > n_medium or na < 0.
double collection_half_angle_deg(double na, double n_medium);

/// Multiplicative collection and detection chain, each factor in (0, 1].
struct EfficiencyBudget {
  double eta_c = 0.13;  ///< extraction into the objective
  double eta_f = 0.4;   ///< fiber coupling
  double eta_o = 0.3;   ///< optics transmission
  double eta_d = 0.3;   ///< detector efficiency

  void validate() const;
  double product() const { return eta_c * eta_f * eta_o * eta_d; }
};

struct QuantumEfficiency {
  double eta_q = 0.0;
  double detection_probability = 0.0;  ///< eta_c eta_f eta_o eta_d
  bool exceeds_unity = false;          ///< inputs are inconsistent
};

/// eta_q = i_inf / (i_total * eta_c eta_f eta_o eta_d), both rates per second.
QuantumEfficiency quantum_efficiency(double i_inf, double i_total, const EfficiencyBudget& budget);

/// One convention for the total emission rate: 1 / lifetime, per second.
double total_rate_from_lifetime(double lifetime_ps);

struct Ratio {
  double value = 0.0;
  double sigma = 0.0;
};

/// i_inf(b) / i_inf(a) with first-order propagation of the i_inf sigmas.
Ratio enhancement_ratio(const kinetics::SaturationParams& sat_a, const kinetics::SaturationParams& sat_b);

/// mean(b) / mean(a) over paired samples, e.g. emitters on two substrates.
Ratio mean_ratio(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace emitterlab::optics
