#include <cmath>
#include <numbers>
#include <numeric>

#include "emitterlab/error.hpp"
#include "emitterlab/optics.hpp"
#include "emitterlab/units.hpp"

namespace emitterlab::optics {

namespace {

bool in_unit_interval(double v) { return std::isfinite(v) && v > 0.0 && v <= 1.0; }

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

/// Standard error of the mean; zero for a single sample.
double sem_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

double collection_half_angle_deg(double na, double n_medium) {
  if (!(n_medium > 0.0) || !std::isfinite(n_medium)) throw InvalidArgument("collection_half_angle: n_medium must be positive");
  if (!(na >= 0.0)) throw InvalidArgument("collection_half_angle: na must be nonnegative");
  if (na > n_medium) throw InvalidArgument("collection_half_angle: na exceeds n_medium (evanescent regime)");
  return std::asin(na / n_medium) * 180.0 / std::numbers::pi;
}

void EfficiencyBudget::validate() const {
  if (!in_unit_interval(eta_c) || !in_unit_interval(eta_f) || !in_unit_interval(eta_o) || !in_unit_interval(eta_d)) {
    throw InvalidArgument("EfficiencyBudget: every factor must lie in (0, 1]");
  }
}

QuantumEfficiency quantum_efficiency(double i_inf, double i_total, const EfficiencyBudget& budget) {
  budget.validate();
  if (!(i_inf > 0.0) || !(i_total > 0.0) || !std::isfinite(i_inf) || !std::isfinite(i_total)) {
    throw InvalidArgument("quantum_efficiency: rates must be positive and finite");
  }
  QuantumEfficiency q;
  q.detection_probability = budget.product();
  q.eta_q = i_inf / (i_total * q.detection_probability);
  q.exceeds_unity = q.eta_q > 1.0;
  return q;
}

double total_rate_from_lifetime(double lifetime_ps) {
  if (!(lifetime_ps > 0.0)) throw InvalidArgument("total_rate_from_lifetime: lifetime must be positive");
  return units::kPsPerSecond / lifetime_ps;
}

Ratio enhancement_ratio(const kinetics::SaturationParams& sat_a, const kinetics::SaturationParams& sat_b) {
  if (!(sat_a.i_inf > 0.0) || !(sat_b.i_inf > 0.0)) throw InvalidArgument("enhancement_ratio: i_inf must be positive");
  Ratio r;
  r.value = sat_b.i_inf / sat_a.i_inf;
  r.sigma = r.value * std::hypot(sat_a.i_inf_sigma / sat_a.i_inf, sat_b.i_inf_sigma / sat_b.i_inf);
  return r;
}

Ratio mean_ratio(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw InvalidArgument("mean_ratio: empty sample");
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  if (!(ma > 0.0)) throw InvalidArgument("mean_ratio: reference mean must be positive");
  Ratio r;
  r.value = mb / ma;
  r.sigma = r.value * std::hypot(sem_of(a) / ma, sem_of(b) / mb);
  return r;
}

}  // namespace emitterlab::optics
