#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emitterlab/correlator.hpp"
#include "emitterlab/fitlab.hpp"
#include "emitterlab/kinetics.hpp"

namespace emitterlab::fitlab {

// ---- cw g2 ---------------------------------------------------------------

enum class G2Mode {
  kConstrained,  ///< alpha = 1 + beta
  kFree,
};

struct G2Fit {
  /// Parameters alpha, beta, tau1 (ns), tau2 (ns), always in that order.
  /// In constrained mode alpha is derived and its row of the covariance follows beta.
  FitResult fit;
  kinetics::G2Params params;
  double g2_zero = 0.0;
  double g2_zero_sigma = 0.0;
};

/// Starting point derived from the histogram shape alone.
kinetics::G2Params seed_g2(const correlator::CorrelationHistogram& hist);

/// Fits the bin-averaged g2 model to a normalized histogram with Poisson
/// weights sqrt(max(counts, 1)). tau1 <= tau2 is enforced after the fit by
/// relabelling (alpha, beta) -> (-beta, -alpha). Throws InvalidArgument when
/// the window is shorter than 5 tau2 of the seed.
G2Fit fit_g2_cw(const correlator::CorrelationHistogram& hist, G2Mode mode, const MinimizeOptions& options = {});

// ---- saturation ----------------------------------------------------------

struct SaturationFit {
  FitResult fit;  ///< p_sat (mW), i_inf (counts/s)
  kinetics::SaturationParams params;
};

/// I(P) = i_inf P / (P + p_sat). With an empty sigma vector the weights are
/// relative (sigma_i = I_i) and the covariance is rescaled by the reduced chi^2.
SaturationFit fit_saturation(const CurveData& points, const MinimizeOptions& options = {});

// ---- lifetime ------------------------------------------------------------

struct IRFModel {
  enum class Kind { kDelta, kGaussian, kTabulated };
  Kind kind = Kind::kGaussian;
  double sigma = 30.0;  ///< ps, Gaussian only
  /// Tabulated response: sample times (ps) and weights; normalized to unit sum.
  std::vector<double> t;
  std::vector<double> y;

  static IRFModel delta() { return {Kind::kDelta, 0.0, {}, {}}; }
  static IRFModel gaussian(double sigma_ps) { return {Kind::kGaussian, sigma_ps, {}, {}}; }
  static IRFModel tabulated(std::vector<double> t_ps, std::vector<double> weights);
};

/// Discrete kernel on the histogram grid: offsets (ps) and unit-sum weights.
struct IRFKernel {
  std::vector<double> offsets;
  std::vector<double> weights;
};
IRFKernel discretize_irf(const IRFModel& irf, double bin_width_ps);

struct DecayHistogram {
  std::vector<double> t;       ///< bin centres, ps, uniformly spaced
  std::vector<double> counts;
};

/// baseline + amplitude * sum_j w_j * P(bin | t0 + s_j, tau): each IRF sample
/// shifts a unit-area exponential whose probability mass in the bin is exact.
double lifetime_model(const IRFKernel& kernel, double bin_width, double t, double tau, double amplitude,
                      double t0, double baseline);

/// Parameters tau (ps), amplitude (total decay counts), t0 (ps), baseline (counts/bin).
FitResult fit_lifetime(const DecayHistogram& decay, const IRFModel& irf, const MinimizeOptions& options = {});

// ---- polarization --------------------------------------------------------

struct PolarizationFit {
  FitResult fit;  ///< y0, A, a, phi (deg)
  double visibility = 0.0;
  double visibility_sigma = 0.0;
};

/// y = y0 + A cos^2(a x + phi), x and phi in degrees. Empty sigma means
/// Poisson weights sqrt(max(y, 1)). The result is normalized to A >= 0 and
/// phi in [0, 180).
PolarizationFit fit_polarization(const CurveData& points, const MinimizeOptions& options = {});

double polarization_model(double angle_deg, double y0, double amplitude, double a, double phi_deg);

// ---- empirical deshelving ------------------------------------------------

/// k31(P) = a exp(-b P) + d P / (P + c).
double k31_power_model(double power, double a, double b, double c, double d);

/// Parameters a, b, c, d, all positive. Empty sigma means relative weights.
FitResult fit_k31_power(const CurveData& points, const MinimizeOptions& options = {});

// ---- rate extraction -----------------------------------------------------

struct PowerSeriesPoint {
  double power = 0.0;  ///< mW
  double tau1 = 0.0;   ///< ns
  double tau2 = 0.0;   ///< ns
  double beta = 0.0;
  double tau1_sigma = 0.0;
  double tau2_sigma = 0.0;
  double beta_sigma = 0.0;
};

/// Points whose largest beta falls below this carry no usable deshelving information.
inline constexpr double kK31IdentifiableBeta = 0.05;

struct RateExtraction {
  FitResult fit;  ///< k21, k23 (1/ns), eta (1/(ns mW))
  double k21 = 0.0;
  double k23 = 0.0;
  double eta = 0.0;
  std::vector<double> k31;  ///< per power, 1/ns
  std::vector<double> k31_sigma;
  double lifetime_ns = 0.0;  ///< (k21 + k23)^-1
  double lifetime_sigma_ns = 0.0;
  bool k31_identifiable = true;
};

/// Per-point k31 from the beta relation, then a joint fit of tau1(P) and
/// tau2(P) with k12 = eta P. Residuals are weighted by each point's sigma
/// (1e-3 relative when missing). Throws InvalidArgument for fewer than 4
/// points and InconsistentSeriesError when a k31 denominator is not positive.
RateExtraction extract_rates(const std::vector<PowerSeriesPoint>& series, const MinimizeOptions& options = {});

struct LifetimeComparison {
  double difference = 0.0;  ///< extracted - measured
  double sigma = 0.0;       ///< combined
  double z = 0.0;
  double relative_difference = 0.0;
  bool consistent = false;  ///< |z| <= 2
};

LifetimeComparison lifetime_consistency(double extracted, double extracted_sigma, double measured,
                                        double measured_sigma);

}  // namespace emitterlab::fitlab
