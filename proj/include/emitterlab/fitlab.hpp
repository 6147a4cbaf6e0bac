#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace emitterlab::fitlab {

/// How a parameter is constrained. Constrained parameters are optimized in
/// a transformed coordinate: log for Positive, tanh for Interval.
enum class Bound { kFree, kPositive, kInterval };

struct ParamSpec {
  std::string name;
  double initial = 0.0;
  Bound bound = Bound::kFree;
  double lower = 0.0;  ///< kInterval only
  double upper = 0.0;  ///< kInterval only
};

/// Fills `weighted_residuals` with (model - y) / sigma for the given parameters.
using ResidualFn = std::function<void(std::span<const double> params, std::span<double> weighted_residuals)>;
/// y = f(x; params).
using CurveModel = std::function<double(double x, std::span<const double> params)>;

struct CurveData {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> sigma;

  std::size_t size() const { return x.size(); }
};

struct MinimizeOptions {
  int max_iterations = 200;
  /// Converged once |grad(cost)| < gradient_tolerance * (1 + cost), or, when
  /// no step lowers the cost, once a Gauss-Newton step would change it by
  /// less than 1e-12 (1 + cost).
  double gradient_tolerance = 1e-8;
  double fd_relative_step = 1e-6;
  /// Multiply the covariance by the reduced chi^2 (for data without absolute sigmas).
  bool scale_covariance = false;
};

enum class FitStatus { kConverged, kMaxIterations, kStalled, kUnderdetermined, kNonFinite };

std::string_view to_string(FitStatus status);

struct FitParameter {
  std::string name;
  double value = 0.0;
  /// 1-sigma uncertainty; only present for converged fits.
  std::optional<double> sigma;
};

struct FitResult {
  std::vector<FitParameter> params;
  /// Row-major parameter covariance (empty unless converged).
  std::vector<double> covariance;
  double chi2 = 0.0;
  double chi2_red = 0.0;
  bool converged = false;
  int iterations = 0;
  FitStatus status = FitStatus::kMaxIterations;
  /// J^T J was rank-deficient; the covariance uses a pseudo-inverse.
  bool singular_jacobian = false;
  double gradient_norm = 0.0;
  /// Cost decrease a Gauss-Newton step would give; set when the fit ended without descent.
  double predicted_reduction = 0.0;
  std::size_t n_points = 0;

  const FitParameter& param(std::string_view name) const;
  double value(std::string_view name) const { return param(name).value; }
  std::size_t index(std::string_view name) const;
  double cov(std::size_t i, std::size_t j) const;
  std::vector<double> values() const;
};

/// Damped least squares (Levenberg-Marquardt) over weighted residuals.
///
/// The Jacobian is taken by forward differences with relative step
/// `fd_relative_step` in the transformed coordinates. Never throws on
/// non-convergence: the status says what happened and sigmas are withheld.
FitResult minimize(const ResidualFn& residuals, std::size_t n_residuals, std::span<const ParamSpec> params,
                   const MinimizeOptions& options = {});

FitResult minimize(const CurveModel& model, const CurveData& data, std::span<const ParamSpec> params,
                   const MinimizeOptions& options = {});

/// d model / d param at each x, forward differences with relative step h (row-major, n_x by n_params).
std::vector<double> forward_jacobian(const CurveModel& model, std::span<const double> x,
                                     std::span<const double> params, double rel_step = 1e-6);
/// Same by central differences; used to validate forward_jacobian.
std::vector<double> central_jacobian(const CurveModel& model, std::span<const double> x,
                                     std::span<const double> params, double rel_step = 1e-5);

/// {params:{name:{value,sigma}}, chi2_red, converged, iters}; sigma is null when absent.
nlohmann::json to_json(const FitResult& fit);

}  // namespace emitterlab::fitlab
