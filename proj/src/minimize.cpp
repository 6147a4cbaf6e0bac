#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "emitterlab/error.hpp"
#include "emitterlab/fitlab.hpp"

namespace emitterlab::fitlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class Transform {
 public:
  explicit Transform(const ParamSpec& spec) : spec_(spec) {
    if (spec.bound == Bound::kInterval && !(spec.upper > spec.lower)) {
      throw InvalidArgument("minimize: parameter '" + spec.name + "' has an empty interval");
    }
  }

  double to_internal(double p) const {
    switch (spec_.bound) {
      case Bound::kFree:
        return p;
      case Bound::kPositive:
        if (!(p > 0.0)) {
          throw InvalidArgument("minimize: positive parameter '" + spec_.name + "' needs a positive start");
        }
        return std::log(p);
      case Bound::kInterval: {
        const double span = spec_.upper - spec_.lower;
        double s = 2.0 * (p - spec_.lower) / span - 1.0;
        s = std::clamp(s, -1.0 + 1e-9, 1.0 - 1e-9);
        return std::atanh(s);
      }
    }
    return p;
  }

  double to_external(double u) const {
    switch (spec_.bound) {
      case Bound::kFree:
        return u;
      case Bound::kPositive:
        return std::exp(u);
      case Bound::kInterval:
        return spec_.lower + 0.5 * (spec_.upper - spec_.lower) * (1.0 + std::tanh(u));
    }
    return u;
  }

  double derivative(double u) const {
    switch (spec_.bound) {
      case Bound::kFree:
        return 1.0;
      case Bound::kPositive:
        return std::exp(u);
      case Bound::kInterval: {
        const double c = std::cosh(u);
        return 0.5 * (spec_.upper - spec_.lower) / (c * c);
      }
    }
    return 1.0;
  }

 private:
  ParamSpec spec_;
};

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

double fd_step(double v, double rel) { return rel * std::max(std::abs(v), 1.0); }

// About the cube root of machine epsilon, which balances truncation and rounding.
constexpr double kCentralRelativeStep = 6e-6;

// Relative cost change below which a step is lost in rounding.
constexpr double kNegligibleReduction = 1e-12;

}  // namespace

std::string_view to_string(FitStatus status) {
  switch (status) {
    case FitStatus::kConverged:
      return "converged";
    case FitStatus::kMaxIterations:
      return "max_iterations";
    case FitStatus::kStalled:
      return "stalled";
    case FitStatus::kUnderdetermined:
      return "underdetermined";
    case FitStatus::kNonFinite:
      return "non_finite";
  }
  return "unknown";
}

const FitParameter& FitResult::param(std::string_view name) const { return params[index(name)]; }

std::size_t FitResult::index(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return i;
  }
  throw InvalidArgument("FitResult: no parameter named '" + std::string(name) + "'");
}

double FitResult::cov(std::size_t i, std::size_t j) const {
  if (covariance.empty()) return std::numeric_limits<double>::quiet_NaN();
  return covariance[i * params.size() + j];
}

std::vector<double> FitResult::values() const {
  std::vector<double> v;
  v.reserve(params.size());
  for (const auto& p : params) v.push_back(p.value);
  return v;
}

FitResult minimize(const ResidualFn& residuals, std::size_t n_residuals, std::span<const ParamSpec> specs,
                   const MinimizeOptions& options) {
  const std::size_t n = specs.size();
  const std::size_t m = n_residuals;

  std::vector<Transform> transforms;
  transforms.reserve(n);
  for (const auto& s : specs) transforms.emplace_back(s);

  FitResult result;
  result.n_points = m;
  result.params.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    result.params[j].name = specs[j].name;
    result.params[j].value = specs[j].initial;
  }
  if (m < n || n == 0) {
    result.status = FitStatus::kUnderdetermined;
    return result;
  }

  Eigen::VectorXd u(n);
  for (std::size_t j = 0; j < n; ++j) u[j] = transforms[j].to_internal(specs[j].initial);

  std::vector<double> ext(n);
  auto evaluate = [&](const Eigen::VectorXd& uu, Eigen::VectorXd& r) {
    for (std::size_t j = 0; j < n; ++j) ext[j] = transforms[j].to_external(uu[j]);
    r.resize(static_cast<Eigen::Index>(m));
    residuals(ext, std::span<double>(r.data(), m));
    return all_finite(r);
  };
  // Forward differences drive the iteration. Their O(h) error floors the
  // attainable gradient, so a stalled fit switches to central differences.
  bool central = false;
  auto jacobian = [&](const Eigen::VectorXd& uu, const Eigen::VectorXd& r0, Eigen::MatrixXd& jac) {
    jac.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    Eigen::VectorXd shifted = uu;
    Eigen::VectorXd r1;
    Eigen::VectorXd r2;
    for (std::size_t j = 0; j < n; ++j) {
      if (central) {
        const double h = fd_step(uu[j], kCentralRelativeStep);
        shifted[j] = uu[j] + h;
        const double up = shifted[j];
        evaluate(shifted, r1);
        shifted[j] = uu[j] - h;
        const double down = shifted[j];
        evaluate(shifted, r2);
        jac.col(static_cast<Eigen::Index>(j)) = (r1 - r2) / (up - down);
      } else {
        const double h = fd_step(uu[j], options.fd_relative_step);
        shifted[j] = uu[j] + h;
        const double actual = shifted[j] - uu[j];
        evaluate(shifted, r1);
        jac.col(static_cast<Eigen::Index>(j)) = (r1 - r0) / actual;
      }
      shifted[j] = uu[j];
    }
  };

  Eigen::VectorXd r;
  if (!evaluate(u, r)) {
    result.status = FitStatus::kNonFinite;
    return result;
  }
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  Eigen::MatrixXd jac;
  Eigen::VectorXd r_trial;
  result.status = FitStatus::kMaxIterations;

  for (int iter = 0; iter <= options.max_iterations; ++iter) {
    jacobian(u, r, jac);
    const Eigen::VectorXd jtr = jac.transpose() * r;
    result.gradient_norm = 2.0 * jtr.norm();
    result.iterations = iter;
    if (result.gradient_norm < options.gradient_tolerance * (1.0 + cost)) {
      result.status = FitStatus::kConverged;
      break;
    }
    if (iter == options.max_iterations) break;

    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const double diag_max = std::max(jtj.diagonal().maxCoeff(), 1e-300);
    bool accepted = false;
    while (lambda < 1e20) {
      Eigen::MatrixXd damped = jtj;
      for (Eigen::Index j = 0; j < damped.rows(); ++j) {
        damped(j, j) += lambda * std::max(jtj(j, j), 1e-12 * diag_max);
      }
      const Eigen::VectorXd step = damped.ldlt().solve(-jtr);
      if (step.allFinite()) {
        const Eigen::VectorXd trial = u + step;
        if (evaluate(trial, r_trial)) {
          const double trial_cost = r_trial.squaredNorm();
          const bool no_progress = trial_cost == cost && step.norm() <= 1e-15 * (1.0 + u.norm());
          if (trial_cost <= cost && !no_progress) {
            u = trial;
            r = r_trial;
            cost = trial_cost;
            lambda = std::max(lambda * 0.1, 1e-15);
            accepted = true;
            break;
          }
        }
      }
      lambda *= 10.0;
    }
    if (!accepted && !central) {
      central = true;
      lambda = 1e-3;
      continue;
    }
    if (!accepted) {
      // No descent possible at any damping; accept the point if it is stationary.
      // With strong curvature the cost stops resolving the last gradient
      // digits, so also accept a point whose Gauss-Newton step would lower
      // the cost by less than rounding can register.
      jacobian(u, r, jac);
      const Eigen::VectorXd g = jac.transpose() * r;
      result.gradient_norm = 2.0 * g.norm();
      const Eigen::VectorXd gn = jac.completeOrthogonalDecomposition().solve(-r);
      result.predicted_reduction = std::abs(g.dot(gn));
      const bool stationary = result.gradient_norm < options.gradient_tolerance * (1.0 + cost) ||
                              result.predicted_reduction < kNegligibleReduction * (1.0 + cost);
      result.status = stationary ? FitStatus::kConverged : FitStatus::kStalled;
      break;
    }
  }

  for (std::size_t j = 0; j < n; ++j) result.params[j].value = transforms[j].to_external(u[j]);
  result.chi2 = cost;
  const double dof = static_cast<double>(m > n ? m - n : 1);
  result.chi2_red = cost / dof;
  result.converged = result.status == FitStatus::kConverged;
  if (!result.converged) {
    return result;
  }

  // Covariance in internal coordinates from the SVD of J, mapped out by the
  // chain rule. Directions with vanishing singular values get infinite variance.
  jacobian(u, r, jac);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const auto& v = svd.matrixV();
  const double s_max = s.size() > 0 ? s[0] : 0.0;
  Eigen::MatrixXd cov_u = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<bool> unidentified(n, false);
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s[k] > 1e-10 * s_max && s[k] > 0.0) {
      cov_u += v.col(k) * v.col(k).transpose() / (s[k] * s[k]);
    } else {
      result.singular_jacobian = true;
      for (std::size_t j = 0; j < n; ++j) {
        if (std::abs(v(static_cast<Eigen::Index>(j), k)) > 1e-6) unidentified[j] = true;
      }
    }
  }
  const double scale = options.scale_covariance ? result.chi2_red : 1.0;
  result.covariance.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double di = transforms[i].derivative(u[i]);
    for (std::size_t j = 0; j < n; ++j) {
      const double dj = transforms[j].derivative(u[j]);
      double c = cov_u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * di * dj * scale;
      if (unidentified[i] || unidentified[j]) c = (i == j) ? kInf : std::numeric_limits<double>::quiet_NaN();
      result.covariance[i * n + j] = c;
    }
    result.params[i].sigma = std::sqrt(result.covariance[i * n + i]);
  }
  return result;
}

FitResult minimize(const CurveModel& model, const CurveData& data, std::span<const ParamSpec> params,
                   const MinimizeOptions& options) {
  if (data.y.size() != data.x.size() || data.sigma.size() != data.x.size()) {
    throw InvalidArgument("minimize: x, y and sigma must have equal length");
  }
  for (double s : data.sigma) {
    if (!(s > 0.0)) throw InvalidArgument("minimize: every sigma must be positive");
  }
  auto residuals = [&](std::span<const double> p, std::span<double> out) {
    for (std::size_t i = 0; i < data.x.size(); ++i) {
      out[i] = (model(data.x[i], p) - data.y[i]) / data.sigma[i];
    }
  };
  return minimize(residuals, data.x.size(), params, options);
}

std::vector<double> forward_jacobian(const CurveModel& model, std::span<const double> x,
                                     std::span<const double> params, double rel_step) {
  const std::size_t n = params.size();
  std::vector<double> jac(x.size() * n);
  std::vector<double> p(params.begin(), params.end());
  for (std::size_t j = 0; j < n; ++j) {
    const double h = rel_step * (params[j] != 0.0 ? std::abs(params[j]) : 1.0);
    p[j] = params[j] + h;
    const double actual = p[j] - params[j];
    for (std::size_t i = 0; i < x.size(); ++i) {
      jac[i * n + j] = (model(x[i], p) - model(x[i], params)) / actual;
    }
    p[j] = params[j];
  }
  return jac;
}

std::vector<double> central_jacobian(const CurveModel& model, std::span<const double> x,
                                     std::span<const double> params, double rel_step) {
  const std::size_t n = params.size();
  std::vector<double> jac(x.size() * n);
  std::vector<double> hi(params.begin(), params.end());
  std::vector<double> lo(params.begin(), params.end());
  for (std::size_t j = 0; j < n; ++j) {
    const double h = rel_step * (params[j] != 0.0 ? std::abs(params[j]) : 1.0);
    hi[j] = params[j] + h;
    lo[j] = params[j] - h;
    for (std::size_t i = 0; i < x.size(); ++i) {
      jac[i * n + j] = (model(x[i], hi) - model(x[i], lo)) / (hi[j] - lo[j]);
    }
    hi[j] = lo[j] = params[j];
  }
  return jac;
}

nlohmann::json to_json(const FitResult& fit) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& p : fit.params) {
    nlohmann::json entry;
    entry["value"] = p.value;
    if (p.sigma && std::isfinite(*p.sigma)) {
      entry["sigma"] = *p.sigma;
    } else {
      entry["sigma"] = nullptr;
    }
    params[p.name] = entry;
  }
  return {{"params", params},
          {"chi2_red", fit.chi2_red},
          {"converged", fit.converged},
          {"iters", fit.iterations},
          {"status", std::string(to_string(fit.status))}};
}

}  // namespace emitterlab::fitlab
