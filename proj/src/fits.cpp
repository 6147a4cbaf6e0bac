#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "emitterlab/error.hpp"
#include "emitterlab/fits.hpp"

namespace emitterlab::fitlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Returns cov' = T cov T^T for a square row-major covariance.
std::vector<double> transform_covariance(const std::vector<double>& cov, const std::vector<double>& t,
                                         std::size_t n) {
  if (cov.empty()) return cov;
  std::vector<double> tmp(n * n, 0.0);
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (t[i * n + k] != 0.0) s += t[i * n + k] * cov[k * n + j];
      }
      tmp[i * n + j] = s;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (t[j * n + k] != 0.0) s += tmp[i * n + k] * t[j * n + k];
      }
      out[i * n + j] = s;
    }
  }
  return out;
}

void refresh_sigmas(FitResult& fit) {
  const std::size_t n = fit.params.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (fit.converged && !fit.covariance.empty()) {
      fit.params[i].sigma = std::sqrt(std::max(fit.covariance[i * n + i], 0.0));
    } else {
      fit.params[i].sigma.reset();
    }
  }
}

double sigma_or_nan(const FitParameter& p) { return p.sigma ? *p.sigma : kNaN; }

/// Relative weights when no sigmas are given; returns whether they were filled in.
bool fill_relative_sigma(CurveData& data) {
  if (!data.sigma.empty()) return false;
  data.sigma.resize(data.y.size());
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    data.sigma[i] = std::max(std::abs(data.y[i]), 1e-300);
  }
  return true;
}

void check_curve(const CurveData& data, const char* who) {
  if (data.y.size() != data.x.size() || (!data.sigma.empty() && data.sigma.size() != data.x.size())) {
    throw InvalidArgument(std::string(who) + ": x, y and sigma must have equal length");
  }
}

}  // namespace

// ---- cw g2 ---------------------------------------------------------------

kinetics::G2Params seed_g2(const correlator::CorrelationHistogram& hist) {
  const auto half = static_cast<std::size_t>(hist.half_bins);
  const std::size_t z = hist.zero_index();
  const double w = static_cast<double>(hist.bin_width) * 1e-3;
  if (hist.g2.size() != 2 * half + 1 || half < 2) {
    throw InvalidArgument("seed_g2: histogram needs at least two bins on each side of zero");
  }

  std::vector<double> folded(half + 1);
  std::vector<double> err(half + 1);
  folded[0] = hist.g2[z];
  err[0] = hist.g2_err[z];
  for (std::size_t k = 1; k <= half; ++k) {
    folded[k] = 0.5 * (hist.g2[z + k] + hist.g2[z - k]);
    err[k] = 0.5 * std::hypot(hist.g2_err[z + k], hist.g2_err[z - k]);
  }
  std::vector<double> smooth(folded);
  for (std::size_t k = 1; k + 1 <= half; ++k) {
    smooth[k] = (folded[k - 1] + folded[k] + folded[k + 1]) / 3.0;
  }

  const std::size_t k_peak =
      static_cast<std::size_t>(std::max_element(smooth.begin() + 1, smooth.end()) - smooth.begin());
  const double noise = std::accumulate(err.begin() + 1, err.end(), 0.0) / static_cast<double>(half);
  double beta = smooth[k_peak] - 1.0;
  const bool bunched = beta > 3.0 * noise && beta > 0.0;
  if (!bunched) beta = 0.0;

  // Dip half-width: level halfway between g2(0) and the recovered plateau.
  const double y0 = folded[0];
  const double level = 0.5 * (y0 + 1.0 + beta);
  double half_width = 0.5 * w;
  for (std::size_t k = 1; k <= half; ++k) {
    if (smooth[k] >= level) {
      const double lo = smooth[k - 1];
      const double frac = smooth[k] > lo ? (level - lo) / (smooth[k] - lo) : 1.0;
      half_width = std::max(w * (static_cast<double>(k - 1) + std::clamp(frac, 0.0, 1.0)), 0.5 * w);
      break;
    }
  }
  const double tau1 = half_width / std::log(2.0);

  double tau2 = 5.0 * tau1;
  if (bunched) {
    const double target = beta / std::exp(1.0);
    tau2 = (static_cast<double>(half) + 0.5) * w;  // not found: the window is too short
    for (std::size_t k = k_peak; k <= half; ++k) {
      if (smooth[k] - 1.0 <= target) {
        tau2 = w * static_cast<double>(k);
        break;
      }
    }
    tau2 = std::max(tau2, 2.0 * tau1);
  }
  return {1.0 + beta, beta, tau1, tau2};
}

G2Fit fit_g2_cw(const correlator::CorrelationHistogram& hist, G2Mode mode, const MinimizeOptions& options) {
  const kinetics::G2Params seed = seed_g2(hist);
  const double w = static_cast<double>(hist.bin_width) * 1e-3;
  const double half_window = (static_cast<double>(hist.half_bins) + 0.5) * w;
  if (half_window < 5.0 * seed.tau2) {
    throw InvalidArgument("fit_g2_cw: correlation window is shorter than 5 tau2 (" +
                          std::to_string(seed.tau2) + " ns)");
  }
  if (!(hist.normalization > 0.0)) throw InvalidArgument("fit_g2_cw: histogram has no normalization");

  CurveData data;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    data.x.push_back(hist.tau(i) * 1e-3);
    data.y.push_back(hist.g2[i]);
    data.sigma.push_back(std::sqrt(std::max(static_cast<double>(hist.counts[i]), 1.0)) / hist.normalization);
  }

  const bool free = mode == G2Mode::kFree;
  std::vector<ParamSpec> specs;
  if (free) specs.push_back({"alpha", seed.alpha, Bound::kFree});
  specs.push_back({"beta", seed.beta, Bound::kFree});
  specs.push_back({"tau1", seed.tau1, Bound::kPositive});
  specs.push_back({"tau2", seed.tau2, Bound::kPositive});

  const CurveModel model = [free, w](double x, std::span<const double> p) {
    kinetics::G2Params g;
    std::size_t i = 0;
    if (free) g.alpha = p[i++];
    g.beta = p[i++];
    if (!free) g.alpha = 1.0 + g.beta;
    g.tau1 = p[i++];
    g.tau2 = p[i];
    return kinetics::g2_bin_average(g, x - 0.5 * w, x + 0.5 * w);
  };
  const FitResult raw = minimize(model, data, specs, options);

  G2Fit out;
  FitResult& fit = out.fit;
  fit = raw;
  if (!free) {
    // Re-express over (alpha, beta, tau1, tau2) with alpha = 1 + beta.
    fit.params.insert(fit.params.begin(), FitParameter{"alpha", 1.0 + raw.params[0].value, std::nullopt});
    if (!raw.covariance.empty()) {
      std::vector<double> t = {1, 0, 0,  //
                               1, 0, 0,  //
                               0, 1, 0,  //
                               0, 0, 1};
      fit.covariance.assign(16, 0.0);
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
          double s = 0.0;
          for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = 0; b < 3; ++b) s += t[i * 3 + a] * raw.covariance[a * 3 + b] * t[j * 3 + b];
          }
          fit.covariance[i * 4 + j] = s;
        }
      }
    }
  }

  kinetics::G2Params g{fit.params[0].value, fit.params[1].value, fit.params[2].value, fit.params[3].value};
  if (g.tau1 > g.tau2) {
    const std::vector<double> t = {0, -1, 0, 0,  //
                                   -1, 0, 0, 0,  //
                                   0, 0, 0, 1,   //
                                   0, 0, 1, 0};
    fit.covariance = transform_covariance(fit.covariance, t, 4);
    g = {-g.beta, -g.alpha, g.tau2, g.tau1};
    fit.params[0].value = g.alpha;
    fit.params[1].value = g.beta;
    fit.params[2].value = g.tau1;
    fit.params[3].value = g.tau2;
  }
  refresh_sigmas(fit);
  out.params = g;
  out.g2_zero = g.g2_zero();
  if (fit.converged && !fit.covariance.empty()) {
    const double var = fit.cov(0, 0) + fit.cov(1, 1) - 2.0 * fit.cov(0, 1);
    out.g2_zero_sigma = std::sqrt(std::max(var, 0.0));
  } else {
    out.g2_zero_sigma = kNaN;
  }
  return out;
}

// ---- saturation ----------------------------------------------------------

SaturationFit fit_saturation(const CurveData& points, const MinimizeOptions& options) {
  check_curve(points, "fit_saturation");
  CurveData data = points;
  MinimizeOptions opts = options;
  if (fill_relative_sigma(data)) opts.scale_covariance = true;

  // Seed from the extreme powers: 1/I = 1/i_inf + (p_sat/i_inf) (1/P).
  double p_sat = 1.0;
  double i_inf = 1.0;
  if (!data.x.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(data.x.begin(), data.x.end());
    const std::size_t lo = static_cast<std::size_t>(lo_it - data.x.begin());
    const std::size_t hi = static_cast<std::size_t>(hi_it - data.x.begin());
    i_inf = std::max(std::abs(data.y[hi]), 1e-300) * 2.0;
    p_sat = std::max(data.x[hi], 1e-300);
    if (lo != hi && data.x[lo] > 0.0 && data.y[lo] > 0.0 && data.y[hi] > 0.0) {
      const double slope = (1.0 / data.y[lo] - 1.0 / data.y[hi]) / (1.0 / data.x[lo] - 1.0 / data.x[hi]);
      const double intercept = 1.0 / data.y[hi] - slope / data.x[hi];
      if (intercept > 0.0 && slope > 0.0) {
        i_inf = 1.0 / intercept;
        p_sat = slope / intercept;
      }
    }
  }

  const std::vector<ParamSpec> specs = {{"p_sat", p_sat, Bound::kPositive}, {"i_inf", i_inf, Bound::kPositive}};
  const CurveModel model = [](double p, std::span<const double> q) { return q[1] * p / (p + q[0]); };

  SaturationFit out;
  out.fit = minimize(model, data, specs, opts);
  out.params.p_sat = out.fit.params[0].value;
  out.params.i_inf = out.fit.params[1].value;
  out.params.p_sat_sigma = sigma_or_nan(out.fit.params[0]);
  out.params.i_inf_sigma = sigma_or_nan(out.fit.params[1]);
  return out;
}

// ---- lifetime ------------------------------------------------------------

IRFModel IRFModel::tabulated(std::vector<double> t_ps, std::vector<double> weights) {
  IRFModel irf;
  irf.kind = Kind::kTabulated;
  irf.sigma = 0.0;
  irf.t = std::move(t_ps);
  irf.y = std::move(weights);
  return irf;
}

IRFKernel discretize_irf(const IRFModel& irf, double bin_width_ps) {
  if (!(bin_width_ps > 0.0)) throw InvalidArgument("discretize_irf: bin width must be positive");
  IRFKernel kernel;
  switch (irf.kind) {
    case IRFModel::Kind::kDelta:
      kernel.offsets = {0.0};
      kernel.weights = {1.0};
      return kernel;
    case IRFModel::Kind::kGaussian: {
      if (!(irf.sigma >= 0.0)) throw InvalidArgument("discretize_irf: negative IRF sigma");
      if (irf.sigma == 0.0) return discretize_irf(IRFModel::delta(), bin_width_ps);
      const int reach = static_cast<int>(std::ceil(6.0 * irf.sigma / bin_width_ps));
      for (int k = -reach; k <= reach; ++k) {
        const double lo = (k - 0.5) * bin_width_ps / irf.sigma;
        const double hi = (k + 0.5) * bin_width_ps / irf.sigma;
        kernel.offsets.push_back(k * bin_width_ps);
        kernel.weights.push_back(normal_cdf(hi) - normal_cdf(lo));
      }
      break;
    }
    case IRFModel::Kind::kTabulated: {
      if (irf.t.size() != irf.y.size() || irf.t.empty()) {
        throw InvalidArgument("discretize_irf: tabulated IRF needs matching, nonempty t and y");
      }
      for (double v : irf.y) {
        if (!(v >= 0.0)) throw InvalidArgument("discretize_irf: IRF weights must be nonnegative");
      }
      kernel.offsets = irf.t;
      kernel.weights = irf.y;
      break;
    }
  }
  const double sum = std::accumulate(kernel.weights.begin(), kernel.weights.end(), 0.0);
  if (!(sum > 0.0)) throw InvalidArgument("discretize_irf: IRF has zero area");
  for (double& v : kernel.weights) v /= sum;
  return kernel;
}

double lifetime_model(const IRFKernel& kernel, double bin_width, double t, double tau, double amplitude,
                      double t0, double baseline) {
  const double lo = t - 0.5 * bin_width;
  const double hi = t + 0.5 * bin_width;
  double mass = 0.0;
  for (std::size_t j = 0; j < kernel.offsets.size(); ++j) {
    const double start = t0 + kernel.offsets[j];
    if (hi <= start) continue;
    const double a = std::max(lo - start, 0.0);
    const double b = hi - start;
    mass += kernel.weights[j] * (std::exp(-a / tau) - std::exp(-b / tau));
  }
  return baseline + amplitude * mass;
}

FitResult fit_lifetime(const DecayHistogram& decay, const IRFModel& irf, const MinimizeOptions& options) {
  const std::size_t n = decay.t.size();
  if (decay.counts.size() != n || n < 8) {
    throw InvalidArgument("fit_lifetime: need at least 8 bins with matching t and counts");
  }
  const double width = decay.t[1] - decay.t[0];
  if (!(width > 0.0)) throw InvalidArgument("fit_lifetime: bin times must increase");
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs(decay.t[i] - decay.t[i - 1] - width) > 1e-6 * width) {
      throw InvalidArgument("fit_lifetime: bins must be uniformly spaced");
    }
  }
  const IRFKernel kernel = discretize_irf(irf, width);

  std::vector<double> sorted(decay.counts);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n_low = std::max<std::size_t>(n / 10, 1);
  const double baseline = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n_low), 0.0) /
                          static_cast<double>(n_low);
  const std::size_t peak =
      static_cast<std::size_t>(std::max_element(decay.counts.begin(), decay.counts.end()) - decay.counts.begin());
  const double height = decay.counts[peak] - baseline;
  double tau = width;
  for (std::size_t i = peak; i < n; ++i) {
    if (decay.counts[i] - baseline <= height / std::exp(1.0)) {
      tau = std::max(decay.t[i] - decay.t[peak], width);
      break;
    }
  }
  if (decay.t[n - 1] - decay.t[peak] < 5.0 * tau) {
    throw InvalidArgument("fit_lifetime: histogram covers fewer than 5 lifetimes after the peak");
  }
  double amplitude = 0.0;
  for (double c : decay.counts) amplitude += std::max(c - baseline, 0.0);
  amplitude = std::max(amplitude, 1.0);
  // Onset at the half-height crossing of the rising edge. Seeding on a bin
  // edge would start a delta-IRF fit on a kink of the model.
  double t0 = decay.t[peak] - 0.5 * width;
  for (std::size_t i = peak; i > 0; --i) {
    const double lo = decay.counts[i - 1] - baseline;
    const double hi = decay.counts[i] - baseline;
    if (lo < 0.5 * height && hi >= 0.5 * height) {
      t0 = decay.t[i - 1] + width * (0.5 * height - lo) / (hi - lo);
      break;
    }
  }

  CurveData data;
  data.x = decay.t;
  data.y = decay.counts;
  data.sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) data.sigma[i] = std::sqrt(std::max(decay.counts[i], 1.0));

  const std::vector<ParamSpec> specs = {{"tau", tau, Bound::kPositive},
                                        {"amplitude", amplitude, Bound::kPositive},
                                        {"t0", t0, Bound::kFree},
                                        {"baseline", baseline, Bound::kFree}};
  const CurveModel model = [&kernel, width](double t, std::span<const double> p) {
    return lifetime_model(kernel, width, t, p[0], p[1], p[2], p[3]);
  };
  FitResult fit = minimize(model, data, specs, options);

  // Count-based weights pull the fit towards downward fluctuations in the
  // sparse tail. Reweighting with the fitted model until the weights settle
  // reaches the Poisson likelihood optimum.
  constexpr int kReweightPasses = 8;
  for (int pass = 0; pass < kReweightPasses && fit.converged; ++pass) {
    std::vector<ParamSpec> restart = specs;
    std::vector<double> p(specs.size());
    for (std::size_t k = 0; k < specs.size(); ++k) {
      p[k] = fit.params[k].value;
      restart[k].initial = p[k];
    }
    for (std::size_t i = 0; i < n; ++i) data.sigma[i] = std::sqrt(std::max(model(data.x[i], p), 1.0));
    FitResult next = minimize(model, data, restart, options);
    if (!next.converged) break;
    const double shift = std::abs(next.params[0].value - p[0]) / p[0];
    fit = std::move(next);
    if (shift < 1e-7) break;
  }
  return fit;
}

// ---- polarization --------------------------------------------------------

double polarization_model(double angle_deg, double y0, double amplitude, double a, double phi_deg) {
  constexpr double kDeg = 3.14159265358979323846 / 180.0;
  const double c = std::cos((a * angle_deg + phi_deg) * kDeg);
  return y0 + amplitude * c * c;
}

PolarizationFit fit_polarization(const CurveData& points, const MinimizeOptions& options) {
  check_curve(points, "fit_polarization");
  CurveData data = points;
  if (data.sigma.empty()) {
    for (double y : data.y) data.sigma.push_back(std::sqrt(std::max(y, 1.0)));
  }

  // Grid over phi with (y0, A) solved linearly at each step.
  double best_cost = std::numeric_limits<double>::infinity();
  double y0_seed = 0.0, amp_seed = 0.0, phi_seed = 0.0;
  for (int phi = 0; phi < 180; ++phi) {
    double s00 = 0, s01 = 0, s11 = 0, b0 = 0, b1 = 0;
    for (std::size_t i = 0; i < data.x.size(); ++i) {
      const double w = 1.0 / (data.sigma[i] * data.sigma[i]);
      const double c = polarization_model(data.x[i], 0.0, 1.0, 1.0, phi);
      s00 += w;
      s01 += w * c;
      s11 += w * c * c;
      b0 += w * data.y[i];
      b1 += w * c * data.y[i];
    }
    const double det = s00 * s11 - s01 * s01;
    if (!(std::abs(det) > 1e-300)) continue;
    const double y0 = (b0 * s11 - b1 * s01) / det;
    const double amp = (s00 * b1 - s01 * b0) / det;
    double cost = 0.0;
    for (std::size_t i = 0; i < data.x.size(); ++i) {
      const double r = (polarization_model(data.x[i], y0, amp, 1.0, phi) - data.y[i]) / data.sigma[i];
      cost += r * r;
    }
    if (cost < best_cost) {
      best_cost = cost;
      y0_seed = y0;
      amp_seed = amp;
      phi_seed = phi;
    }
  }

  const std::vector<ParamSpec> specs = {{"y0", y0_seed, Bound::kFree},
                                        {"A", amp_seed, Bound::kFree},
                                        {"a", 1.0, Bound::kPositive},
                                        {"phi", phi_seed, Bound::kFree}};
  const CurveModel model = [](double x, std::span<const double> p) {
    return polarization_model(x, p[0], p[1], p[2], p[3]);
  };

  PolarizationFit out;
  FitResult& fit = out.fit;
  fit = minimize(model, data, specs, options);

  if (fit.params[1].value < 0.0) {
    const std::vector<double> t = {1, 1, 0, 0,   //
                                   0, -1, 0, 0,  //
                                   0, 0, 1, 0,   //
                                   0, 0, 0, 1};
    fit.covariance = transform_covariance(fit.covariance, t, 4);
    fit.params[0].value += fit.params[1].value;
    fit.params[1].value = -fit.params[1].value;
    fit.params[3].value += 90.0;
  }
  double phi = std::fmod(fit.params[3].value, 180.0);
  if (phi < 0.0) phi += 180.0;
  fit.params[3].value = phi;
  refresh_sigmas(fit);
  // The identity transform drops infinities from unidentified directions; restore them.
  if (fit.converged && !fit.covariance.empty()) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (std::isnan(fit.covariance[i * 4 + i]) || std::isinf(fit.covariance[i * 4 + i])) {
        fit.params[i].sigma = std::numeric_limits<double>::infinity();
      }
    }
  }

  const double y0 = fit.params[0].value;
  const double amp = fit.params[1].value;
  const double denom = amp + 2.0 * y0;
  out.visibility = denom != 0.0 ? amp / denom : 0.0;
  if (fit.converged && !fit.covariance.empty() && denom != 0.0) {
    const double d_y0 = -2.0 * amp / (denom * denom);
    const double d_amp = 2.0 * y0 / (denom * denom);
    const double var = d_y0 * d_y0 * fit.cov(0, 0) + d_amp * d_amp * fit.cov(1, 1) + 2.0 * d_y0 * d_amp * fit.cov(0, 1);
    out.visibility_sigma = std::sqrt(std::max(var, 0.0));
  } else {
    out.visibility_sigma = kNaN;
  }
  return out;
}

// ---- empirical deshelving ------------------------------------------------

double k31_power_model(double power, double a, double b, double c, double d) {
  return a * std::exp(-b * power) + d * power / (power + c);
}

FitResult fit_k31_power(const CurveData& points, const MinimizeOptions& options) {
  check_curve(points, "fit_k31_power");
  if (points.size() < 5) throw InvalidArgument("fit_k31_power: needs at least 5 points");
  CurveData data = points;
  MinimizeOptions opts = options;
  if (fill_relative_sigma(data)) opts.scale_covariance = true;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return data.x[i] < data.x[j]; });
  const double p_mid = std::max(data.x[order[order.size() / 2]], 1e-12);
  const double y_first = std::max(data.y[order.front()], 1e-12);
  const double y_last = std::max(data.y[order.back()], 1e-12);

  const CurveModel model = [](double p, std::span<const double> q) {
    return k31_power_model(p, q[0], q[1], q[2], q[3]);
  };

  // The exponential and saturating terms trade off strongly; start from a
  // small grid of shapes and keep the best converged fit.
  FitResult best;
  bool have = false;
  for (double b_scale : {0.3, 1.0, 3.0}) {
    for (double c_scale : {0.3, 1.0, 3.0}) {
      const std::vector<ParamSpec> specs = {{"a", y_first, Bound::kPositive},
                                            {"b", b_scale / p_mid, Bound::kPositive},
                                            {"c", c_scale * p_mid, Bound::kPositive},
                                            {"d", y_last, Bound::kPositive}};
      FitResult fit = minimize(model, data, specs, opts);
      const bool better = !have || (fit.converged && !best.converged) ||
                          (fit.converged == best.converged && fit.chi2 < best.chi2);
      if (better) {
        best = std::move(fit);
        have = true;
      }
    }
  }
  return best;
}

// ---- rate extraction -----------------------------------------------------

RateExtraction extract_rates(const std::vector<PowerSeriesPoint>& series, const MinimizeOptions& options) {
  if (series.size() < 4) throw InvalidArgument("extract_rates: needs at least 4 powers");
  for (const auto& p : series) {
    if (!(p.power > 0.0) || !(p.tau1 > 0.0) || !(p.tau2 > 0.0)) {
      throw InvalidArgument("extract_rates: powers and timescales must be positive");
    }
  }

  RateExtraction out;
  const std::size_t m = series.size();
  out.k31.resize(m);
  out.k31_sigma.resize(m);
  double max_beta = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& p = series[i];
    try {
      out.k31[i] = kinetics::k31_from_g2_params({1.0 + p.beta, p.beta, p.tau1, p.tau2});
    } catch (const NonPositiveDenominatorError& e) {
      throw InconsistentSeriesError("extract_rates: point " + std::to_string(i) + " at " +
                                    std::to_string(p.power) + " mW: " + e.what());
    }
    const double k = out.k31[i];
    const double var = std::pow(p.tau2 - p.tau1, 2) * p.beta_sigma * p.beta_sigma +
                       p.beta * p.beta * p.tau1_sigma * p.tau1_sigma +
                       std::pow(1.0 + p.beta, 2) * p.tau2_sigma * p.tau2_sigma;
    out.k31_sigma[i] = k * k * std::sqrt(var);
    max_beta = std::max(max_beta, p.beta);
  }
  out.k31_identifiable = max_beta >= kK31IdentifiableBeta;

  // Seed from the root sums: 1/tau1 + 1/tau2 = A and 1/(tau1 tau2) = B are
  // linear in eta P once k31 is known.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = series[i].power;
    const double y = 1.0 / series[i].tau1 + 1.0 / series[i].tau2 - out.k31[i];
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dm = static_cast<double>(m);
  const double det = dm * sxx - sx * sx;
  double eta = det != 0.0 ? (dm * sxy - sx * sy) / det : 1.0;
  double total = (sy - eta * sx) / dm;
  if (!(eta > 0.0)) eta = 1e-3;
  if (!(total > 0.0)) total = 1.0;
  double k23 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double b = 1.0 / (series[i].tau1 * series[i].tau2);
    k23 += (b - out.k31[i] * total) / (eta * series[i].power) - out.k31[i];
  }
  k23 = std::clamp(k23 / dm, 1e-3 * total, 0.9 * total);
  const double k21 = total - k23;

  auto sigma_of = [](double s, double v) { return (s > 0.0 && std::isfinite(s)) ? s : 1e-3 * v; };
  const std::vector<ParamSpec> specs = {{"k21", k21, Bound::kPositive},
                                        {"k23", k23, Bound::kPositive},
                                        {"eta", eta, Bound::kPositive}};
  const ResidualFn residuals = [&](std::span<const double> q, std::span<double> r) {
    for (std::size_t i = 0; i < m; ++i) {
      const auto& p = series[i];
      try {
        const auto g = kinetics::g2_params_from_rates({q[2] * p.power, q[0], q[1], out.k31[i]});
        r[2 * i] = (g.tau1 - p.tau1) / sigma_of(p.tau1_sigma, p.tau1);
        r[2 * i + 1] = (g.tau2 - p.tau2) / sigma_of(p.tau2_sigma, p.tau2);
      } catch (const Error&) {
        r[2 * i] = r[2 * i + 1] = kNaN;
      }
    }
  };
  out.fit = minimize(residuals, 2 * m, specs, options);
  out.k21 = out.fit.params[0].value;
  out.k23 = out.fit.params[1].value;
  out.eta = out.fit.params[2].value;
  const double sum = out.k21 + out.k23;
  out.lifetime_ns = 1.0 / sum;
  if (out.fit.converged && !out.fit.covariance.empty()) {
    const double var = out.fit.cov(0, 0) + out.fit.cov(1, 1) + 2.0 * out.fit.cov(0, 1);
    out.lifetime_sigma_ns = std::sqrt(std::max(var, 0.0)) / (sum * sum);
  } else {
    out.lifetime_sigma_ns = kNaN;
  }
  return out;
}

LifetimeComparison lifetime_consistency(double extracted, double extracted_sigma, double measured,
                                        double measured_sigma) {
  LifetimeComparison c;
  c.difference = extracted - measured;
  c.sigma = std::hypot(extracted_sigma, measured_sigma);
  c.z = c.sigma > 0.0 ? c.difference / c.sigma : (c.difference == 0.0 ? 0.0 : std::copysign(INFINITY, c.difference));
  c.relative_difference = measured != 0.0 ? c.difference / measured : kNaN;
  c.consistent = std::abs(c.z) <= 2.0;
  return c;
}

}  // namespace emitterlab::fitlab
