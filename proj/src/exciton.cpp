#include <algorithm>
#include <cmath>
#include <exception>
#include <ostream>
#include <thread>

#include "emitterlab/csv.hpp"
#include "emitterlab/error.hpp"
#include "emitterlab/exciton.hpp"
#include "emitterlab/parallel.hpp"
#include "emitterlab/units.hpp"

namespace emitterlab::exciton {

namespace {

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }

/// Cubic length inside [a, b] (nm).
double cubic_overlap(const StackProfile& stack, double a, double b) {
  double total = 0.0;
  const double d = stack.bilayer_thickness;
  for (std::size_t k = 0; k < stack.bilayers.size(); ++k) {
    if (stack.bilayers[k] != Phase::kCubic) continue;
    const double centre = (stack.first_index + static_cast<int>(k)) * d;
    const double lo = std::max(a, centre - 0.5 * d);
    const double hi = std::min(b, centre + 0.5 * d);
    if (hi > lo) total += hi - lo;
  }
  return total;
}

/// Electrostatic energy -polarity * F * (cubic length left of z).
double field_term(const StackProfile& stack, const ExcitonParams& params, double z) {
  const double d = stack.bilayer_thickness;
  const double left_edge = (stack.first_index - 0.5) * d;
  if (z <= left_edge) return 0.0;
  return -params.polarity * params.field_ev_per_nm() * cubic_overlap(stack, left_edge, z);
}

/// Number of eigenvalues of the tridiagonal matrix below x.
std::size_t sturm_count(const Tridiagonal& m, double x) {
  std::size_t count = 0;
  double q = 1.0;
  for (std::size_t i = 0; i < m.diag.size(); ++i) {
    const double e2 = i == 0 ? 0.0 : m.off[i - 1] * m.off[i - 1];
    q = m.diag[i] - x - (i == 0 ? 0.0 : e2 / q);
    if (q == 0.0) q = -1e-300;
    if (q < 0.0) ++count;
  }
  return count;
}

/// Solves (T - shift) x = rhs for a positive definite shifted matrix.
std::vector<double> thomas_solve(const Tridiagonal& m, double shift, const std::vector<double>& rhs) {
  const std::size_t n = m.diag.size();
  std::vector<double> c(n, 0.0);
  std::vector<double> x(n, 0.0);
  double denom = m.diag[0] - shift;
  c[0] = n > 1 ? m.off[0] / denom : 0.0;
  x[0] = rhs[0] / denom;
  for (std::size_t i = 1; i < n; ++i) {
    denom = m.diag[i] - shift - m.off[i - 1] * c[i - 1];
    if (i + 1 < n) c[i] = m.off[i] / denom;
    x[i] = (rhs[i] - m.off[i - 1] * x[i - 1]) / denom;
  }
  for (std::size_t i = n - 1; i-- > 0;) x[i] -= c[i] * x[i + 1];
  return x;
}

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

// ---- stack ---------------------------------------------------------------

StackProfile StackProfile::parse(std::string_view text, int first_index, double thickness) {
  StackProfile s;
  s.first_index = first_index;
  s.bilayer_thickness = thickness;
  for (char ch : text) {
    switch (ch) {
      case 'h':
      case 'H':
        s.bilayers.push_back(Phase::kHexagonal);
        break;
      case 'c':
      case 'C':
        s.bilayers.push_back(Phase::kCubic);
        break;
      case ' ':
      case ',':
      case '|':
        break;
      default:
        throw InvalidArgument(std::string("StackProfile::parse: unexpected character '") + ch + "'");
    }
  }
  if (s.bilayers.empty()) throw InvalidArgument("StackProfile::parse: empty stack");
  if (!positive_finite(thickness)) throw InvalidArgument("StackProfile::parse: thickness must be positive");
  return s;
}

StackProfile StackProfile::cubic_block(int n, double thickness) {
  if (n < 1) throw InvalidArgument("StackProfile::cubic_block: n must be at least 1");
  return parse(std::string(static_cast<std::size_t>(n), 'c'), -(n - 1) / 2, thickness);
}

StackProfile StackProfile::two_plus_one(int gap, double thickness) {
  if (gap < 0) throw InvalidArgument("StackProfile::two_plus_one: negative gap");
  return parse("cc" + std::string(static_cast<std::size_t>(gap), 'h') + "c", -1, thickness);
}

Phase StackProfile::phase_at(int index) const {
  if (index < first_index || index > last_index()) return Phase::kHexagonal;
  return bilayers[static_cast<std::size_t>(index - first_index)];
}

int StackProfile::cubic_count() const {
  return static_cast<int>(std::count(bilayers.begin(), bilayers.end(), Phase::kCubic));
}

std::vector<int> StackProfile::interface_bilayers() const {
  std::vector<int> out;
  for (int i = first_index - 1; i <= last_index() + 1; ++i) {
    if (phase_at(i) != Phase::kHexagonal) continue;
    if (phase_at(i - 1) == Phase::kCubic || phase_at(i + 1) == Phase::kCubic) out.push_back(i);
  }
  return out;
}

StackProfile StackProfile::shifted(int offset) const {
  StackProfile s = *this;
  s.first_index += offset;
  return s;
}

StackProfile StackProfile::mirrored() const {
  StackProfile s = *this;
  std::reverse(s.bilayers.begin(), s.bilayers.end());
  s.first_index = -last_index();
  return s;
}

std::string StackProfile::to_string() const {
  std::string out;
  for (Phase p : bilayers) out.push_back(p == Phase::kCubic ? 'c' : 'h');
  return out;
}

// ---- parameters ----------------------------------------------------------

void ExcitonParams::validate() const {
  if (!positive_finite(m_eff) || !positive_finite(eps_r) || !positive_finite(softening)) {
    throw InvalidArgument("ExcitonParams: m_eff, eps_r and softening must be positive");
  }
  if (!positive_finite(e0)) throw InvalidArgument("ExcitonParams: e0 must be positive");
  if (!std::isfinite(dE_cbm) || !std::isfinite(dE_vbm) || !std::isfinite(interface_field)) {
    throw InvalidArgument("ExcitonParams: offsets and field must be finite");
  }
  if (polarity != 1 && polarity != -1) throw InvalidArgument("ExcitonParams: polarity must be +1 or -1");
}

double ExcitonParams::field_ev_per_nm() const { return interface_field * units::kEvPerNmPerMvPerCm; }

std::size_t GridSpec::points() const {
  if (!positive_finite(half_width) || !positive_finite(step) || step > half_width) {
    throw InvalidArgument("GridSpec: half_width and step must be positive with step <= half_width");
  }
  return static_cast<std::size_t>(std::llround(2.0 * half_width / step)) + 1;
}

// ---- potential -----------------------------------------------------------

BandEdges band_edges_at(const StackProfile& stack, const ExcitonParams& params, double z) {
  const int index = static_cast<int>(std::floor(z / stack.bilayer_thickness + 0.5));
  const bool cubic = stack.phase_at(index) == Phase::kCubic;
  const double s = field_term(stack, params, z);
  return {(cubic ? params.dE_cbm : 0.0) + s, (cubic ? params.dE_vbm : 0.0) + s};
}

PotentialGrid build_potential(const StackProfile& stack, const ExcitonParams& params, const GridSpec& grid) {
  params.validate();
  const std::size_t n = grid.points();
  const double d = stack.bilayer_thickness;
  const double lo_wall = grid.center - grid.half_width;
  const double hi_wall = grid.center + grid.half_width;
  const double stack_lo = (stack.first_index - 0.5) * d;
  const double stack_hi = (stack.last_index() + 0.5) * d;
  const double slack = 1e-9;
  if (stack_lo - lo_wall < kMinPadding - slack || hi_wall - stack_hi < kMinPadding - slack) {
    throw DomainTooSmallError("build_potential: domain [" + std::to_string(lo_wall) + ", " +
                              std::to_string(hi_wall) + "] nm leaves less than 10 nm around the stack [" +
                              std::to_string(stack_lo) + ", " + std::to_string(stack_hi) + "] nm");
  }

  PotentialGrid pot;
  pot.z0 = lo_wall;
  pot.step = grid.step;
  pot.v_cbm.resize(n);
  pot.v_vbm.resize(n);
  const double h = grid.step;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = pot.z(i);
    const double frac = cubic_overlap(stack, z - 0.5 * h, z + 0.5 * h) / h;
    const double s = field_term(stack, params, z);
    pot.v_cbm[i] = params.dE_cbm * frac + s;
    pot.v_vbm[i] = params.dE_vbm * frac + s;
  }
  return pot;
}

PotentialGrid flat_potential(const GridSpec& grid) {
  const std::size_t n = grid.points();
  PotentialGrid pot;
  pot.z0 = grid.center - grid.half_width;
  pot.step = grid.step;
  pot.v_cbm.assign(n, 0.0);
  pot.v_vbm.assign(n, 0.0);
  return pot;
}

// ---- eigensolver ---------------------------------------------------------

Tridiagonal electron_hamiltonian(const PotentialGrid& potential, double hole_z, const ExcitonParams& params) {
  params.validate();
  const std::size_t n = potential.size();
  if (n < 3) throw InvalidArgument("electron_hamiltonian: grid needs at least 3 points");
  const double h = potential.step;
  const double t = units::kHbarSqOver2Me / (params.m_eff * h * h);
  const double coulomb = units::kCoulombEvNm / params.eps_r;
  const double s2 = params.softening * params.softening;
  Tridiagonal m;
  m.diag.resize(n);
  m.off.assign(n - 1, -t);
  for (std::size_t i = 0; i < n; ++i) {
    const double dz = potential.z(i) - hole_z;
    m.diag[i] = 2.0 * t + potential.v_cbm[i] - coulomb / std::sqrt(dz * dz + s2);
  }
  return m;
}

Eigenpair lowest_eigenpair(const Tridiagonal& m) {
  const std::size_t n = m.diag.size();
  if (n == 0 || m.off.size() + 1 != n) throw InvalidArgument("lowest_eigenpair: inconsistent matrix sizes");
  if (n == 1) return {m.diag[0], {1.0}, 0};

  double lo = m.diag[0];
  double hi = m.diag[0];
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (i > 0 ? std::abs(m.off[i - 1]) : 0.0) + (i + 1 < n ? std::abs(m.off[i]) : 0.0);
    lo = std::min(lo, m.diag[i] - r);
    hi = std::max(hi, m.diag[i] + r);
  }
  const double scale = std::max(std::abs(lo), std::abs(hi));
  // Bisection on the Sturm count: invariant count(lo) = 0, count(hi) >= 1.
  for (int k = 0; k < 200 && hi - lo > 4e-16 * scale; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (sturm_count(m, mid) >= 1) {
      hi = mid;
    } else {
      lo = mid;
    }
  }

  // Inverse iteration just below the eigenvalue keeps the shifted matrix definite.
  const double shift = lo - 1e-9 * std::max(scale, 1.0);
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  Eigenpair out;
  bool converged = false;
  for (int it = 1; it <= 50; ++it) {
    std::vector<double> w = thomas_solve(m, shift, v);
    const double nrm = norm2(w);
    if (!std::isfinite(nrm) || nrm == 0.0) throw EigenSolverError("lowest_eigenpair: inverse iteration broke down");
    for (double& x : w) x /= nrm;
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
    v = std::move(w);
    out.iterations = it;
    if (diff < 1e-13) {
      converged = true;
      break;
    }
  }
  if (!converged) throw EigenSolverError("lowest_eigenpair: inverse iteration did not converge");

  // Fix the sign so the largest component is positive.
  const auto big = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  if (*big < 0.0) {
    for (double& x : v) x = -x;
  }
  double rq = 0.0;
  double resid = 0.0;
  std::vector<double> tv(n);
  for (std::size_t i = 0; i < n; ++i) {
    tv[i] = m.diag[i] * v[i] + (i > 0 ? m.off[i - 1] * v[i - 1] : 0.0) + (i + 1 < n ? m.off[i] * v[i + 1] : 0.0);
    rq += v[i] * tv[i];
  }
  for (std::size_t i = 0; i < n; ++i) resid = std::max(resid, std::abs(tv[i] - rq * v[i]));
  if (resid > 1e-8 * std::max(scale, 1.0)) {
    throw EigenSolverError("lowest_eigenpair: residual " + std::to_string(resid) + " too large");
  }
  out.value = rq;
  out.vector = std::move(v);
  return out;
}

ElectronState solve_electron(const PotentialGrid& potential, double hole_z, const ExcitonParams& params) {
  const Tridiagonal m = electron_hamiltonian(potential, hole_z, params);
  Eigenpair pair = lowest_eigenpair(m);
  ElectronState state;
  state.energy = pair.value;
  const double h = potential.step;
  const double scale = 1.0 / std::sqrt(h);
  state.psi = std::move(pair.vector);
  double mean = 0.0;
  for (std::size_t i = 0; i < state.psi.size(); ++i) {
    state.psi[i] *= scale;
    mean += state.psi[i] * state.psi[i] * h * potential.z(i);
  }
  state.mean_z = mean;
  const double left = state.psi.front() * state.psi.front();
  const double right = state.psi.back() * state.psi.back();
  state.wall_density = std::max(left, right);
  state.boundary_contaminated = state.wall_density > kWallDensityLimit;
  return state;
}

// ---- ZPL -----------------------------------------------------------------

ZplEntry zpl_for_defect(const StackProfile& stack, int defect_index, const ExcitonParams& params,
                        const GridSpec& grid) {
  const PotentialGrid pot = build_potential(stack, params, grid);
  const double z_d = stack.center_of(defect_index);
  const double z_end = pot.z(pot.size() - 1);
  if (z_d < pot.z0 || z_d > z_end) {
    throw InvalidArgument("zpl_for_defect: defect bilayer " + std::to_string(defect_index) +
                          " lies outside the grid");
  }
  const ElectronState state = solve_electron(pot, z_d, params);
  const ElectronState ref = solve_electron(flat_potential(grid), z_d, params);
  const BandEdges edges = band_edges_at(stack, params, z_d);

  ZplEntry e;
  e.defect_index = defect_index;
  e.zpl_ev = params.e0 + edges.vbm - (state.energy - ref.energy);
  if (!(e.zpl_ev > 0.0)) {
    throw InvalidArgument("zpl_for_defect: non-positive transition energy " + std::to_string(e.zpl_ev) + " eV");
  }
  e.zpl_nm = units::kHcEvNm / e.zpl_ev;
  e.binding_ev = edges.cbm - state.energy;
  e.boundary_warning = state.boundary_contaminated || ref.boundary_contaminated;
  return e;
}

std::vector<HistogramBin> wavelength_histogram(const std::vector<double>& lambda_nm, double bin_nm) {
  if (!positive_finite(bin_nm)) throw InvalidArgument("wavelength_histogram: bin width must be positive");
  std::vector<HistogramBin> out;
  if (lambda_nm.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(lambda_nm.begin(), lambda_nm.end());
  const auto first = static_cast<long long>(std::floor(*lo_it / bin_nm));
  const auto last = static_cast<long long>(std::floor(*hi_it / bin_nm));
  out.resize(static_cast<std::size_t>(last - first + 1));
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].lambda_nm = (static_cast<double>(first + static_cast<long long>(k)) + 0.5) * bin_nm;
  }
  for (double l : lambda_nm) {
    ++out[static_cast<std::size_t>(static_cast<long long>(std::floor(l / bin_nm)) - first)].count;
  }
  return out;
}

ZplSpectrum zpl_distribution(const StackProfile& stack, const std::vector<int>& positions,
                             const ExcitonParams& params, const GridSpec& grid, unsigned threads, double bin_nm) {
  if (positions.empty()) throw InvalidArgument("zpl_distribution: no defect positions");
  ZplSpectrum spectrum;
  spectrum.bin_nm = bin_nm;
  spectrum.entries.resize(positions.size());

  const unsigned workers =
      std::max(1u, std::min<unsigned>(threads == 0 ? default_thread_count() : threads,
                                      static_cast<unsigned>(positions.size())));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](unsigned w) {
    try {
      const ChunkRange r = chunk(positions.size(), workers, w);
      for (std::size_t i = r.begin; i < r.end; ++i) {
        spectrum.entries[i] = zpl_for_defect(stack, positions[i], params, grid);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<double> lambdas;
  for (const auto& e : spectrum.entries) lambdas.push_back(e.zpl_nm);
  spectrum.histogram = wavelength_histogram(lambdas, bin_nm);
  return spectrum;
}

std::vector<WavelengthCluster> cluster_wavelengths(std::vector<double> lambda_nm, double max_gap_nm) {
  std::vector<WavelengthCluster> out;
  std::sort(lambda_nm.begin(), lambda_nm.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < lambda_nm.size(); ++i) {
    if (i == 0 || lambda_nm[i] - lambda_nm[i - 1] > max_gap_nm) {
      if (!out.empty()) out.back().mean_nm = sum / static_cast<double>(out.back().count);
      out.push_back({0.0, lambda_nm[i], lambda_nm[i], 0});
      sum = 0.0;
    }
    auto& c = out.back();
    c.max_nm = lambda_nm[i];
    ++c.count;
    sum += lambda_nm[i];
  }
  if (!out.empty()) out.back().mean_nm = sum / static_cast<double>(out.back().count);
  return out;
}

Calibration calibrate(const StackProfile& stack, const ExcitonParams& params, const CalibrationTargets& targets,
                      const GridSpec& grid) {
  params.validate();
  if (!(targets.short_nm > 0.0 && targets.long_nm > targets.short_nm)) {
    throw InvalidArgument("calibrate: targets must satisfy 0 < short < long");
  }
  if (!(targets.dE_cbm_upper > targets.dE_cbm_lower)) throw InvalidArgument("calibrate: empty dE_cbm interval");
  const std::vector<int> interface = stack.interface_bilayers();
  if (interface.size() < 2) throw InvalidArgument("calibrate: stack needs at least two interface bilayers");

  auto cluster_means = [&](const ExcitonParams& p, double& short_nm, double& long_nm) {
    std::vector<double> lambdas;
    for (int i : interface) lambdas.push_back(zpl_for_defect(stack, i, p, grid).zpl_nm);
    const auto clusters = cluster_wavelengths(lambdas);
    if (clusters.size() != 2) return false;
    short_nm = clusters.front().mean_nm;
    long_nm = clusters.back().mean_nm;
    return true;
  };

  const double span = targets.dE_cbm_upper - targets.dE_cbm_lower;
  const double dc0 = std::clamp(params.dE_cbm, targets.dE_cbm_lower + 1e-3 * span, targets.dE_cbm_upper - 1e-3 * span);
  const std::vector<fitlab::ParamSpec> specs = {
      {"dE_cbm", dc0, fitlab::Bound::kInterval, targets.dE_cbm_lower, targets.dE_cbm_upper},
      {"e0", params.e0, fitlab::Bound::kPositive}};
  const fitlab::ResidualFn residuals = [&](std::span<const double> q, std::span<double> r) {
    ExcitonParams p = params;
    p.dE_cbm = q[0];
    p.e0 = q[1];
    double s = 0.0, l = 0.0;
    bool ok = false;
    try {
      ok = cluster_means(p, s, l);
    } catch (const Error&) {
      ok = false;
    }
    r[0] = ok ? s - targets.short_nm : std::nan("");
    r[1] = ok ? l - targets.long_nm : std::nan("");
  };
  fitlab::MinimizeOptions opts;
  opts.max_iterations = 100;

  Calibration out;
  out.fit = fitlab::minimize(residuals, 2, specs, opts);
  out.params = params;
  out.params.dE_cbm = out.fit.params[0].value;
  out.params.e0 = out.fit.params[1].value;
  if (!cluster_means(out.params, out.short_nm, out.long_nm)) {
    out.short_nm = out.long_nm = std::nan("");
  }
  return out;
}

void write_spectrum_csv(std::ostream& out, const ZplSpectrum& spectrum) {
  out << "defect_index,zpl_nm,binding_ev\n";
  for (const auto& e : spectrum.entries) {
    out << e.defect_index << ',' << csv::format_number(e.zpl_nm) << ',' << csv::format_number(e.binding_ev) << '\n';
  }
}

void write_zpl_histogram_csv(std::ostream& out, const ZplSpectrum& spectrum) {
  out << "lambda_nm,count\n";
  for (const auto& b : spectrum.histogram) out << csv::format_number(b.lambda_nm) << ',' << b.count << '\n';
}

}  // namespace emitterlab::exciton
