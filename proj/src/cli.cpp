#include "emitterlab/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>

#include "emitterlab/correlator.hpp"
#include "emitterlab/csv.hpp"
#include "emitterlab/error.hpp"
#include "emitterlab/exciton.hpp"
#include "emitterlab/fits.hpp"
#include "emitterlab/json_util.hpp"
#include "emitterlab/kinetics.hpp"
#include "emitterlab/optics.hpp"
#include "emitterlab/photostream.hpp"
#include "emitterlab/pts_io.hpp"
#include "emitterlab/svg_plot.hpp"
#include "emitterlab/units.hpp"

namespace emitterlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Result of one subcommand. A fit that did not converge still writes its output.
struct Outcome {
  json result;
  bool converged = true;
};

struct Common {
  std::optional<std::string> config;
  std::string out = ".";
};

template <typename T>
void set_if(json& j, const json::json_pointer& ptr, const std::optional<T>& v) {
  if (v) j[ptr] = *v;
}

json merge_config(json defaults, const std::optional<std::string>& path) {
  if (!path) return defaults;
  const json user = jsonio::load_file(*path);
  if (!user.is_object()) throw FormatError("config " + *path + " must be a JSON object");
  defaults.merge_patch(user);
  return defaults;
}

/// Reads a required member; type mismatches surface as FormatError.
template <typename T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("config is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config field '") + key + "': " + e.what());
  }
}

json number(double v) { return jsonio::number_or_null(v); }

json value_sigma(double value, double sigma) { return {{"value", number(value)}, {"sigma", number(sigma)}}; }

json value_sigma(const fitlab::FitParameter& p) {
  return {{"value", number(p.value)}, {"sigma", p.sigma ? number(*p.sigma) : json(nullptr)}};
}

csv::Table read_table(const std::string& path) { return csv::read_file(path); }

std::vector<double> column_or_empty(const csv::Table& t, const char* name) {
  return t.has_column(name) ? t.values(name) : std::vector<double>{};
}

// ---- simulate ------------------------------------------------------------

json detector_json(const photostream::DetectorModel& d) {
  return {{"efficiency", d.efficiency},
          {"jitter_ps", d.jitter_sigma},
          {"dead_time_ps", d.dead_time},
          {"dark_rate", d.dark_rate}};
}

photostream::DetectorModel detector_from(const json& j) {
  photostream::DetectorModel d;
  d.efficiency = get<double>(j, "efficiency");
  d.jitter_sigma = get<double>(j, "jitter_ps");
  d.dead_time = get<double>(j, "dead_time_ps");
  d.dark_rate = get<double>(j, "dark_rate");
  d.validate();
  return d;
}

constexpr double kMaxSimulatedPhotons = 1e8;

json simulate_defaults() {
  return {{"mode", "cw"},
          {"seed", 1},
          {"duration_s", 0.01},
          {"rates", {{"k12", 0.5}, {"k21", 1.1}, {"k23", 0.1887}, {"k31", 0.5}}},
          {"background_rate", 0.0},
          {"pulse", {{"rep_rate_mhz", 80.0}, {"pulse_width_ps", 1.0}, {"excitation_prob", 1.0}}},
          {"splitter_ratio", 0.5},
          {"detector_a", detector_json({})},
          {"detector_b", detector_json({})}};
}

kinetics::RateSet rates_from(const json& j) {
  return {get<double>(j, "k12"), get<double>(j, "k21"), get<double>(j, "k23"), get<double>(j, "k31")};
}

Outcome run_simulate(const json& cfg, const fs::path& out_dir) {
  const std::string mode = get<std::string>(cfg, "mode");
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const double duration_s = get<double>(cfg, "duration_s");
  if (!(duration_s >= 0.0)) throw InvalidArgument("duration_s must be nonnegative");
  const auto duration = static_cast<std::int64_t>(std::llround(duration_s * units::kPsPerSecond));
  const kinetics::RateSet rates = rates_from(cfg.at("rates"));
  const photostream::BackgroundModel background{get<double>(cfg, "background_rate")};
  // Streams are held in memory; refuse runs that would need gigabytes.
  const double emitter_rate = mode == "pulsed" ? get<double>(cfg.at("pulse"), "rep_rate_mhz") * 1e6
                                               : kinetics::emission_rate(rates) * units::kNsPerSecond;
  const double expected = (emitter_rate + background.rate) * duration_s;
  if (expected > kMaxSimulatedPhotons) {
    throw InvalidArgument("simulate: about " + csv::format_number(expected) +
                          " photons expected, limit is 1e8; shorten duration_s");
  }

  photostream::PhotonStream photons;
  if (mode == "cw") {
    photons = photostream::simulate_cw(rates, duration, background, seed);
  } else if (mode == "pulsed") {
    const json& p = cfg.at("pulse");
    photostream::PulseTrain train{get<double>(p, "rep_rate_mhz"), get<double>(p, "pulse_width_ps"),
                                  get<double>(p, "excitation_prob")};
    photons = photostream::simulate_pulsed(rates, train, duration, background, seed);
  } else {
    throw InvalidArgument("mode must be 'cw' or 'pulsed', got '" + mode + "'");
  }
  auto [a, b] = photostream::detect_hbt(photons, get<double>(cfg, "splitter_ratio"), detector_from(cfg.at("detector_a")),
                                        detector_from(cfg.at("detector_b")), seed);
  pts::write_file(out_dir / "ch_a.pts", a);
  pts::write_file(out_dir / "ch_b.pts", b);

  Outcome o;
  o.result = {{"mode", mode},
              {"duration_ps", duration},
              {"emitted_photons", photons.emitter_photons},
              {"background_photons", photons.background_photons},
              {"counts_a", a.size()},
              {"counts_b", b.size()},
              {"rate_a", a.mean_rate()},
              {"rate_b", b.mean_rate()},
              {"files", {"ch_a.pts", "ch_b.pts"}}};
  return o;
}

// ---- correlate / pulsed / trace ------------------------------------------

svg::Plot g2_plot(const correlator::CorrelationHistogram& h) {
  svg::Plot plot{"g2(tau)", "tau (ns)", "g2", {}, false, 640, 420};
  svg::Series data{{}, {}, svg::Series::Style::kMarkers, "#1f77b4", "data"};
  for (std::size_t i = 0; i < h.size(); ++i) {
    data.x.push_back(h.tau(i) * 1e-3);
    data.y.push_back(h.g2[i]);
  }
  plot.series.push_back(std::move(data));
  return plot;
}

Outcome run_correlate(const json& cfg, const fs::path& out_dir) {
  const auto duration = get<std::int64_t>(cfg, "duration_ps");
  const auto a = pts::read_file(get<std::string>(cfg, "a"), duration);
  const auto b = pts::read_file(get<std::string>(cfg, "b"), duration);
  const auto bin = static_cast<std::int64_t>(std::llround(get<double>(cfg, "bin_ps")));
  const auto tau_max = static_cast<std::int64_t>(std::llround(get<double>(cfg, "window_ns") * units::kPsPerNs));
  const auto hist = correlator::correlate(a, b, bin, tau_max);

  std::ofstream csv_out(out_dir / "histogram.csv");
  if (!csv_out) throw IoError("cannot write histogram.csv");
  correlator::write_histogram_csv(csv_out, hist);
  svg::write(out_dir / "g2.svg", g2_plot(hist));

  std::int64_t total = 0;
  for (auto c : hist.counts) total += c;
  Outcome o;
  o.result = {{"bins", hist.size()},
              {"bin_width_ps", hist.bin_width},
              {"tau_max_ps", tau_max},
              {"counts_a", a.size()},
              {"counts_b", b.size()},
              {"overlap_ps", hist.overlap},
              {"normalization", hist.normalization},
              {"coincidences", total},
              {"g2_zero_bin", hist.g2[hist.zero_index()]},
              {"files", {"histogram.csv", "g2.svg"}}};
  return o;
}

Outcome run_pulsed(const json& cfg, const fs::path& out_dir) {
  const auto duration = get<std::int64_t>(cfg, "duration_ps");
  const auto a = pts::read_file(get<std::string>(cfg, "a"), duration);
  const auto b = pts::read_file(get<std::string>(cfg, "b"), duration);
  const auto r = correlator::pulsed_g2(a, b, get<double>(cfg, "rep_mhz"), get<int>(cfg, "peaks"));
  json areas = json::array();
  for (int n = -r.n_peaks; n <= r.n_peaks; ++n) areas.push_back({{"n", n}, {"area", r.area(n)}});
  Outcome o;
  o.result = {{"period_ps", r.period},
              {"g2_zero", value_sigma(r.g2_zero, r.g2_zero_sigma)},
              {"mean_side_area", r.mean_side_area()},
              {"uncorrelated_area", r.uncorrelated_area},
              {"peaks", areas}};
  jsonio::save_file(out_dir / "pulsed.json", o.result);
  return o;
}

Outcome run_trace(const json& cfg, const fs::path& out_dir) {
  const auto a = pts::read_file(get<std::string>(cfg, "a"), get<std::int64_t>(cfg, "duration_ps"));
  const auto t = correlator::intensity_trace(a, get<double>(cfg, "bin_ms"), get<double>(cfg, "blink_sigma"));
  std::ofstream out(out_dir / "trace.csv");
  if (!out) throw IoError("cannot write trace.csv");
  out << "t_s,counts\n";
  for (std::size_t i = 0; i < t.counts.size(); ++i) {
    out << csv::format_number(static_cast<double>(i) * t.bin_ms * 1e-3) << ',' << t.counts[i] << '\n';
  }
  Outcome o;
  o.result = {{"bins", t.counts.size()},
              {"bin_ms", t.bin_ms},
              {"mean", t.mean},
              {"stddev", t.stddev},
              {"min", t.min},
              {"max", t.max},
              {"max_min_ratio", number(t.max_min_ratio)},
              {"max_deviation_sigma", t.max_deviation_sigma},
              {"blinking_suspected", t.blinking_suspected},
              {"files", {"trace.csv"}}};
  return o;
}

// ---- fits ----------------------------------------------------------------

Outcome run_fit_g2(const json& cfg, const fs::path& out_dir) {
  std::ifstream in(get<std::string>(cfg, "hist"));
  if (!in) throw IoError("cannot read " + get<std::string>(cfg, "hist"));
  const auto hist = correlator::read_histogram_csv(in);
  const std::string mode = get<std::string>(cfg, "mode");
  if (mode != "constrained" && mode != "free") throw InvalidArgument("mode must be 'constrained' or 'free'");
  const auto fit = fitlab::fit_g2_cw(hist, mode == "free" ? fitlab::G2Mode::kFree : fitlab::G2Mode::kConstrained);

  Outcome o;
  o.converged = fit.fit.converged;
  o.result = fitlab::to_json(fit.fit);
  o.result["mode"] = mode;
  o.result["g2_zero"] = value_sigma(fit.g2_zero, fit.g2_zero_sigma);
  jsonio::save_file(out_dir / "fit.json", o.result);

  svg::Plot plot = g2_plot(hist);
  svg::Series model{{}, {}, svg::Series::Style::kLine, "#d62728", "fit"};
  const double w = static_cast<double>(hist.bin_width) * 1e-3;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    const double x = hist.tau(i) * 1e-3;
    model.x.push_back(x);
    model.y.push_back(kinetics::g2_bin_average(fit.params, x - 0.5 * w, x + 0.5 * w));
  }
  plot.series.push_back(std::move(model));
  svg::write(out_dir / "g2_fit.svg", plot);
  return o;
}

Outcome run_fit_saturation(const json& cfg, const fs::path& out_dir) {
  const auto t = read_table(get<std::string>(cfg, "data"));
  fitlab::CurveData data{t.values("power_mw"), t.values("counts_per_s"), column_or_empty(t, "sigma")};
  const auto fit = fitlab::fit_saturation(data);
  Outcome o;
  o.converged = fit.fit.converged;
  o.result = fitlab::to_json(fit.fit);
  jsonio::save_file(out_dir / "fit.json", o.result);

  svg::Plot plot{"saturation", "P (mW)", "counts/s", {}, false, 640, 420};
  plot.series.push_back({data.x, data.y, svg::Series::Style::kMarkers, "#1f77b4", "data"});
  svg::Series curve{{}, {}, svg::Series::Style::kLine, "#d62728", "fit"};
  const double p_max = *std::max_element(data.x.begin(), data.x.end());
  for (int k = 0; k <= 200; ++k) {
    const double p = p_max * k / 200.0;
    curve.x.push_back(p);
    curve.y.push_back(kinetics::saturation_count_rate(fit.params, p));
  }
  plot.series.push_back(std::move(curve));
  svg::write(out_dir / "saturation.svg", plot);
  return o;
}

Outcome run_fit_lifetime(const json& cfg, const fs::path& out_dir) {
  const auto t = read_table(get<std::string>(cfg, "data"));
  fitlab::DecayHistogram decay{t.values("t_ps"), t.values("counts")};
  const std::string irf_kind = get<std::string>(cfg, "irf");
  fitlab::IRFModel irf;
  if (irf_kind == "gaussian") {
    irf = fitlab::IRFModel::gaussian(get<double>(cfg, "irf_sigma_ps"));
  } else if (irf_kind == "delta") {
    irf = fitlab::IRFModel::delta();
  } else {
    const auto table = read_table(irf_kind);
    irf = fitlab::IRFModel::tabulated(table.values("t_ps"), table.values("weight"));
  }
  const auto fit = fitlab::fit_lifetime(decay, irf);
  Outcome o;
  o.converged = fit.converged;
  o.result = fitlab::to_json(fit);
  o.result["lifetime_ps"] = value_sigma(fit.params[0]);
  jsonio::save_file(out_dir / "fit.json", o.result);
  return o;
}

Outcome run_fit_polarization(const json& cfg, const fs::path& out_dir) {
  const auto t = read_table(get<std::string>(cfg, "data"));
  fitlab::CurveData data{t.values("angle_deg"), t.values("counts"), column_or_empty(t, "sigma")};
  const auto fit = fitlab::fit_polarization(data);
  Outcome o;
  o.converged = fit.fit.converged;
  o.result = fitlab::to_json(fit.fit);
  o.result["visibility"] = value_sigma(fit.visibility, fit.visibility_sigma);
  jsonio::save_file(out_dir / "fit.json", o.result);
  return o;
}

Outcome run_rates(const json& cfg, const fs::path& out_dir) {
  const auto t = read_table(get<std::string>(cfg, "series"));
  const auto power = t.values("power_mw");
  const auto tau1 = t.values("tau1_ns");
  const auto tau2 = t.values("tau2_ns");
  const auto beta = t.values("beta");
  const auto s1 = column_or_empty(t, "tau1_sigma_ns");
  const auto s2 = column_or_empty(t, "tau2_sigma_ns");
  const auto sb = column_or_empty(t, "beta_sigma");
  std::vector<fitlab::PowerSeriesPoint> series;
  for (std::size_t i = 0; i < power.size(); ++i) {
    series.push_back({power[i], tau1[i], tau2[i], beta[i], s1.empty() ? 0.0 : s1[i], s2.empty() ? 0.0 : s2[i],
                      sb.empty() ? 0.0 : sb[i]});
  }
  const auto r = fitlab::extract_rates(series);

  Outcome o;
  o.converged = r.fit.converged;
  json k31 = json::array();
  for (std::size_t i = 0; i < series.size(); ++i) {
    k31.push_back({{"power_mw", series[i].power}, {"value", number(r.k31[i])}, {"sigma", number(r.k31_sigma[i])}});
  }
  const double lifetime_ps = r.lifetime_ns * units::kPsPerNs;
  const double lifetime_sigma_ps = r.lifetime_sigma_ns * units::kPsPerNs;
  const double measured = get<double>(cfg, "measured_lifetime_ps");
  const double measured_sigma = get<double>(cfg, "measured_lifetime_sigma_ps");
  const auto check = fitlab::lifetime_consistency(lifetime_ps, lifetime_sigma_ps, measured, measured_sigma);
  o.result = {{"k21", value_sigma(r.fit.params[0])},
              {"k23", value_sigma(r.fit.params[1])},
              {"eta", value_sigma(r.fit.params[2])},
              {"k31", k31},
              {"k31_identifiable", r.k31_identifiable},
              {"lifetime_ps", value_sigma(lifetime_ps, lifetime_sigma_ps)},
              {"lifetime_check",
               {{"measured_ps", measured},
                {"measured_sigma_ps", measured_sigma},
                {"difference_ps", check.difference},
                {"z", number(check.z)},
                {"consistent", check.consistent}}},
              {"chi2_red", r.fit.chi2_red},
              {"converged", r.fit.converged},
              {"iters", r.fit.iterations}};

  if (get<bool>(cfg, "fit_k31") && series.size() >= 5) {
    fitlab::CurveData pts{power, r.k31, {}};
    bool have_sigma = true;
    for (double s : r.k31_sigma) have_sigma = have_sigma && s > 0.0 && std::isfinite(s);
    if (have_sigma) pts.sigma = r.k31_sigma;
    const auto k31_fit = fitlab::fit_k31_power(pts);
    o.result["k31_power_fit"] = fitlab::to_json(k31_fit);
    o.converged = o.converged && k31_fit.converged;
  }
  jsonio::save_file(out_dir / "rates.json", o.result);
  return o;
}

// ---- zpl -----------------------------------------------------------------

json zpl_defaults() {
  const exciton::ExcitonParams p;
  const exciton::GridSpec g;
  return {{"stack", "ccc"},
          {"first_index", -1},
          {"bilayer_thickness", 0.259},
          {"params",
           {{"m_eff", p.m_eff},
            {"eps_r", p.eps_r},
            {"softening", p.softening},
            {"e0", p.e0},
            {"dE_cbm", p.dE_cbm},
            {"dE_vbm", p.dE_vbm},
            {"interface_field", p.interface_field},
            {"polarity", p.polarity}}},
          {"grid", {{"half_width", g.half_width}, {"step", g.step}, {"center", g.center}}},
          {"positions", {{"from", -8}, {"to", 8}}},
          {"interface_only", false},
          {"calibrate", false},
          {"targets", {{"short_nm", 1100.0}, {"long_nm", 1350.0}, {"dE_cbm_lower", -1.0}, {"dE_cbm_upper", 0.0}}},
          {"bin_nm", 10.0},
          {"cluster_gap_nm", 10.0}};
}

Outcome run_zpl(const json& cfg, const fs::path& out_dir) {
  const auto stack = exciton::StackProfile::parse(get<std::string>(cfg, "stack"), get<int>(cfg, "first_index"),
                                                  get<double>(cfg, "bilayer_thickness"));
  const json& pj = cfg.at("params");
  exciton::ExcitonParams params{get<double>(pj, "m_eff"),  get<double>(pj, "eps_r"),
                                get<double>(pj, "softening"), get<double>(pj, "e0"),
                                get<double>(pj, "dE_cbm"), get<double>(pj, "dE_vbm"),
                                get<double>(pj, "interface_field"), get<int>(pj, "polarity")};
  params.validate();
  const json& gj = cfg.at("grid");
  const exciton::GridSpec grid{get<double>(gj, "half_width"), get<double>(gj, "step"), get<double>(gj, "center")};

  Outcome o;
  if (get<bool>(cfg, "calibrate")) {
    const json& tj = cfg.at("targets");
    const exciton::CalibrationTargets targets{get<double>(tj, "short_nm"), get<double>(tj, "long_nm"),
                                              get<double>(tj, "dE_cbm_lower"), get<double>(tj, "dE_cbm_upper")};
    const auto cal = exciton::calibrate(stack, params, targets, grid);
    o.converged = cal.fit.converged;
    params = cal.params;
    o.result["calibration"] = {{"dE_cbm", value_sigma(cal.fit.params[0])},
                               {"e0", value_sigma(cal.fit.params[1])},
                               {"short_nm", number(cal.short_nm)},
                               {"long_nm", number(cal.long_nm)},
                               {"converged", cal.fit.converged},
                               {"iters", cal.fit.iterations}};
  }

  std::vector<int> positions;
  if (get<bool>(cfg, "interface_only")) {
    positions = stack.interface_bilayers();
  } else if (cfg.at("positions").is_array()) {
    positions = cfg.at("positions").get<std::vector<int>>();
  } else {
    const int from = get<int>(cfg.at("positions"), "from");
    const int to = get<int>(cfg.at("positions"), "to");
    for (int i = from; i <= to; ++i) positions.push_back(i);
  }
  const auto spectrum = exciton::zpl_distribution(stack, positions, params, grid, 0, get<double>(cfg, "bin_nm"));
  {
    std::ofstream out(out_dir / "spectrum.csv");
    if (!out) throw IoError("cannot write spectrum.csv");
    exciton::write_spectrum_csv(out, spectrum);
    std::ofstream hist(out_dir / "zpl_histogram.csv");
    if (!hist) throw IoError("cannot write zpl_histogram.csv");
    exciton::write_zpl_histogram_csv(hist, spectrum);
  }

  json entries = json::array();
  std::vector<double> lambdas;
  bool warning = false;
  for (const auto& e : spectrum.entries) {
    entries.push_back({{"defect_index", e.defect_index}, {"zpl_nm", e.zpl_nm}, {"binding_ev", e.binding_ev}});
    lambdas.push_back(e.zpl_nm);
    warning = warning || e.boundary_warning;
  }
  json clusters = json::array();
  for (const auto& c : exciton::cluster_wavelengths(lambdas, get<double>(cfg, "cluster_gap_nm"))) {
    clusters.push_back({{"mean_nm", c.mean_nm}, {"min_nm", c.min_nm}, {"max_nm", c.max_nm}, {"count", c.count}});
  }
  o.result["e0_nm"] = units::kHcEvNm / params.e0;
  o.result["entries"] = entries;
  o.result["clusters"] = clusters;
  o.result["boundary_warning"] = warning;
  o.result["files"] = {"spectrum.csv", "zpl_histogram.csv", "zpl_histogram.svg"};

  svg::Plot plot{"ZPL distribution", "wavelength (nm)", "count", {}, false, 640, 420};
  svg::Series bars{{}, {}, svg::Series::Style::kBars, "#2ca02c", ""};
  for (const auto& b : spectrum.histogram) {
    bars.x.push_back(b.lambda_nm);
    bars.y.push_back(static_cast<double>(b.count));
  }
  plot.series.push_back(std::move(bars));
  svg::write(out_dir / "zpl_histogram.svg", plot);
  return o;
}

// ---- budget --------------------------------------------------------------

json budget_defaults() {
  return {{"budget", {{"eta_c", 0.13}, {"eta_f", 0.4}, {"eta_o", 0.3}, {"eta_d", 0.3}}},
          {"i_inf", 0.69e6},
          {"i_total", nullptr},
          {"lifetime_ps", 736.0},
          {"na", 1.35},
          {"n_medium", 1.52},
          {"enhancement", nullptr}};
}

Outcome run_budget(const json& cfg, const fs::path&) {
  const json& bj = cfg.at("budget");
  const optics::EfficiencyBudget budget{get<double>(bj, "eta_c"), get<double>(bj, "eta_f"), get<double>(bj, "eta_o"),
                                        get<double>(bj, "eta_d")};
  double i_total = 0.0;
  std::string convention;
  if (cfg.contains("i_total") && !cfg.at("i_total").is_null()) {
    i_total = get<double>(cfg, "i_total");
    convention = "explicit";
  } else {
    i_total = optics::total_rate_from_lifetime(get<double>(cfg, "lifetime_ps"));
    convention = "1/lifetime";
  }
  const auto q = optics::quantum_efficiency(get<double>(cfg, "i_inf"), i_total, budget);
  Outcome o;
  o.result = {{"detection_probability", q.detection_probability},
              {"i_total", i_total},
              {"i_total_convention", convention},
              {"quantum_efficiency", q.eta_q},
              {"exceeds_unity", q.exceeds_unity},
              {"half_angle_deg", optics::collection_half_angle_deg(get<double>(cfg, "na"), get<double>(cfg, "n_medium"))}};
  if (cfg.contains("enhancement") && cfg.at("enhancement").is_object()) {
    const json& e = cfg.at("enhancement");
    kinetics::SaturationParams a, b;
    a.i_inf = get<double>(e, "i_inf_a");
    b.i_inf = get<double>(e, "i_inf_b");
    a.i_inf_sigma = e.value("i_inf_a_sigma", 0.0);
    b.i_inf_sigma = e.value("i_inf_b_sigma", 0.0);
    const auto r = optics::enhancement_ratio(a, b);
    o.result["enhancement_ratio"] = value_sigma(r.value, r.sigma);
    if (e.contains("samples_a") && e.contains("samples_b")) {
      const auto m = optics::mean_ratio(e.at("samples_a").get<std::vector<double>>(),
                                        e.at("samples_b").get<std::vector<double>>());
      o.result["mean_ratio"] = value_sigma(m.value, m.sigma);
    }
  }
  if (q.exceeds_unity) o.result["warning"] = "quantum efficiency exceeds 1; inputs are inconsistent";
  return o;
}

// ---- plumbing ------------------------------------------------------------

void finish(const std::string& name, const json& resolved, const Outcome& outcome, const fs::path& out_dir,
            std::ostream& out) {
  const json manifest = {{"tool", "emitterlab"}, {"version", kVersion}, {"subcommand", name}, {"config", resolved}};
  jsonio::save_file(out_dir / "manifest.json", manifest);
  out << jsonio::rounded(outcome.result).dump(2) << '\n';
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"emitterlab: three-level emitter simulation and analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // Each subcommand fills `resolved` from its defaults, the config file and flags.
  std::string chosen;
  Common common;
  json resolved;
  std::function<json()> resolve;
  std::function<Outcome(const json&, const fs::path&)> runner;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "output directory")->capture_default_str();
  };

  // simulate
  std::optional<std::uint64_t> sim_seed;
  std::optional<double> sim_duration;
  std::optional<std::string> sim_mode;
  auto* sim = app.add_subcommand("simulate", "synthesize HBT timestamp channels");
  add_common(sim);
  sim->add_option("--seed", sim_seed, "random seed");
  sim->add_option("--duration-s", sim_duration, "stream length, s");
  sim->add_option("--mode", sim_mode, "cw or pulsed");
  sim->callback([&] {
    chosen = "simulate";
    resolve = [&] {
      json j = merge_config(simulate_defaults(), common.config);
      set_if(j, "/seed"_json_pointer, sim_seed);
      set_if(j, "/duration_s"_json_pointer, sim_duration);
      set_if(j, "/mode"_json_pointer, sim_mode);
      return j;
    };
    runner = run_simulate;
  });

  // correlate
  std::optional<std::string> cor_a, cor_b;
  std::optional<double> cor_bin, cor_window;
  std::optional<std::int64_t> cor_duration;
  auto* cor = app.add_subcommand("correlate", "g2 histogram of two channels");
  add_common(cor);
  cor->add_option("--a", cor_a, "channel A (.pts)");
  cor->add_option("--b", cor_b, "channel B (.pts)");
  cor->add_option("--bin-ps", cor_bin, "bin width, ps");
  cor->add_option("--window-ns", cor_window, "half window tau_max, ns");
  cor->add_option("--duration-ps", cor_duration, "acquisition length (default: last timestamp)");
  cor->callback([&] {
    chosen = "correlate";
    resolve = [&] {
      json j = merge_config({{"a", "ch_a.pts"}, {"b", "ch_b.pts"}, {"bin_ps", 100.0}, {"window_ns", 50.0}, {"duration_ps", 0}},
                            common.config);
      set_if(j, "/a"_json_pointer, cor_a);
      set_if(j, "/b"_json_pointer, cor_b);
      set_if(j, "/bin_ps"_json_pointer, cor_bin);
      set_if(j, "/window_ns"_json_pointer, cor_window);
      set_if(j, "/duration_ps"_json_pointer, cor_duration);
      return j;
    };
    runner = run_correlate;
  });

  // pulsed-g2
  std::optional<std::string> pul_a, pul_b;
  std::optional<double> pul_rep;
  std::optional<int> pul_peaks;
  std::optional<std::int64_t> pul_duration;
  auto* pul = app.add_subcommand("pulsed-g2", "coincidence peak areas under pulsed excitation");
  add_common(pul);
  pul->add_option("--a", pul_a, "channel A (.pts)");
  pul->add_option("--b", pul_b, "channel B (.pts)");
  pul->add_option("--rep-mhz", pul_rep, "repetition rate, MHz");
  pul->add_option("--peaks", pul_peaks, "side peaks on each side");
  pul->add_option("--duration-ps", pul_duration, "acquisition length (default: last timestamp)");
  pul->callback([&] {
    chosen = "pulsed-g2";
    resolve = [&] {
      json j = merge_config({{"a", "ch_a.pts"}, {"b", "ch_b.pts"}, {"rep_mhz", 80.0}, {"peaks", 5}, {"duration_ps", 0}},
                            common.config);
      set_if(j, "/a"_json_pointer, pul_a);
      set_if(j, "/b"_json_pointer, pul_b);
      set_if(j, "/rep_mhz"_json_pointer, pul_rep);
      set_if(j, "/peaks"_json_pointer, pul_peaks);
      set_if(j, "/duration_ps"_json_pointer, pul_duration);
      return j;
    };
    runner = run_pulsed;
  });

  // trace
  std::optional<std::string> tr_a;
  std::optional<double> tr_bin;
  std::optional<std::int64_t> tr_duration;
  auto* tr = app.add_subcommand("trace", "intensity time trace and blinking screen");
  add_common(tr);
  tr->add_option("--a", tr_a, "channel (.pts)");
  tr->add_option("--bin-ms", tr_bin, "bin width, ms");
  tr->add_option("--duration-ps", tr_duration, "acquisition length (default: last timestamp)");
  tr->callback([&] {
    chosen = "trace";
    resolve = [&] {
      json j = merge_config({{"a", "ch_a.pts"}, {"bin_ms", 100.0}, {"blink_sigma", 5.0}, {"duration_ps", 0}},
                            common.config);
      set_if(j, "/a"_json_pointer, tr_a);
      set_if(j, "/bin_ms"_json_pointer, tr_bin);
      set_if(j, "/duration_ps"_json_pointer, tr_duration);
      return j;
    };
    runner = run_trace;
  });

  // fit-g2
  std::optional<std::string> g2_hist, g2_mode;
  auto* fg2 = app.add_subcommand("fit-g2", "fit the three-level g2 model to a histogram CSV");
  add_common(fg2);
  fg2->add_option("--hist", g2_hist, "histogram CSV from correlate");
  fg2->add_option("--mode", g2_mode, "constrained (alpha = 1 + beta) or free");
  fg2->callback([&] {
    chosen = "fit-g2";
    resolve = [&] {
      json j = merge_config({{"hist", "histogram.csv"}, {"mode", "free"}}, common.config);
      set_if(j, "/hist"_json_pointer, g2_hist);
      set_if(j, "/mode"_json_pointer, g2_mode);
      return j;
    };
    runner = run_fit_g2;
  });

  // fit-saturation / fit-polarization share a data flag
  std::optional<std::string> sat_data;
  auto* fsat = app.add_subcommand("fit-saturation", "fit I(P) = I_inf P / (P + P_sat)");
  add_common(fsat);
  fsat->add_option("--data", sat_data, "CSV power_mw,counts_per_s[,sigma]");
  fsat->callback([&] {
    chosen = "fit-saturation";
    resolve = [&] {
      json j = merge_config({{"data", "saturation.csv"}}, common.config);
      set_if(j, "/data"_json_pointer, sat_data);
      return j;
    };
    runner = run_fit_saturation;
  });

  std::optional<std::string> pol_data;
  auto* fpol = app.add_subcommand("fit-polarization", "fit y0 + A cos^2(a x + phi)");
  add_common(fpol);
  fpol->add_option("--data", pol_data, "CSV angle_deg,counts[,sigma]");
  fpol->callback([&] {
    chosen = "fit-polarization";
    resolve = [&] {
      json j = merge_config({{"data", "polarization.csv"}}, common.config);
      set_if(j, "/data"_json_pointer, pol_data);
      return j;
    };
    runner = run_fit_polarization;
  });

  std::optional<std::string> lt_data, lt_irf;
  std::optional<double> lt_sigma;
  auto* flt = app.add_subcommand("fit-lifetime", "IRF-convolved single-exponential decay fit");
  add_common(flt);
  flt->add_option("--data", lt_data, "CSV t_ps,counts");
  flt->add_option("--irf", lt_irf, "gaussian, delta, or a CSV t_ps,weight");
  flt->add_option("--irf-sigma-ps", lt_sigma, "Gaussian IRF sigma, ps");
  flt->callback([&] {
    chosen = "fit-lifetime";
    resolve = [&] {
      json j = merge_config({{"data", "decay.csv"}, {"irf", "gaussian"}, {"irf_sigma_ps", 30.0}}, common.config);
      set_if(j, "/data"_json_pointer, lt_data);
      set_if(j, "/irf"_json_pointer, lt_irf);
      set_if(j, "/irf_sigma_ps"_json_pointer, lt_sigma);
      return j;
    };
    runner = run_fit_lifetime;
  });

  // rates
  std::optional<std::string> rates_series;
  std::optional<double> rates_measured, rates_measured_sigma;
  bool rates_fit_k31 = false;
  auto* rates = app.add_subcommand("rates", "extract k21, k23, eta and k31 from a power series");
  add_common(rates);
  rates->add_option("--series", rates_series, "CSV power_mw,tau1_ns,tau2_ns,beta[,*_sigma]");
  rates->add_option("--measured-lifetime-ps", rates_measured, "independently measured lifetime, ps");
  rates->add_option("--measured-lifetime-sigma-ps", rates_measured_sigma, "its uncertainty, ps");
  rates->add_flag("--fit-k31", rates_fit_k31, "also fit k31(P) = a exp(-bP) + dP/(P+c)");
  rates->callback([&] {
    chosen = "rates";
    resolve = [&] {
      json j = merge_config({{"series", "powers.csv"},
                             {"measured_lifetime_ps", 736.0},
                             {"measured_lifetime_sigma_ps", 4.0},
                             {"fit_k31", false}},
                            common.config);
      set_if(j, "/series"_json_pointer, rates_series);
      set_if(j, "/measured_lifetime_ps"_json_pointer, rates_measured);
      set_if(j, "/measured_lifetime_sigma_ps"_json_pointer, rates_measured_sigma);
      if (rates_fit_k31) j["fit_k31"] = true;
      return j;
    };
    runner = run_rates;
  });

  // zpl
  bool zpl_calibrate = false;
  bool zpl_interface = false;
  std::optional<std::string> zpl_stack;
  auto* zpl = app.add_subcommand("zpl", "ZPL distribution from the cubic-inclusion exciton model");
  add_common(zpl);
  zpl->add_option("--stack", zpl_stack, "bilayer sequence, e.g. ccc or cchc");
  zpl->add_flag("--calibrate", zpl_calibrate, "tune dE_cbm and E0 to the interface targets first");
  zpl->add_flag("--interface-only", zpl_interface, "place defects only in interface bilayers");
  zpl->callback([&] {
    chosen = "zpl";
    resolve = [&] {
      json j = merge_config(zpl_defaults(), common.config);
      set_if(j, "/stack"_json_pointer, zpl_stack);
      if (zpl_calibrate) j["calibrate"] = true;
      if (zpl_interface) j["interface_only"] = true;
      return j;
    };
    runner = run_zpl;
  });

  // budget
  std::optional<double> b_c, b_f, b_o, b_d, b_iinf, b_itotal, b_lifetime, b_na, b_n;
  auto* bud = app.add_subcommand("budget", "efficiency chain, quantum efficiency and collection angle");
  add_common(bud);
  bud->add_option("--eta-c", b_c);
  bud->add_option("--eta-f", b_f);
  bud->add_option("--eta-o", b_o);
  bud->add_option("--eta-d", b_d);
  bud->add_option("--i-inf", b_iinf, "saturated count rate, counts/s");
  bud->add_option("--i-total", b_itotal, "total emission rate, 1/s");
  bud->add_option("--lifetime-ps", b_lifetime, "used for i_total = 1/lifetime when --i-total is absent");
  bud->add_option("--na", b_na);
  bud->add_option("--n-medium", b_n);
  bud->callback([&] {
    chosen = "budget";
    resolve = [&] {
      json j = merge_config(budget_defaults(), common.config);
      set_if(j, "/budget/eta_c"_json_pointer, b_c);
      set_if(j, "/budget/eta_f"_json_pointer, b_f);
      set_if(j, "/budget/eta_o"_json_pointer, b_o);
      set_if(j, "/budget/eta_d"_json_pointer, b_d);
      set_if(j, "/i_inf"_json_pointer, b_iinf);
      set_if(j, "/i_total"_json_pointer, b_itotal);
      set_if(j, "/lifetime_ps"_json_pointer, b_lifetime);
      set_if(j, "/na"_json_pointer, b_na);
      set_if(j, "/n_medium"_json_pointer, b_n);
      return j;
    };
    runner = run_budget;
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kInputError;
  }

  try {
    resolved = resolve();
    const fs::path out_dir = common.out;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    const Outcome outcome = runner(resolved, out_dir);
    finish(chosen, resolved, outcome, out_dir, out);
    if (!outcome.converged) {
      err << "emitterlab " << chosen << ": fit did not converge\n";
      return kNotConverged;
    }
    return kSuccess;
  } catch (const FormatError& e) {
    err << "emitterlab " << chosen << ": malformed input: " << e.what() << '\n';
  } catch (const IoError& e) {
    err << "emitterlab " << chosen << ": unreadable input: " << e.what() << '\n';
  } catch (const Error& e) {
    err << "emitterlab " << chosen << ": invalid input: " << e.what() << '\n';
  } catch (const json::exception& e) {
    err << "emitterlab " << chosen << ": malformed config: " << e.what() << '\n';
  }
  return kInputError;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace emitterlab::cli
