#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "emitterlab/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emitterlab;

namespace {

const fs::path kGolden = EMITTERLAB_GOLDEN_DIR;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
  json result() const { return json::parse(out); }
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("emitterlab_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  static std::string golden(const std::string& name) { return (kGolden / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, VersionFlag) {
  const auto r = run({"--version"});
  EXPECT_EQ(r.code, cli::kSuccess);
  EXPECT_NE(r.out.find(cli::kVersion), std::string::npos);
}

TEST_F(CliTest, UnknownSubcommandIsInputError) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, cli::kInputError);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({}).code, cli::kInputError);
}

TEST_F(CliTest, DistinctMessagesForInputErrors) {
  const auto missing = run({"fit-saturation", "--data", path("nope.csv"), "--out", path("o")});
  EXPECT_EQ(missing.code, cli::kInputError);
  EXPECT_NE(missing.err.find("unreadable input"), std::string::npos) << missing.err;

  std::ofstream(path("bad.json")) << "{ not json";
  const auto malformed = run({"budget", "--config", path("bad.json"), "--out", path("o")});
  EXPECT_EQ(malformed.code, cli::kInputError);
  EXPECT_NE(malformed.err.find("malformed input"), std::string::npos) << malformed.err;

  std::ofstream(path("wrongtype.json")) << R"({"i_inf": "lots"})";
  const auto wrong = run({"budget", "--config", path("wrongtype.json"), "--out", path("o")});
  EXPECT_EQ(wrong.code, cli::kInputError);
  EXPECT_NE(wrong.err.find("i_inf"), std::string::npos) << wrong.err;

  std::ofstream(path("nocol.csv")) << "power,counts\n1,2\n";
  const auto nocol = run({"fit-saturation", "--data", path("nocol.csv"), "--out", path("o")});
  EXPECT_EQ(nocol.code, cli::kInputError);
  EXPECT_NE(nocol.err.find("malformed input"), std::string::npos) << nocol.err;

  const auto bad_value = run({"budget", "--na", "2.0", "--out", path("o")});
  EXPECT_EQ(bad_value.code, cli::kInputError);
  EXPECT_NE(bad_value.err.find("invalid input"), std::string::npos) << bad_value.err;

  const auto no_config = run({"budget", "--config", path("absent.json")});
  EXPECT_EQ(no_config.code, cli::kInputError);
}

TEST_F(CliTest, SimulateCorrelateFitPipeline) {
  const auto sim = run({"simulate", "--config", golden("cw.json"), "--seed", "7", "--out", path("run")});
  ASSERT_EQ(sim.code, cli::kSuccess) << sim.err;
  EXPECT_TRUE(fs::exists(path("run/ch_a.pts")));
  EXPECT_TRUE(fs::exists(path("run/ch_b.pts")));
  const auto manifest = json::parse(slurp(path("run/manifest.json")));
  EXPECT_EQ(manifest["subcommand"], "simulate");
  EXPECT_EQ(manifest["version"], cli::kVersion);
  EXPECT_EQ(manifest["config"]["seed"], 7);
  EXPECT_EQ(manifest["config"]["background_rate"], 1e6);
  EXPECT_GT(sim.result()["counts_a"].get<int>(), 10000);

  const auto cor = run({"correlate", "--a", path("run/ch_a.pts"), "--b", path("run/ch_b.pts"), "--bin-ps", "100",
                        "--window-ns", "40", "--out", path("run")});
  ASSERT_EQ(cor.code, cli::kSuccess) << cor.err;
  EXPECT_TRUE(fs::exists(path("run/histogram.csv")));
  EXPECT_TRUE(fs::exists(path("run/g2.svg")));
  EXPECT_EQ(slurp(path("run/histogram.csv")).rfind("tau_ps,counts,g2,g2_err\n", 0), 0u);

  const auto fit = run({"fit-g2", "--hist", path("run/histogram.csv"), "--out", path("run")});
  ASSERT_EQ(fit.code, cli::kSuccess) << fit.err;
  const auto j = fit.result();
  EXPECT_TRUE(j["converged"].get<bool>());
  EXPECT_LT(j["g2_zero"]["value"].get<double>(), 0.5);
  EXPECT_TRUE(fs::exists(path("run/g2_fit.svg")));

  const auto constrained = run({"fit-g2", "--hist", path("run/histogram.csv"), "--mode", "constrained",
                                "--out", path("run")});
  EXPECT_EQ(constrained.code, cli::kSuccess) << constrained.err;
  EXPECT_EQ(run({"fit-g2", "--hist", path("run/histogram.csv"), "--mode", "loose", "--out", path("run")}).code,
            cli::kInputError);

  const auto trace = run({"trace", "--a", path("run/ch_a.pts"), "--bin-ms", "0.1", "--out", path("run")});
  ASSERT_EQ(trace.code, cli::kSuccess) << trace.err;
  EXPECT_TRUE(fs::exists(path("run/trace.csv")));
  EXPECT_GT(trace.result()["mean"].get<double>(), 0.0);
}

TEST_F(CliTest, SimulateIsByteDeterministic) {
  for (const char* d : {"r1", "r2"}) {
    ASSERT_EQ(run({"simulate", "--config", golden("cw.json"), "--out", path(d)}).code, cli::kSuccess);
  }
  EXPECT_EQ(slurp(path("r1/ch_a.pts")), slurp(path("r2/ch_a.pts")));
  EXPECT_EQ(slurp(path("r1/ch_b.pts")), slurp(path("r2/ch_b.pts")));
  EXPECT_EQ(slurp(path("r1/manifest.json")), slurp(path("r2/manifest.json")));
  ASSERT_EQ(run({"simulate", "--config", golden("cw.json"), "--seed", "99", "--out", path("r3")}).code,
            cli::kSuccess);
  EXPECT_NE(slurp(path("r1/ch_a.pts")), slurp(path("r3/ch_a.pts")));
}

TEST_F(CliTest, SimulateRefusesHugeStreams) {
  const auto r = run({"simulate", "--duration-s", "100", "--out", path("big")});
  EXPECT_EQ(r.code, cli::kInputError);
  EXPECT_NE(r.err.find("shorten"), std::string::npos);
}

TEST_F(CliTest, PulsedPipeline) {
  ASSERT_EQ(run({"simulate", "--config", golden("pulsed.json"), "--out", path("p")}).code, cli::kSuccess);
  const auto r = run({"pulsed-g2", "--a", path("p/ch_a.pts"), "--b", path("p/ch_b.pts"), "--rep-mhz", "80",
                      "--peaks", "4", "--out", path("p")});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto j = r.result();
  EXPECT_LT(j["g2_zero"]["value"].get<double>(), 0.3);
  EXPECT_EQ(j["peaks"].size(), 9u);
  EXPECT_TRUE(fs::exists(path("p/pulsed.json")));
  EXPECT_EQ(run({"pulsed-g2", "--a", path("p/ch_a.pts"), "--b", path("p/ch_b.pts"), "--peaks", "0",
                 "--out", path("p")}).code,
            cli::kInputError);
}

TEST_F(CliTest, FitSaturation) {
  const auto r = run({"fit-saturation", "--data", golden("saturation.csv"), "--out", path("s")});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto j = r.result();
  EXPECT_NEAR(j["params"]["p_sat"]["value"].get<double>(), 2.32, 0.35);
  EXPECT_NEAR(j["params"]["i_inf"]["value"].get<double>(), 0.69e6, 0.07e6);
  EXPECT_TRUE(fs::exists(path("s/saturation.svg")));
}

TEST_F(CliTest, NonConvergenceExitsWithOne) {
  std::ofstream(path("one.csv")) << "power_mw,counts_per_s\n1.0,200000\n";
  const auto r = run({"fit-saturation", "--data", path("one.csv"), "--out", path("n")});
  EXPECT_EQ(r.code, cli::kNotConverged);
  EXPECT_FALSE(r.result()["converged"].get<bool>());
  EXPECT_TRUE(fs::exists(path("n/manifest.json")));
}

TEST_F(CliTest, FitPolarization) {
  const auto r = run({"fit-polarization", "--data", golden("polarization.csv"), "--out", path("pol")});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto j = r.result();
  EXPECT_NEAR(j["visibility"]["value"].get<double>(), 900.0 / 1100.0, 0.05);
  EXPECT_NEAR(j["params"]["phi"]["value"].get<double>(), 30.0, 3.0);
}

TEST_F(CliTest, FitLifetime) {
  const auto r = run({"fit-lifetime", "--data", golden("decay.csv"), "--irf", "gaussian", "--irf-sigma-ps", "30",
                      "--out", path("l")});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  EXPECT_NEAR(r.result()["params"]["tau"]["value"].get<double>(), 736.0, 15.0);

  std::ofstream irf(path("irf.csv"));
  irf << "t_ps,weight\n";
  for (int t = -96; t <= 96; t += 16) irf << t << ',' << std::exp(-0.5 * t * t / 900.0) << '\n';
  irf.close();
  const auto tab = run({"fit-lifetime", "--data", golden("decay.csv"), "--irf", path("irf.csv"), "--out", path("l")});
  ASSERT_EQ(tab.code, cli::kSuccess) << tab.err;
  EXPECT_NEAR(tab.result()["params"]["tau"]["value"].get<double>(), 736.0, 15.0);
}

TEST_F(CliTest, Rates) {
  const auto r = run({"rates", "--config", golden("rates.json"), "--series", golden("powers.csv"), "--out", path("r")});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto j = r.result();
  EXPECT_NEAR(j["k21"]["value"].get<double>(), 1.1, 0.01);
  EXPECT_NEAR(j["k23"]["value"].get<double>(), 0.1887, 0.002);
  EXPECT_NEAR(j["eta"]["value"].get<double>(), 0.25, 0.003);
  EXPECT_EQ(j["k31"].size(), 11u);
  EXPECT_TRUE(j.contains("lifetime_check"));
  EXPECT_TRUE(j.contains("k31_power_fit"));
  EXPECT_TRUE(fs::exists(path("r/rates.json")));
}

TEST_F(CliTest, Zpl) {
  const auto r = run({"zpl", "--config", golden("zpl.json"), "--out", path("z")});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto j = r.result();
  EXPECT_EQ(j["entries"].size(), 17u);
  EXPECT_NEAR(j["e0_nm"].get<double>(), 1350.0, 0.01);
  for (const char* f : {"spectrum.csv", "zpl_histogram.csv", "zpl_histogram.svg"}) {
    EXPECT_TRUE(fs::exists(path(std::string("z/") + f))) << f;
  }
  const auto iface = run({"zpl", "--stack", "ccc", "--interface-only", "--out", path("z2")});
  ASSERT_EQ(iface.code, cli::kSuccess) << iface.err;
  EXPECT_EQ(iface.result()["entries"].size(), 2u);
  EXPECT_EQ(run({"zpl", "--stack", "cxc", "--out", path("z3")}).code, cli::kInputError);
}

TEST_F(CliTest, Budget) {
  const auto r = run({"budget", "--config", golden("budget.json"), "--out", path("b")});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto j = r.result();
  EXPECT_NEAR(j["quantum_efficiency"].get<double>(), 0.108, 0.001);
  EXPECT_NEAR(j["half_angle_deg"].get<double>(), 62.6, 0.1);
  EXPECT_NEAR(j["enhancement_ratio"]["value"].get<double>(), 2.06, 0.005);
  EXPECT_NEAR(j["mean_ratio"]["value"].get<double>(), 1.64, 0.005);
  const auto manifest = json::parse(slurp(path("b/manifest.json")));
  EXPECT_EQ(manifest["config"]["budget"]["eta_c"], 0.13);

  const auto flags = run({"budget", "--i-total", "1e9", "--eta-c", "0.2", "--out", path("b")});
  ASSERT_EQ(flags.code, cli::kSuccess);
  EXPECT_EQ(flags.result()["i_total_convention"], "explicit");
}

TEST_F(CliTest, OutputIsRoundedJson) {
  const auto r = run({"budget", "--out", path("b")});
  ASSERT_EQ(r.code, cli::kSuccess);
  const auto j = r.result();
  std::ostringstream s;
  s.precision(17);
  s << j["quantum_efficiency"].get<double>();
  // 12 significant digits survive, the rest is gone.
  EXPECT_LE(s.str().size(), 15u) << s.str();
}
