#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "robustdesign/cli.hpp"
#include "test_helpers.hpp"

using namespace robustdesign;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = RD_FIXTURE_DIR;
const std::string kConfigs = RD_CONFIG_DIR;

/// Fresh scratch directory per test.
std::string scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rd_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string write(const std::string& dir, const std::string& name, const std::string& text) {
  const auto path = (fs::path(dir) / name).string();
  io::write_file(path, text);
  return path;
}

const char* kIllustrative = R"(model:
  family: normal
  psi: 0.5
  smooths:
    - {covariate: x, k: 6}
  fixed:
    log_prec_u_x: -4.605170185988091
  reference:
    x: {from: -1, to: 1, points: 101}
prior:
  mean: {beta0: 0, beta_x: 0}
  sd: {beta0: 10, beta_x: 10}
design:
  kind: points
  n: 6
  bounds:
    x: [-1, 1]
utility:
  l_draws: 30
optimizer:
  restarts: 1
  max_sweeps: 2
  m_evals: 5
)";

std::string shoal_model(int k = 6) {
  return "model:\n  family: binomial\n  psi: 20\n  smooths:\n    - {covariate: depth, k: " + std::to_string(k) +
         "}\n  random_effect: {kind: grouped}\n  reference:\n    depth: {from: -60, to: -18, points: 101}\n"
         "  ranges:\n    depth: [-60, -18]\n";
}

cli::RunOptions opts(const std::string& command, const std::string& config, const std::string& out = "") {
  cli::RunOptions o;
  o.command = command;
  o.config = config;
  o.out = out;
  return o;
}

double json_number(const std::string& text, const std::string& key) {
  return nlohmann::json::parse(text).at(key).get<double>();
}

int run_quiet(const cli::RunOptions& o, std::string* err = nullptr) {
  std::ostringstream out, e;
  const int code = cli::run(o, out, e);
  if (err) *err = e.str();
  return code;
}

}  // namespace

TEST(Io, Fnv1aKnownVectors) {
  EXPECT_EQ(io::hex(io::fnv1a("")), "cbf29ce484222325");
  EXPECT_EQ(io::hex(io::fnv1a("a")), "af63dc4c8601ec8c");
  EXPECT_EQ(io::hex(io::fnv1a("foobar")), "85944171f73967e8");
}

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, -0.0}) {
    EXPECT_EQ(io::parse_double(io::format_double(v)), v);
  }
  EXPECT_EQ(io::parse_csv("x\n5e-324\n").numbers("x"), std::vector<double>{5e-324});
  EXPECT_FALSE(io::parse_double("1.5x").has_value());
  EXPECT_FALSE(io::parse_double(" 1").has_value());
  EXPECT_EQ(io::format_double(std::nan("")), "nan");
}

TEST(Io, CsvSkipsCommentsAndReportsBadRows) {
  const auto t = io::parse_csv("# config_hash=ab, seed=1\nx,y\n1,2\n\n3, 4\n", "t.csv");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.comments.size(), 1u);
  EXPECT_EQ(t.numbers("y", "t.csv"), (std::vector<double>{2, 4}));
  try {
    io::parse_csv("x,y\n1,2\n3\n", "t.csv");
    FAIL() << "short row accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoError);
    EXPECT_NE(std::string(e.what()).find("t.csv:3:"), std::string::npos) << e.what();
  }
  EXPECT_ERROR_KIND(io::parse_csv("x\nfoo\n").numbers("x"), ErrorKind::IoError);
  EXPECT_ERROR_KIND(io::parse_csv("x\n1\n").numbers("z"), ErrorKind::MissingCovariate);
}

TEST(Io, PriorJsonRoundTrip) {
  MatrixXd cov(2, 2);
  cov << 2.0, 0.3, 0.3, 1.0 / 3.0;
  const GaussianDist p((VectorXd(2) << -6.66, 0.1).finished(), cov, {"beta0", "beta_depth"});
  const auto text = io::prior_to_json(p, "0123456789abcdef", {"feed", 7});
  const auto back = io::prior_from_json(text);
  EXPECT_EQ(back.model_hash, "0123456789abcdef");
  EXPECT_EQ(back.prior.labels, p.labels);
  EXPECT_EQ(back.prior.mean, p.mean);
  EXPECT_EQ(back.prior.cov, p.cov);

  const auto sd = io::prior_from_json(R"({"labels": ["a", "b"], "mean": [1, 2], "sd": [0.5, 3]})");
  EXPECT_TRUE(sd.model_hash.empty());
  EXPECT_DOUBLE_EQ(sd.prior.cov(1, 1), 9.0);
  EXPECT_DOUBLE_EQ(sd.prior.cov(0, 1), 0.0);
  EXPECT_ERROR_KIND(io::prior_from_json(R"({"labels": ["a"], "mean": [1, 2], "sd": [1, 1]})"), ErrorKind::IoError);
  EXPECT_ERROR_KIND(io::prior_from_json("{nope"), ErrorKind::IoError);
}

TEST(Config, ErrorsCarryFileLineAndColumn) {
  const auto dir = scratch("config_errors");
  auto message = [&](const std::string& text) {
    const auto path = write(dir, "c.yaml", text);
    try {
      cli::execute(opts("evaluate-design", path));
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig) << e.what();
      return std::string(e.what());
    }
    return std::string("no error");
  };
  std::string text = kIllustrative;
  EXPECT_NE(message(text + "bogus: 1\n").find("c.yaml:24:1: unknown key 'bogus'"), std::string::npos)
      << message(text + "bogus: 1\n");
  std::string bad_k = text;
  bad_k.replace(bad_k.find("k: 6"), 4, "kk: 6");
  EXPECT_NE(message(bad_k).find("c.yaml:5:22: unknown key 'kk' in smooth term"), std::string::npos) << message(bad_k);
  std::string bad_family = text;
  bad_family.replace(bad_family.find("normal"), 6, "poisson");
  EXPECT_NE(message(bad_family).find("c.yaml:2:11:"), std::string::npos) << message(bad_family);
  EXPECT_NE(message("model: [1, 2\n").find("c.yaml:"), std::string::npos);
  std::string no_prior_entry = text;
  no_prior_entry.replace(no_prior_entry.find("beta_x: 0}"), 10, "beta_z: 0}");
  EXPECT_NE(message(no_prior_entry).find("prior sd has no entry for 'beta_z'"), std::string::npos);
  std::string no_ref = text;
  no_ref.replace(no_ref.find("  reference:\n    x: {from: -1, to: 1, points: 101}\n"), 50, "");
  EXPECT_NE(message(no_ref).find("model needs a 'reference' section"), std::string::npos) << message(no_ref);
}

TEST(Config, ModelHashIgnoresLayout) {
  const auto dir = scratch("model_hash");
  const config::Source src("m.yaml");
  const auto a = config::parse_model(src, YAML::Load(shoal_model()).begin()->second);
  const auto reordered = "model:\n  psi: 20   # trials\n  family: binomial\n  random_effect: {kind: grouped}\n"
                         "  smooths: [{k: 6, covariate: depth}]\n  ranges: {depth: [-60, -18]}\n"
                         "  reference: {depth: {points: 101, to: -18, from: -60}}\n";
  const auto b = config::parse_model(src, YAML::Load(reordered).begin()->second);
  const auto c = config::parse_model(src, YAML::Load(shoal_model(5)).begin()->second);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Cli, MissingFilesAndBadConfigsExitNonzero) {
  const auto dir = scratch("exit_codes");
  std::string err;
  EXPECT_EQ(run_quiet(opts("evaluate-design", dir + "/absent.yaml", dir), &err), 2);
  EXPECT_NE(err.find("cannot open"), std::string::npos);
  const auto bad = write(dir, "bad.yaml", "model:\n  family: normal\n  psi: -1\n");
  EXPECT_EQ(run_quiet(opts("find-design", bad, dir), &err), 2);
  auto o = opts("evaluate-design", write(dir, "ok.yaml", kIllustrative), dir);
  o.design = dir + "/absent.csv";
  EXPECT_EQ(run_quiet(o, &err), 2);
  const std::string inline_prior = "prior:\n  mean: {beta0: 0, beta_x: 0}\n  sd: {beta0: 10, beta_x: 10}\n";
  std::string prior_missing = kIllustrative;
  prior_missing.replace(prior_missing.find(inline_prior), inline_prior.size(), "prior:\n  file: nowhere.json\n");
  EXPECT_EQ(run_quiet(opts("find-design", write(dir, "p.yaml", prior_missing), dir), &err), 2);
  EXPECT_NE(err.find("p.yaml:11:9:"), std::string::npos) << err;
}

TEST(Cli, FindDesignRoundTripsAndIsDeterministic) {
  const auto dir = scratch("find_design");
  const auto cfg = write(dir, "ill.yaml", kIllustrative);
  ASSERT_EQ(run_quiet(opts("find-design", cfg, dir + "/a")), 0);
  auto o = opts("find-design", cfg, dir + "/b");
  o.threads = 3;
  ASSERT_EQ(run_quiet(o), 0);
  for (const auto* f : {"design.csv", "trace.csv", "design.json"}) {
    EXPECT_EQ(io::read_file(dir + "/a/" + f), io::read_file(dir + "/b/" + f)) << f;
  }
  const auto design = io::read_file(dir + "/a/design.csv");
  EXPECT_EQ(design.rfind("# config_hash=" + io::hex(io::fnv1a(kIllustrative)) + ", seed=0\npoint_id,x\n", 0), 0u);

  auto ev = opts("evaluate-design", cfg, dir + "/e");
  ev.design = dir + "/a/design.csv";
  ASSERT_EQ(run_quiet(ev), 0);
  const auto summary = io::read_file(dir + "/a/design.json");
  const auto evaluation = io::read_file(dir + "/e/evaluation.json");
  EXPECT_EQ(json_number(summary, "expected_utility"), json_number(evaluation, "expected_utility"));
  EXPECT_EQ(json_number(summary, "optimizer_objective"), json_number(summary, "expected_utility"));

  const auto trace = io::read_csv(dir + "/a/trace.csv");
  const auto obj = trace.numbers("objective");
  for (std::size_t i = 1; i < obj.size(); ++i) EXPECT_GE(obj[i], obj[i - 1]);
}

TEST(Cli, DiscreteCandidatesStayOnTheGrid) {
  const auto dir = scratch("discrete");
  std::string text = kIllustrative;
  text.replace(text.find("    x: [-1, 1]\n"), 15, "    x: [-1, 1]\n  candidates: 5\n");
  ASSERT_EQ(run_quiet(opts("find-design", write(dir, "d.yaml", text), dir)), 0);
  for (double x : io::read_csv(dir + "/design.csv").numbers("x")) {
    EXPECT_TRUE(x == -1 || x == -0.5 || x == 0 || x == 0.5 || x == 1) << x;
  }
}

TEST(Cli, EvaluateDesignIndependentOfThreadsAndRowOrder) {
  const auto dir = scratch("evaluate");
  const auto cfg = write(dir, "ill.yaml", kIllustrative);
  write(dir, "d1.csv", "x\n-1\n-0.2\n0.4\n1\n");
  write(dir, "d2.csv", "# shuffled\nx\n0.4\n1\n-1\n-0.2\n");
  auto o = opts("evaluate-design", cfg, dir + "/one");
  o.design = dir + "/d1.csv";
  ASSERT_EQ(run_quiet(o), 0);
  o.out = dir + "/four";
  o.threads = 4;
  ASSERT_EQ(run_quiet(o), 0);
  o.out = dir + "/shuffled";
  o.design = dir + "/d2.csv";
  ASSERT_EQ(run_quiet(o), 0);
  const auto a = io::read_file(dir + "/one/evaluation.json");
  EXPECT_EQ(a, io::read_file(dir + "/four/evaluation.json"));
  EXPECT_EQ(a, io::read_file(dir + "/shuffled/evaluation.json"));
  o.seed = 5;
  o.out = dir + "/seed5";
  ASSERT_EQ(run_quiet(o), 0);
  EXPECT_NE(json_number(a, "expected_utility"), json_number(io::read_file(dir + "/seed5/evaluation.json"), "expected_utility"));
  EXPECT_EQ(nlohmann::json::parse(a).at("config_hash").get<std::string>(), io::hex(io::fnv1a(kIllustrative)));
}

TEST(Cli, LDrawsFlagOverridesConfig) {
  const auto dir = scratch("l_draws");
  auto o = opts("evaluate-design", write(dir, "ill.yaml", kIllustrative), dir);
  o.design = write(dir, "d.csv", "x\n-1\n0\n1\n");
  o.l_draws = 7;
  ASSERT_EQ(run_quiet(o), 0);
  EXPECT_EQ(json_number(io::read_file(dir + "/evaluation.json"), "l_draws"), 7);
}

TEST(Cli, CorollaryStudyRowCount) {
  const auto dir = scratch("corollary");
  auto o = opts("corollary-study", kConfigs + "/corollary.yaml", dir);
  o.l_draws = 20;
  ASSERT_EQ(run_quiet(o), 0);
  const auto t = io::read_csv(dir + "/corollary.csv");
  EXPECT_EQ(t.rows.size(), 5u * 18u + 6u * 18u);
  EXPECT_EQ(t.header, (std::vector<std::string>{"n", "design", "sigma_u", "k", "sigma_eps", "expected_kld", "mc_se", "rank"}));
}

TEST(Cli, PilotPriorCarriesModelHash) {
  const auto dir = scratch("pilot");
  auto o = opts("fit-pilot", kConfigs + "/shoal_pilot.yaml", dir);
  o.e_draws = 50;
  ASSERT_EQ(run_quiet(o), 0);
  const auto prior = io::read_prior(dir + "/prior.json");
  EXPECT_EQ(prior.prior.labels,
            (std::vector<std::string>{"beta0", "beta_depth", "log_prec_u_depth", "log_prec_phi1"}));
  const auto pilot_cfg = config::Config::load(kConfigs + "/shoal_pilot.yaml");
  EXPECT_EQ(prior.model_hash, config::parse_model(pilot_cfg.source(), pilot_cfg.section("model")).hash());

  const std::string tail = "prior:\n  file: " + dir + "/prior.json\n";
  write(dir, "d.csv", "depth,fishnet_id\n-30,1\n-40,1\n-50,2\n");
  auto ev = opts("evaluate-design", write(dir, "same.yaml", shoal_model() + tail + "utility: {l_draws: 3, e_draws: 5}\n"),
                 dir + "/same");
  ev.design = dir + "/d.csv";
  EXPECT_EQ(run_quiet(ev), 0);
  std::string err;
  ev.config = write(dir, "other.yaml", shoal_model(5) + tail);
  EXPECT_EQ(run_quiet(ev, &err), 2);
  EXPECT_NE(err.find("prior was produced for model"), std::string::npos) << err;
}

TEST(Cli, SelectModelProbabilitiesSumToOne) {
  const auto dir = scratch("select");
  auto o = opts("select-model", kConfigs + "/select_model.yaml", dir);
  o.e_draws = 50;
  ASSERT_EQ(run_quiet(o), 0);
  const auto t = io::read_csv(dir + "/model_selection.csv");
  ASSERT_EQ(t.rows.size(), 3u);
  double total = 0.0;
  for (double p : t.numbers("posterior_prob")) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
  for (double ev : t.numbers("log_evidence")) EXPECT_TRUE(std::isfinite(ev));
}

TEST(Cli, TransectDesignRoundTrips) {
  const auto dir = scratch("transects");
  const auto text = shoal_model() + "prior:\n  file: " + kFixtures + "/priors/prior_2010.json\n" +
                    "design:\n  kind: transects\n  raster: [" + kFixtures + "/shoal_depth.grid]\n  count: 2\n"
                    "  n_points: 10\nutility: {l_draws: 4, e_draws: 5}\noptimizer: {max_sweeps: 1, m_evals: 3}\n";
  const auto cfg = write(dir, "t.yaml", text);
  ASSERT_EQ(run_quiet(opts("find-design", cfg, dir + "/a")), 0);
  const auto t = io::read_csv(dir + "/a/design.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"transect_id", "point_id", "easting", "northing", "depth", "fishnet_id"}));
  EXPECT_EQ(t.rows.size(), 20u);
  EXPECT_EQ(io::read_csv(dir + "/a/transects.csv").rows.size(), 2u);
  auto ev = opts("evaluate-design", cfg, dir + "/e");
  ev.design = dir + "/a/design.csv";
  ASSERT_EQ(run_quiet(ev), 0);
  EXPECT_EQ(json_number(io::read_file(dir + "/a/design.json"), "expected_utility"),
            json_number(io::read_file(dir + "/e/evaluation.json"), "expected_utility"));
}
