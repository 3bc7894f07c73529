// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Criterion numbers given as arguments restrict
// the run to those criteria.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles/corollary_claims.hpp"
#include "oracles/gaussian_oracle.hpp"
#include "robustdesign/conjugate.hpp"
#include "robustdesign/efficiency.hpp"
#include "robustdesign/geo.hpp"
#include "robustdesign/io.hpp"
#include "robustdesign/laplace.hpp"
#include "robustdesign/optimize.hpp"
#include "robustdesign/utility.hpp"

using namespace robustdesign;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void check(bool cond, const std::string& what) {
    if (!cond) {
      if (!ok) detail << "; ";
      ok = false;
      detail << what;
    }
  }
};

// ---- criterion 1 ----

void conjugate_exactness(Outcome& out) {
  double worst = 0.0;
  int failed = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = oracle::random_conjugate_instance(1000 + seed);
    const auto fit = laplace_fit(c.model, c.frame, c.beta_prior, c.y, {}, Rng(seed));
    if (!fit.converged) {
      ++failed;
      continue;
    }
    const auto post = conjugate_posterior(c.q, c.y, c.mu0, c.omega0, c.example.sigma_eps);
    const MatrixXd precision = c.omega0.inverse() + c.q.transpose() * c.q / std::pow(c.example.sigma_eps, 2);
    const auto k = c.example.k;
    const MatrixXd u_cond = precision.bottomRightCorner(k, k).inverse();
    const MatrixXd b_inv = fit.theta_hessian.inverse();
    const MatrixXd h_inv = fit.alpha_hessian.inverse();
    worst = std::max(worst, (fit.theta_star - post.mean.head(2)).lpNorm<Eigen::Infinity>());
    worst = std::max(worst, (fit.alpha_star - post.mean.tail(k)).lpNorm<Eigen::Infinity>());
    worst = std::max(worst, (b_inv - post.cov.topLeftCorner(2, 2)).lpNorm<Eigen::Infinity>());
    worst = std::max(worst, (h_inv - u_cond).lpNorm<Eigen::Infinity>());
  }
  out.check(failed == 0, std::to_string(failed) + " fits did not converge");
  out.check(worst < 1e-6, "max deviation " + io::format_double(worst));
  out.detail << (out.ok ? "" : "; ") << "50 instances, max deviation " << worst;
}

// ---- criterion 2 ----

double binomial_loglik(const VectorXd& y, const VectorXd& eta, double m) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    s += std::lgamma(m + 1) - std::lgamma(y(i) + 1) - std::lgamma(m - y(i) + 1) + y(i) * eta(i) -
         m * std::log1p(std::exp(eta(i)));
  }
  return s;
}

void evidence_exactness(Outcome& out) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = oracle::random_conjugate_instance(5000 + seed);
    const auto fit = laplace_fit(c.model, c.frame, c.beta_prior, c.y, {}, Rng(seed));
    out.check(fit.converged, "instance " + std::to_string(seed) + " did not converge");
    if (!fit.converged) continue;
    const double want = oracle::gaussian_log_evidence(c.q, c.y, c.mu0, c.omega0, c.example.sigma_eps);
    worst = std::max(worst, std::abs(fit.log_evidence - want));
  }
  out.check(worst < 1e-6, "gaussian evidence off by " + io::format_double(worst));

  GammSpec s;
  s.family = Family::binomial;
  s.link = Link::logit;
  s.psi = 20;
  s.linear_terms = {"x"};
  Design d;
  d.covariates = {"x"};
  d.values = VectorXd::LinSpaced(50, -1, 1);
  const std::vector<std::string> labels{"beta0", "beta_x"};
  const auto model = Model::make(s, ModelBasis::fit(s, d), labels);
  const auto frame = model.frame(d);
  const auto prior = GaussianDist::diagonal(VectorXd::Zero(2), VectorXd::Constant(2, 2.0), labels);
  const GaussianDist truth((VectorXd(2) << -0.3, 1.1).finished(), MatrixXd::Zero(2, 2), labels);
  const VectorXd y = simulate_prior_predictive(model, frame, truth, Rng(9)).y;
  const auto fit = laplace_fit(model, frame, prior, y, {}, Rng(1));
  out.check(fit.converged, "binomial fit did not converge");
  const GaussianDist proposal(fit.theta_star, 2.0 * fit.theta_hessian.inverse(), {});
  Rng rng(99);
  const int m = 1000000;
  std::vector<double> lw(static_cast<std::size_t>(m));
  double top = -1e300;
  for (auto& v : lw) {
    const VectorXd b = proposal.sample(rng);
    v = binomial_loglik(y, frame.x * b, 20) + prior.log_density(b) - proposal.log_density(b);
    top = std::max(top, v);
  }
  double acc = 0.0;
  for (double v : lw) acc += std::exp(v - top);
  const double is = top + std::log(acc / m);
  const double rel = std::abs(fit.log_evidence - is) / std::abs(is);
  out.check(rel < 0.02, "binomial evidence relative error " + io::format_double(rel));
  out.detail << (out.ok ? "" : "; ") << "gaussian max error " << worst << ", binomial laplace " << fit.log_evidence
             << " vs importance sampling " << is;
}

// ---- criterion 3 ----

GaussianDist random_gaussian(int t, Rng rng) {
  NormalStream z(rng);
  VectorXd m(t);
  MatrixXd a(t, t);
  for (auto& v : m) v = z();
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = z();
  MatrixXd c = a * a.transpose() / t;
  c.diagonal().array() += 0.3;
  return {m, c, {}};
}

void kld_correctness(Outcome& out) {
  double worst_z = 0.0, worst_self = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto prior = random_gaussian(6, Rng(s).split("acceptance-prior"));
    const auto post = random_gaussian(6, Rng(s).split("acceptance-post"));
    const auto est = oracle::sampled_kld(prior, post, 1000000, Rng(s).split("acceptance-mc"));
    worst_z = std::max(worst_z, std::abs(kld_mvn(prior, post) - est.mean) / est.se);
    worst_self = std::max(worst_self, std::abs(kld_mvn(post, post)));
  }
  out.check(worst_z < 3.0, "a pair differs by " + io::format_double(worst_z) + " standard errors");
  out.check(worst_self <= 1e-10, "kld(p, p) = " + io::format_double(worst_self));
  out.detail << (out.ok ? "" : "; ") << "20 pairs, max |z| " << worst_z << ", max |kld(p,p)| " << worst_self;
}

// ---- criterion 4 ----

void corollary_reproduction(Outcome& out) {
  CorollaryOptions opts;
  opts.l_draws = 1000;
  const auto rows = corollary_study(opts);
  const auto rep = oracle::check_corollary_patterns(rows, opts);
  out.check(rep.claims > 0, "no rank claims");
  out.check(rep.broken == 0, std::to_string(rep.broken) + " patterns broken");
  out.check(rep.weak == 0, std::to_string(rep.weak) + " claims within 2 standard errors");
  for (const auto& m : rep.messages) out.detail << (out.ok ? "" : "; ") << m;
  out.detail << (out.ok ? "" : "; ") << rows.size() << " rows, " << rep.claims << " rank claims";
}

// ---- criterion 5 ----

double rugged(const std::vector<double>& d, std::uint64_t seed) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
  for (double v : d) h = detail::mix64(h ^ static_cast<std::uint64_t>(std::llround(v * 1000.0) + 7000));
  const double noise = static_cast<double>(h % 100000) / 100000.0;
  return std::cos(2.0 * d[0] * d[1]) + 0.5 * d[2] * d[0] - 0.2 * d[1] * d[1] + noise;
}

void optimizer_soundness(Outcome& out) {
  const std::vector<double> levels{-1.0, -0.2, 0.5, 1.0};
  int hits = 0, accepted = 0, monotone = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DesignProblem p;
    for (int c = 0; c < 3; ++c) p.coordinates.push_back(Coordinate::choice("c" + std::to_string(c), levels));
    p.objective = [seed](const std::vector<double>& d) -> std::optional<double> { return rugged(d, seed); };
    double best = -1e300;
    for (double a : levels)
      for (double b : levels)
        for (double c : levels) best = std::max(best, rugged({a, b, c}, seed));
    const auto r = optimize_design(p, 32, seed);
    if (r.trace.objective == best) ++hits;
    std::map<int, double> last;
    for (const auto& row : r.trace.rows) {
      auto [it, fresh] = last.emplace(row.restart, row.objective);
      if (fresh) continue;
      if (row.accepted) {
        ++accepted;
        if (row.objective > it->second) ++monotone;
      }
      out.check(row.objective >= it->second, "objective decreased in seed " + std::to_string(seed));
      it->second = row.objective;
    }
  }
  out.check(hits == 20, std::to_string(hits) + "/20 runs found the optimum");
  out.check(monotone == accepted, std::to_string(accepted - monotone) + " accepted exchanges did not improve");
  out.detail << (out.ok ? "" : "; ") << hits << "/20 optima, " << monotone << "/" << accepted
             << " accepted exchanges improving";
}

// ---- criterion 6 ----

void efficiency_pattern(Outcome& out) {
  EfficiencyStudyOptions opts;
  const auto study = efficiency_study(opts);
  double gam_min = 1e300, worst_se = 0.0;
  for (double su : {5.0, 10.0, 20.0}) {
    for (int g : {1, 2, 3}) {
      const auto& c = study.cell("gam_" + detail::sigma_name(su), g);
      gam_min = std::min(gam_min, c.ratio);
      out.check(c.ratio > 0.9, c.design + " under degree " + std::to_string(g) + " has efficiency " +
                                   io::format_double(c.ratio));
    }
  }
  double linear_min = 1e300, gam1_min = 1e300;
  for (int g : {2, 3}) linear_min = std::min(linear_min, study.cell("poly_1", g).ratio);
  for (int g : {1, 2, 3}) gam1_min = std::min(gam1_min, study.cell("gam_1", g).ratio);
  for (const auto& c : study.cells) worst_se = std::max(worst_se, c.se);
  out.check(linear_min < 0.9, "linear-optimal design never below 0.9");
  out.check(gam1_min < gam_min, "sigma_u = 1 design is not worse than the others");
  out.check(worst_se < 0.01, "largest se " + io::format_double(worst_se));
  out.detail << (out.ok ? "" : "; ") << "gam min " << gam_min << ", linear-optimal min " << linear_min
             << ", sigma_u=1 min " << gam1_min << ", max se " << worst_se;
}

// ---- CLI helpers ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "log.txt") out[e.path().filename().string()] = slurp(e.path());
  }
  return out;
}

int run_cli(const std::string& args, const fs::path& out) {
  fs::remove_all(out);
  fs::create_directories(out);
  const std::string cmd = std::string(RD_CLI_PATH) + " " + args + " --out " + out.string() + " > " +
                          (out / "log.txt").string() + " 2>&1";
  return std::system(cmd.c_str());
}

std::string config(const std::string& name) { return std::string(RD_CONFIG_DIR) + "/" + name; }

// ---- criterion 7 ----

void transect_pipeline(Outcome& out, const fs::path& work) {
  const std::string args = "find-design --config " + config("shoal_design_2010.yaml") + " --seed 7 --l-draws 200";
  std::vector<double> minutes;
  for (int threads : {1, 2}) {
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = run_cli(args + " --threads " + std::to_string(threads), work / ("shoal_" + std::to_string(threads)));
    minutes.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0);
    out.check(rc == 0, "find-design exited with " + std::to_string(rc));
    if (rc != 0) return;
    out.check(minutes.back() < 60.0, "run took " + io::format_double(minutes.back()) + " min");
  }
  const auto a = artifacts(work / "shoal_1");
  const auto b = artifacts(work / "shoal_2");
  out.check(a.at("design.csv") == b.at("design.csv"), "designs differ between runs");
  out.check(a == b, "artifacts differ between runs");

  const auto raster = load_raster({std::string(RD_FIXTURE_DIR) + "/shoal_depth.grid"});
  const auto table = io::parse_csv(a.at("design.csv"), "design.csv");
  const auto e = table.numbers("easting", "design.csv");
  const auto n = table.numbers("northing", "design.csv");
  int outside = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!raster.in_bounds({e[i], n[i]})) ++outside;
  }
  out.check(e.size() == 18u * 50u, "design has " + std::to_string(e.size()) + " points");
  out.check(outside == 0, std::to_string(outside) + " points out of bounds");
  const auto summary = nlohmann::json::parse(a.at("design.json"));
  const double mean_depth = summary.at("mean_design_depth").get<double>();
  const double raster_depth = summary.at("raster_mean_depth").get<double>();
  out.check(mean_depth > raster_depth, "design mean depth " + io::format_double(mean_depth) +
                                           " is not shallower than " + io::format_double(raster_depth));
  out.detail << (out.ok ? "" : "; ") << e.size() << " points in bounds, mean depth " << mean_depth << " m vs raster "
             << raster_depth << " m, run times " << minutes[0] << " and " << minutes[1] << " min";
}

// ---- criterion 8 ----

void cli_determinism(Outcome& out, const fs::path& work) {
  const fs::path seed_design = work / "det_seed_design";
  if (run_cli("find-design --config " + config("illustrative.yaml") + " --seed 3 --l-draws 20", seed_design) != 0) {
    out.check(false, "could not produce a design for evaluate-design");
    return;
  }
  const std::vector<std::pair<std::string, std::string>> cases{
      {"fit-pilot", "fit-pilot --config " + config("shoal_pilot.yaml") + " --seed 5"},
      {"select-model", "select-model --config " + config("select_model.yaml") + " --seed 5"},
      {"find-design", "find-design --config " + config("illustrative.yaml") + " --seed 5 --l-draws 20"},
      {"find-design (discrete)", "find-design --config " + config("illustrative_discrete.yaml") + " --seed 5 --l-draws 20"},
      {"evaluate-design", "evaluate-design --config " + config("illustrative.yaml") + " --seed 5 --l-draws 50 --design " +
                              (seed_design / "design.csv").string()},
      {"efficiency", "efficiency --config " + config("efficiency.yaml") + " --seed 5 --l-draws 20"},
      {"corollary-study", "corollary-study --config " + config("corollary.yaml") + " --seed 5 --l-draws 100"},
  };
  int checked = 0;
  for (const auto& [name, args] : cases) {
    std::vector<std::map<std::string, std::string>> runs;
    for (int threads : {1, 1, 3}) {
      const fs::path dir = work / ("det_" + std::to_string(runs.size()));
      const int rc = run_cli(args + " --threads " + std::to_string(threads), dir);
      out.check(rc == 0, name + " exited with " + std::to_string(rc));
      if (rc != 0) break;
      runs.push_back(artifacts(dir));
    }
    if (runs.size() != 3) continue;
    out.check(!runs[0].empty(), name + " wrote nothing");
    out.check(runs[0] == runs[1], name + " differs between identical runs");
    out.check(runs[0] == runs[2], name + " differs between thread counts");
    ++checked;
  }
  out.detail << (out.ok ? "" : "; ") << checked << " subcommand runs compared across repeats and --threads 1/3";
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const fs::path work = fs::temp_directory_path() / "robustdesign_acceptance";
  fs::create_directories(work);
  struct Criterion {
    int id;
    std::string name;
    double limit_min;
    std::function<void(Outcome&)> body;
  };
  const std::vector<Criterion> criteria{
      {1, "conjugate exactness", 1, conjugate_exactness},
      {2, "evidence exactness", 5, evidence_exactness},
      {3, "kld correctness", 2, kld_correctness},
      {4, "corollary rank patterns", 15, corollary_reproduction},
      {5, "optimizer soundness", 2, optimizer_soundness},
      {6, "robust efficiency pattern", 30, efficiency_pattern},
      {7, "transect pipeline", 120, [&](Outcome& o) { transect_pipeline(o, work); }},
      {8, "cli determinism", 60, [&](Outcome& o) { cli_determinism(o, work); }},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.body(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.check(secs < 60.0 * c.limit_min, "exceeded " + io::format_double(c.limit_min) + " min");
    failures += o.ok ? 0 : 1;
    std::cout << (o.ok ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail.str()
              << " [" << std::fixed << std::setprecision(1) << secs << " s]" << std::defaultfloat << std::endl;
  }
  fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
