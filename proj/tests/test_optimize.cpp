#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "robustdesign/conjugate.hpp"
#include "robustdesign/gp.hpp"
#include "robustdesign/optimize.hpp"
#include "test_helpers.hpp"

using namespace robustdesign;

namespace {

std::vector<double> grid(int n, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return v;
}

bool trace_monotone(const OptTrace& t) {
  std::map<int, double> last;
  for (const auto& r : t.rows) {
    auto [it, fresh] = last.emplace(r.restart, r.objective);
    if (!fresh) {
      if (r.objective < it->second) return false;
      if (r.accepted && !(r.objective > it->second)) return false;
      it->second = r.objective;
    }
  }
  return true;
}

/// A rugged discrete function of three coordinates with four levels each.
double rugged(const std::vector<double>& d, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : d) h = detail::mix64(h ^ static_cast<std::uint64_t>(v * 1000.0 + 7.0));
  const double noise = static_cast<double>(h % 100000) / 100000.0;
  return std::sin(3.0 * d[0]) * d[1] - 0.3 * (d[2] - d[0]) * (d[2] - d[0]) + noise;
}

}  // namespace

TEST(Gp, InterpolatesSmoothFunction) {
  std::vector<double> x, f;
  for (int i = 0; i < 12; ++i) {
    x.push_back(i / 11.0);
    f.push_back(std::sin(4.0 * x.back()));
  }
  const auto gp = Gp1d::fit(x, f, 0.0, 1.0);
  ASSERT_TRUE(gp.has_value());
  for (double t : {0.05, 0.33, 0.61, 0.97}) EXPECT_NEAR(gp->predict(t), std::sin(4.0 * t), 1e-3);
  EXPECT_NEAR(gp->argmax(1001), std::numbers::pi / 8.0, 0.01);
}

TEST(Gp, NuggetAbsorbsNoise) {
  Rng rng(5);
  NormalStream z(rng);
  std::vector<double> x, f;
  for (int i = 0; i < 40; ++i) {
    x.push_back(uniform01(rng));
    f.push_back(-(x.back() - 0.4) * (x.back() - 0.4) + 0.01 * z());
  }
  const auto gp = Gp1d::fit(x, f, 0.0, 1.0);
  ASSERT_TRUE(gp.has_value());
  EXPECT_GT(gp->nugget(), 1e-6);
  EXPECT_NEAR(gp->argmax(1001), 0.4, 0.05);
}

TEST(Gp, DegenerateInputsGiveNoFit) {
  EXPECT_FALSE(Gp1d::fit({0.1, 0.5}, {1.0, 2.0}, 0.0, 1.0).has_value());
  EXPECT_FALSE(Gp1d::fit({0.1, 0.5, 0.9}, {1.0, 1.0, 1.0}, 0.0, 1.0).has_value());
  EXPECT_ERROR_KIND(Gp1d::fit({0.1}, {1.0, 2.0}, 0.0, 1.0), ErrorKind::ShapeMismatch);
}

TEST(CoordinateExchange, IndicatorOfSecondCandidate) {
  DesignProblem p;
  p.coordinates = {Coordinate::choice("a", {1.0, 2.0, 3.0})};
  p.objective = [](const std::vector<double>& d) -> std::optional<double> { return d[0] == 2.0 ? 1.0 : 0.0; };
  const auto r = coordinate_exchange(p, {1.0}, 0);
  EXPECT_EQ(r.design, std::vector<double>{2.0});
  EXPECT_EQ(r.trace.rows.front().sweep, 1);
  EXPECT_TRUE(r.trace.rows.front().accepted);
}

TEST(CoordinateExchange, SeparableQuadratic) {
  const std::vector<double> target{-0.5, 0.25, 1.0, 0.0};
  DesignProblem p;
  for (int c = 0; c < 4; ++c) p.coordinates.push_back(Coordinate::choice("c" + std::to_string(c), grid(9, -1, 1)));
  p.objective = [&](const std::vector<double>& d) -> std::optional<double> {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s -= (d[i] - target[i]) * (d[i] - target[i]) * (1.0 + i);
    return s;
  };
  const auto r = coordinate_exchange(p, {1.0, -1.0, -1.0, 1.0}, 3);
  EXPECT_EQ(r.design, target);
  EXPECT_TRUE(trace_monotone(r.trace));
}

TEST(CoordinateExchange, TiesKeepIncumbentAndOrderDoesNotMatter) {
  DesignProblem p;
  p.coordinates = {Coordinate::choice("a", {0.0, 1.0, 2.0, 3.0})};
  p.objective = [](const std::vector<double>& d) -> std::optional<double> { return d[0] >= 2.0 ? 1.0 : 0.0; };
  EXPECT_EQ(coordinate_exchange(p, {3.0}, 0).design, std::vector<double>{3.0});
  const auto a = coordinate_exchange(p, {0.0}, 0).design;
  p.coordinates = {Coordinate::choice("a", {3.0, 1.0, 2.0, 0.0})};
  EXPECT_EQ(coordinate_exchange(p, {0.0}, 0).design, a);
  EXPECT_EQ(a, std::vector<double>{2.0});
}

TEST(CoordinateExchange, FailedCandidatesAreSkipped) {
  DesignProblem p;
  p.coordinates = {Coordinate::choice("a", {0.0, 1.0, 2.0})};
  p.objective = [](const std::vector<double>& d) -> std::optional<double> {
    if (d[0] == 2.0) return std::nullopt;
    if (d[0] == 1.0) fail(ErrorKind::NumericalSingularity, "bad candidate");
    return 0.0;
  };
  const auto r = coordinate_exchange(p, {0.0}, 0);
  EXPECT_EQ(r.design, std::vector<double>{0.0});
  EXPECT_EQ(r.trace.skipped, 2);
  EXPECT_EQ(r.trace.warnings.size(), 2u);
}

TEST(CoordinateExchange, RejectsInitOutsideDomain) {
  DesignProblem p;
  p.coordinates = {Coordinate::choice("a", {0.0, 1.0}), Coordinate::interval("b", 0.0, 1.0)};
  p.objective = [](const std::vector<double>&) -> std::optional<double> { return 0.0; };
  EXPECT_ERROR_KIND(coordinate_exchange(p, {0.5, 0.5}, 0), ErrorKind::OutOfRange);
  EXPECT_ERROR_KIND(coordinate_exchange(p, {0.0, 1.5}, 0), ErrorKind::OutOfRange);
  EXPECT_ERROR_KIND(coordinate_exchange(p, {0.0}, 0), ErrorKind::ShapeMismatch);
  p.coordinates[0].candidates.clear();
  EXPECT_ERROR_KIND(coordinate_exchange(p, {0.0, 0.5}, 0), ErrorKind::InvalidParameter);
}

TEST(Ace, FindsInteriorOptimum) {
  DesignProblem p;
  p.coordinates = {Coordinate::interval("x", 0.0, 1.0)};
  p.objective = [](const std::vector<double>& d) -> std::optional<double> { return -(d[0] - 0.3) * (d[0] - 0.3); };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const double v = ace_coordinate(p, {0.9}, 0, 10, seed);
    EXPECT_NEAR(v, 0.3, 0.02) << "seed " << seed;
  }
}

TEST(Ace, MonotoneObjectiveAtBoundary) {
  DesignProblem p;
  p.coordinates = {Coordinate::interval("x", 0.0, 1.0)};
  p.objective = [](const std::vector<double>& d) -> std::optional<double> { return d[0]; };
  const double v = ace_coordinate(p, {1.0}, 0, 10, 1);
  EXPECT_EQ(v, 1.0);
  const auto r = coordinate_exchange(p, {0.2}, 4);
  EXPECT_GE(r.design[0], 0.95);
  EXPECT_TRUE(trace_monotone(r.trace));
}

TEST(Ace, FallsBackWhenEmulatorCannotFit) {
  DesignProblem p;
  p.coordinates = {Coordinate::interval("x", 0.0, 1.0)};
  p.objective = [](const std::vector<double>& d) -> std::optional<double> {
    if (d[0] < 0.9) return std::nullopt;
    return d[0];
  };
  const double v = ace_coordinate(p, {0.9}, 0, 2, 0);
  EXPECT_GE(v, 0.9);
  EXPECT_ERROR_KIND(ace_coordinate(p, {0.9}, 1, 5, 0), ErrorKind::OutOfRange);
  p.coordinates = {Coordinate::choice("x", {0.9, 1.0})};
  EXPECT_ERROR_KIND(ace_coordinate(p, {0.9}, 0, 5, 0), ErrorKind::InvalidParameter);
}

TEST(OptimizeDesign, BruteForceOptimumOnSmallSpace) {
  const std::vector<double> levels{-1.0, -0.3, 0.4, 1.0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DesignProblem p;
    for (int c = 0; c < 3; ++c) p.coordinates.push_back(Coordinate::choice("c" + std::to_string(c), levels));
    p.objective = [seed](const std::vector<double>& d) -> std::optional<double> { return rugged(d, seed); };
    double best = -1e300;
    for (double a : levels)
      for (double b : levels)
        for (double c : levels) best = std::max(best, rugged({a, b, c}, seed));
    const auto r = optimize_design(p, 8, seed);
    EXPECT_EQ(r.trace.objective, best) << "seed " << seed;
    EXPECT_TRUE(trace_monotone(r.trace));
  }
}

TEST(OptimizeDesign, DeterministicBySeed) {
  DesignProblem p;
  p.coordinates = {Coordinate::choice("a", grid(5, 0, 1)), Coordinate::interval("b", -1.0, 1.0)};
  p.objective = [](const std::vector<double>& d) -> std::optional<double> {
    return std::cos(5.0 * d[1]) * d[0] - d[1] * d[1];
  };
  const auto a = optimize_design(p, 4, 11);
  const auto b = optimize_design(p, 4, 11);
  EXPECT_EQ(a.design, b.design);
  EXPECT_EQ(a.trace.rows.size(), b.trace.rows.size());
  EXPECT_EQ(a.trace.objective, b.trace.objective);
  const auto one = optimize_design(p, 1, 11);
  EXPECT_EQ(std::set<int>{0}, [&] {
    std::set<int> s;
    for (const auto& row : one.trace.rows) s.insert(row.restart);
    return s;
  }());
  EXPECT_ERROR_KIND(optimize_design(p, 0, 11), ErrorKind::InvalidParameter);
}

TEST(OptimizeDesign, WigglyModelSpreadsPoints) {
  IllustrativeExample ex;
  ex.k = 12;
  ex.sigma_u = 30;
  ex.sigma_eps = 0.5;
  const auto candidates = grid(23, -1, 1);
  DesignProblem p;
  for (int i = 0; i < 12; ++i) p.coordinates.push_back(Coordinate::choice("x" + std::to_string(i), candidates));
  const auto model = ex.model();
  p.objective = [&](const std::vector<double>& d) -> std::optional<double> {
    const auto q = ex.q_matrix(model, d);
    const MatrixXd normals = standard_normals(Rng(0), 100, q.cols());
    const auto draws = conjugate_kld_draws(q, VectorXd::Zero(q.cols()), ex.joint_prior_cov(), ex.sigma_eps, normals);
    return std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
  };
  p.budget.max_sweeps = 3;
  const std::vector<double> init(12, 0.0);
  const auto r = coordinate_exchange(p, init, 0);
  const std::set<double> unique(r.design.begin(), r.design.end());
  EXPECT_GE(unique.size(), 6u);
  EXPECT_TRUE(trace_monotone(r.trace));
}

TEST(OptimizeDesign, ContinuousRunDominatesFixedDesigns) {
  IllustrativeExample ex;
  ex.k = 6;
  ex.sigma_u = 10;
  ex.sigma_eps = 0.5;
  const auto model = ex.model();
  const MatrixXd normals = standard_normals(Rng(9), 400, 2 + ex.k);
  auto utility = [&](const std::vector<double>& d) {
    const auto draws = conjugate_kld_draws(ex.q_matrix(model, d), VectorXd::Zero(2 + ex.k), ex.joint_prior_cov(),
                                           ex.sigma_eps, normals);
    return std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
  };
  DesignProblem p;
  for (int i = 0; i < 12; ++i) p.coordinates.push_back(Coordinate::interval("x" + std::to_string(i), -1.0, 1.0));
  p.objective = [&](const std::vector<double>& d) -> std::optional<double> { return utility(d); };
  p.budget.max_sweeps = 4;
  p.budget.m_evals = 10;
  const auto r = optimize_design(p, 1, 2);
  EXPECT_TRUE(trace_monotone(r.trace));
  for (const auto& d : corollary_designs(12)) EXPECT_GE(r.trace.objective, utility(d));
}
