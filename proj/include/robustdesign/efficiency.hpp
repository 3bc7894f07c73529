#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "robustdesign/conjugate.hpp"
#include "robustdesign/optimize.hpp"
#include "robustdesign/utility.hpp"

namespace robustdesign {

struct EfficiencyStudyOptions {
  std::vector<double> sigma_u{1.0, 5.0, 10.0, 20.0};
  std::vector<int> degrees{1, 2, 3};
  int k = 3;
  double sigma_eps = 1.0;
  double beta_sd = 10.0;
  int n = 12;
  int l_draws = 200;
  int restarts = 2;
  Budget budget{4, 20, 1e-4, 1001};
  std::uint64_t seed = 0;
  int threads = 1;
};

struct StudyDesign {
  std::string name;  ///< gam_<sigma_u> or poly_<degree>
  double sigma_u = std::numeric_limits<double>::quiet_NaN();
  int degree = 0;
  std::vector<double> x;  ///< sorted
  double utility = 0.0;   ///< under the model it was optimised for
};

struct EfficiencyCell {
  std::string design;
  int degree = 0;
  double ratio = 0.0;
  double se = 0.0;
};

struct EfficiencyStudy {
  std::vector<StudyDesign> designs;
  std::vector<EfficiencyCell> cells;

  const EfficiencyCell& cell(const std::string& design, int degree) const {
    for (const auto& c : cells) {
      if (c.design == design && c.degree == degree) return c;
    }
    fail(ErrorKind::OutOfRange, "no efficiency for " + design + " under degree " + std::to_string(degree));
  }
};

namespace detail {

inline std::string sigma_name(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

inline std::vector<double> optimise_points(const std::function<double(const std::vector<double>&)>& f,
                                           const EfficiencyStudyOptions& opts, std::uint64_t seed) {
  DesignProblem p;
  for (int i = 0; i < opts.n; ++i) p.coordinates.push_back(Coordinate::interval("x" + std::to_string(i + 1), -1.0, 1.0));
  p.objective = [&](const std::vector<double>& x) -> std::optional<double> { return f(x); };
  p.budget = opts.budget;
  auto x = optimize_design(p, opts.restarts, seed).design;
  std::sort(x.begin(), x.end());
  return x;
}

}  // namespace detail

/// Designs optimal for the single-covariate additive model at each sigma_u and
/// for each polynomial reference, and every design's efficiency under every
/// polynomial reference relative to that reference's own optimal design.
inline EfficiencyStudy efficiency_study(const EfficiencyStudyOptions& opts) {
  require(!opts.sigma_u.empty() && !opts.degrees.empty(), ErrorKind::InvalidParameter, "empty efficiency grid");
  const Rng master = Rng(opts.seed).split("efficiency");
  const std::uint64_t utility_seed = master.split("utility")();
  EfficiencyStudy study;

  for (std::size_t i = 0; i < opts.sigma_u.size(); ++i) {
    IllustrativeExample ex;
    ex.k = opts.k;
    ex.sigma_u = opts.sigma_u[i];
    ex.sigma_eps = opts.sigma_eps;
    ex.beta_sd = opts.beta_sd;
    const Model model = ex.model();
    const GaussianDist prior = ex.prior();
    UtilityOptions uo;
    uo.l_draws = opts.l_draws;
    uo.seed = utility_seed;
    uo.threads = opts.threads;
    auto u = [&](const std::vector<double>& x) {
      return expected_utility(model, prior, IllustrativeExample::points(x), uo).value;
    };
    StudyDesign d;
    d.name = "gam_" + detail::sigma_name(opts.sigma_u[i]);
    d.sigma_u = opts.sigma_u[i];
    d.x = detail::optimise_points(u, opts, master.split("gam").split(i)());
    d.utility = u(d.x);
    study.designs.push_back(std::move(d));
  }

  std::vector<PolynomialReference> refs;
  for (int g : opts.degrees) {
    PolynomialReference ref;
    ref.degree = g;
    ref.prior_sd = opts.beta_sd;
    ref.sigma_eps = opts.sigma_eps;
    refs.push_back(ref);
    auto u = [&](const std::vector<double>& x) { return ref.expected_utility(x, opts.l_draws, utility_seed).value; };
    StudyDesign d;
    d.name = "poly_" + std::to_string(g);
    d.degree = g;
    d.x = detail::optimise_points(u, opts, master.split("poly").split(static_cast<std::uint64_t>(g))());
    d.utility = u(d.x);
    study.designs.push_back(std::move(d));
  }

  for (std::size_t r = 0; r < refs.size(); ++r) {
    const auto& ref = refs[r];
    const auto* star = &study.designs.front();
    for (const auto& d : study.designs) {
      if (d.degree == ref.degree) star = &d;
    }
    const auto u_star = ref.expected_utility(star->x, opts.l_draws, utility_seed);
    for (const auto& d : study.designs) {
      const auto e = relative_efficiency(ref.expected_utility(d.x, opts.l_draws, utility_seed), u_star);
      study.cells.push_back({d.name, ref.degree, e.ratio, e.se});
    }
  }
  return study;
}

}  // namespace robustdesign
