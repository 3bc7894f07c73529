#pragma once

#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <thread>
#include <vector>

#include "robustdesign/errors.hpp"
#include "robustdesign/gamm.hpp"
#include "robustdesign/gaussian.hpp"
#include "robustdesign/laplace.hpp"
#include "robustdesign/linalg.hpp"
#include "robustdesign/rng.hpp"

namespace robustdesign {

namespace detail {

/// KL(post || prior) for Gaussians given the prior covariance factor and the
/// posterior precision.
inline double kld_precision(const VectorXd& mu0, const Eigen::LLT<MatrixXd>& prior_cov,
                            const VectorXd& mu1, const Eigen::LLT<MatrixXd>& post_precision) {
  const auto t = mu0.size();
  if (t == 0) return 0.0;
  // Omega1 = U1^-1 U1^-T, so tr(Omega0^-1 Omega1) = ||L0^-1 U1^-1||_F^2.
  const MatrixXd u1_inv = post_precision.matrixU().solve(MatrixXd::Identity(t, t));
  const MatrixXd m = prior_cov.matrixL().solve(u1_inv);
  const double trace = m.squaredNorm();
  const VectorXd r = prior_cov.matrixL().solve(mu1 - mu0);
  const double log_det0 = linalg::log_det(prior_cov);
  const double log_det1 = -linalg::log_det(post_precision);
  return 0.5 * (trace + r.squaredNorm() - static_cast<double>(t) + log_det0 - log_det1);
}

}  // namespace detail

/// KL divergence from `prior` to `post`: the information gained moving from
/// one to the other. Non-negative up to rounding.
inline double kld_mvn(const GaussianDist& prior, const GaussianDist& post) {
  require(prior.dim() == post.dim(), ErrorKind::ShapeMismatch, "KLD needs equal dimensions");
  const auto t = prior.dim();
  if (t == 0) return 0.0;
  const auto l0 = linalg::checked_llt(prior.cov, ErrorKind::NotPositiveDefinite, "prior covariance");
  const auto l1 = linalg::checked_llt(post.cov, ErrorKind::NotPositiveDefinite, "posterior covariance");
  const MatrixXd m = l0.matrixL().solve(MatrixXd(l1.matrixL()));
  const VectorXd r = l0.matrixL().solve(post.mean - prior.mean);
  return 0.5 * (m.squaredNorm() + r.squaredNorm() - static_cast<double>(t) + linalg::log_det(l0) -
                linalg::log_det(l1));
}

struct UtilityOptions {
  int l_draws = 200;
  std::uint64_t seed = 0;
  int threads = 1;
  FitOptions fit;
};

struct UtilityEstimate {
  double value = 0.0;
  double mc_se = 0.0;
  int l_draws = 0;
  std::uint64_t seed = 0;
  int failed_draws = 0;
  int ridged_draws = 0;
  std::vector<double> per_draw;  ///< NaN where the draw failed
};

/// Stream for draw l of a utility evaluation. Depends only on (seed, l) so
/// every design sees the same random numbers.
inline Rng utility_draw_rng(std::uint64_t seed, int l) {
  return Rng(seed).split("utility").split(static_cast<std::uint64_t>(l));
}

/// The fixed Gaussian prior over (theta, alpha) that every draw's posterior is
/// compared against: the theta prior, and alpha ~ N(0, diag(1/d)) with d at
/// the prior mean of the variance parameters.
struct JointPrior {
  GaussianDist theta;
  Eigen::LLT<MatrixXd> theta_llt;
  VectorXd alpha_precision;

  JointPrior(const Model& model, const ModelFrame& frame, const GaussianDist& prior)
      : theta(prior.marginal(model.layout.theta_labels)),
        theta_llt(linalg::checked_llt(theta.cov, ErrorKind::NotPositiveDefinite, "theta prior")),
        alpha_precision(frame.alpha_precision(model.layout.tau(theta.mean))) {}

  /// KLD of the block-diagonal Laplace posterior from this prior.
  double kld(const LaplaceFit& fit) const {
    const auto b = linalg::checked_llt(fit.theta_hessian, ErrorKind::NotPositiveDefinite, "B(theta*)");
    double out = detail::kld_precision(theta.mean, theta_llt, fit.theta_star, b);
    const auto q = alpha_precision.size();
    if (q > 0) {
      const auto h = linalg::checked_llt(fit.alpha_hessian, ErrorKind::NotPositiveDefinite, "H(alpha*)");
      const MatrixXd h_inv = linalg::inverse_from_llt(h);
      const double trace = alpha_precision.dot(h_inv.diagonal());
      const double quad = alpha_precision.dot(fit.alpha_star.cwiseAbs2());
      out += 0.5 * (trace + quad - static_cast<double>(q) - alpha_precision.array().log().sum() +
                    linalg::log_det(h));
    }
    return out;
  }
};

struct DrawResult {
  PriorDraw simulated;
  LaplaceFit fit;
  double kld = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
};

/// One pass of the inner loop: simulate, fit both Laplace stages, score.
inline DrawResult utility_draw(const Model& model, const ModelFrame& frame, const JointPrior& prior,
                               const FitOptions& fit_opts, Rng rng) {
  DrawResult out;
  out.simulated = simulate_prior_predictive(model, frame, prior.theta, rng.split("simulate"));
  out.fit = laplace_fit(model, frame, prior.theta, out.simulated.y, fit_opts, rng.split("inner"));
  if (!out.fit.converged) return out;
  out.kld = prior.kld(out.fit);
  out.ok = std::isfinite(out.kld);
  return out;
}

namespace detail {

/// Run body(l) for l in [0, count) on up to `threads` workers. Each index
/// writes only its own slot, so results do not depend on scheduling.
inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int l = 0; l < count; ++l) body(l);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int l = w; l < count; l += threads) body(l);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline void summarize(UtilityEstimate& est) {
  double sum = 0.0;
  int ok = 0;
  for (double v : est.per_draw) {
    if (std::isfinite(v)) {
      sum += v;
      ++ok;
    }
  }
  est.failed_draws = est.l_draws - ok;
  require(ok > 0, ErrorKind::EstimationFailed, "every utility draw failed");
  est.value = sum / ok;
  double ss = 0.0;
  for (double v : est.per_draw) {
    if (std::isfinite(v)) ss += (v - est.value) * (v - est.value);
  }
  est.mc_se = ok > 1 ? std::sqrt(ss / (ok - 1) / ok) : 0.0;
}

}  // namespace detail

/// Monte Carlo expected KLD utility of a design. Rows are put in canonical
/// order first, so the estimate does not depend on how the design is listed.
inline UtilityEstimate expected_utility(const Model& model, const GaussianDist& prior,
                                        const Design& design, const UtilityOptions& opts) {
  require(opts.l_draws >= 1, ErrorKind::InvalidParameter, "l_draws must be at least 1");
  const Design canonical = design.canonical();
  const ModelFrame frame = model.frame(canonical);
  const JointPrior joint(model, frame, prior);
  UtilityEstimate est;
  est.l_draws = opts.l_draws;
  est.seed = opts.seed;
  est.per_draw.assign(static_cast<std::size_t>(opts.l_draws),
                      std::numeric_limits<double>::quiet_NaN());
  std::vector<char> ridged(static_cast<std::size_t>(opts.l_draws), 0);
  detail::parallel_for(opts.l_draws, opts.threads, [&](int l) {
    try {
      const auto r = utility_draw(model, frame, joint, opts.fit, utility_draw_rng(opts.seed, l));
      if (r.ok) est.per_draw[static_cast<std::size_t>(l)] = r.kld;
      ridged[static_cast<std::size_t>(l)] = r.fit.ridged ? 1 : 0;
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::EstimationFailed:
        case ErrorKind::LikelihoodUnderflow:
        case ErrorKind::NumericalSingularity:
        case ErrorKind::NotPositiveDefinite:
        case ErrorKind::SimulationOverflow:
          break;  // counted as a failed draw
        default:
          throw;
      }
    }
  });
  for (char c : ridged) est.ridged_draws += c;
  detail::summarize(est);
  return est;
}

struct Efficiency {
  double ratio = 0.0;
  double se = 0.0;
};

/// U(d) / U(d*) from paired per-draw utilities (same seed, same draws), with
/// a delta-method standard error.
inline Efficiency relative_efficiency(const UtilityEstimate& u_d, const UtilityEstimate& u_star) {
  require(u_d.per_draw.size() == u_star.per_draw.size(), ErrorKind::ShapeMismatch,
          "efficiency needs paired utility draws");
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t l = 0; l < u_d.per_draw.size(); ++l) {
    if (std::isfinite(u_d.per_draw[l]) && std::isfinite(u_star.per_draw[l])) {
      pairs.emplace_back(u_d.per_draw[l], u_star.per_draw[l]);
    }
  }
  require(!pairs.empty(), ErrorKind::EfficiencyUndefined, "no paired draws");
  const auto m = static_cast<double>(pairs.size());
  double a = 0.0, b = 0.0;
  for (const auto& [x, y] : pairs) {
    a += x;
    b += y;
  }
  a /= m;
  b /= m;
  require(b > 0.0 && std::isfinite(b), ErrorKind::EfficiencyUndefined,
          "reference design has non-positive expected utility");
  Efficiency out;
  out.ratio = a / b;
  if (pairs.size() > 1) {
    double vaa = 0.0, vbb = 0.0, vab = 0.0;
    for (const auto& [x, y] : pairs) {
      vaa += (x - a) * (x - a);
      vbb += (y - b) * (y - b);
      vab += (x - a) * (y - b);
    }
    vaa /= (m - 1);
    vbb /= (m - 1);
    vab /= (m - 1);
    const double var = (vaa - 2.0 * out.ratio * vab + out.ratio * out.ratio * vbb) / (b * b * m);
    out.se = std::sqrt(std::max(0.0, var));
  }
  return out;
}

/// Evaluate both designs with the same evaluator (and hence the same seed).
inline Efficiency relative_efficiency(const Design& d,
                                      const std::function<UtilityEstimate(const Design&)>& evaluate,
                                      const Design& d_star) {
  return relative_efficiency(evaluate(d), evaluate(d_star));
}

}  // namespace robustdesign
