#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "robustdesign/errors.hpp"
#include "robustdesign/gamm.hpp"
#include "robustdesign/gaussian.hpp"
#include "robustdesign/linalg.hpp"
#include "robustdesign/rng.hpp"

namespace robustdesign {

enum class MarginalMethod { automatic, monte_carlo, exact_gaussian };

struct MarginalOptions {
  MarginalMethod method = MarginalMethod::automatic;
  int e_draws = 500;
};

struct MarginalValue {
  double value = 0.0;
  VectorXd gradient;  ///< with respect to theta
};

/// log p(y | theta) with alpha integrated out.
///
/// Normal responses with identity link are integrated exactly. Everything else
/// averages the conditional likelihood over e_draws prior draws of alpha that
/// share one fixed block of standard normals, so the estimate is a smooth,
/// deterministic function of theta.
class MarginalLikelihood {
 public:
  MarginalLikelihood(const Model& model, const ModelFrame& frame, VectorXd y,
                     MarginalOptions options, Rng crn)
      : model_(&model), frame_(&frame), y_(std::move(y)) {
    require(y_.size() == frame.n(), ErrorKind::ShapeMismatch, "response length differs from design");
    require(options.e_draws >= 1, ErrorKind::InvalidParameter, "e_draws must be at least 1");
    const bool gaussian = model.spec.family == Family::normal && model.spec.link == Link::identity;
    switch (options.method) {
      case MarginalMethod::automatic: exact_ = gaussian || frame.q() == 0; break;
      case MarginalMethod::exact_gaussian:
        require(gaussian || frame.q() == 0, ErrorKind::InvalidSpec,
                "exact marginal likelihood needs a normal response with identity link");
        exact_ = true;
        break;
      case MarginalMethod::monte_carlo: exact_ = frame.q() == 0; break;
    }
    if (exact_ && frame.q() > 0) {
      ztz_ = frame.z_alpha.transpose() * frame.z_alpha;
    } else if (!exact_) {
      NormalStream normal(crn);
      xi_.resize(frame.q(), options.e_draws);
      for (Eigen::Index e = 0; e < xi_.cols(); ++e) {
        for (Eigen::Index i = 0; i < xi_.rows(); ++i) xi_(i, e) = normal();
      }
      build_variance_blocks();
      loglik_constant_ = family::loglik_constant(model.spec, y_);
    }
  }

  bool exact() const { return exact_; }
  const VectorXd& y() const { return y_; }

  MarginalValue operator()(const VectorXd& theta) const {
    return exact_ ? gaussian(theta) : monte_carlo(theta);
  }

 private:
  MarginalValue gaussian(const VectorXd& theta) const {
    const auto& layout = model_->layout;
    const auto& f = *frame_;
    const int nb = layout.n_beta();
    const VectorXd beta = theta.head(nb);
    const VectorXd r = y_ - f.x * beta;
    const auto n = static_cast<double>(y_.size());
    MarginalValue out;
    out.gradient = VectorXd::Zero(theta.size());
    if (f.q() == 0) {
      if (model_->spec.family == Family::normal) {
        const double s2 = model_->spec.psi * model_->spec.psi;
        out.value = -0.5 * (n * std::log(2.0 * std::numbers::pi * s2) + r.squaredNorm() / s2);
        out.gradient.head(nb) = f.x.transpose() * r / s2;
      } else {
        const VectorXd eta = f.x * beta;
        out.value = family::loglik(model_->spec, y_, eta);
        out.gradient.head(nb) = f.x.transpose() * family::score(model_->spec, y_, eta);
      }
      return out;
    }
    const double s2 = model_->spec.psi * model_->spec.psi;
    const VectorXd tau = layout.tau(theta);
    const VectorXd d = f.alpha_precision(tau);
    MatrixXd m = ztz_ / s2;
    m.diagonal() += d;
    const auto llt = linalg::checked_llt(m, ErrorKind::NumericalSingularity, "marginal precision");
    const VectorXd b = f.z_alpha.transpose() * r / s2;
    const VectorXd c = llt.solve(b);
    const double log_det_sigma = n * std::log(s2) + linalg::log_det(llt) - d.array().log().sum();
    const double quad = r.squaredNorm() / s2 - b.dot(c);
    out.value = -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det_sigma + quad);
    const VectorXd a = (r - f.z_alpha * c) / s2;
    out.gradient.head(nb) = f.x.transpose() * a;
    const MatrixXd m_inv = linalg::inverse_from_llt(llt);
    VectorXd dl_dd(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      dl_dd(i) = 0.5 * (1.0 / d(i) - m_inv(i, i)) - 0.5 * c(i) * c(i);
    }
    accumulate_tau_gradient(tau, d.cwiseProduct(dl_dd), out.gradient);
    return out;
  }

  /// When every alpha_i has precision c_i exp(tau_v) for a single variance v,
  /// Z alpha = sum_v exp(-tau_v / 2) Z_v C_v^{-1/2} Xi_v, and the n x E
  /// products Z_v C_v^{-1/2} Xi_v do not depend on theta.
  void build_variance_blocks() {
    const auto& w = frame_->precision_weights;
    if (w.rows() == 0) return;
    std::vector<Eigen::Index> owner(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      int nonzero = 0;
      for (Eigen::Index v = 0; v < w.cols(); ++v) {
        if (w(i, v) != 0.0) {
          ++nonzero;
          owner[static_cast<std::size_t>(i)] = v;
        }
      }
      if (nonzero != 1 || !(w(i, owner[static_cast<std::size_t>(i)]) > 0.0)) return;
    }
    blocks_.assign(static_cast<std::size_t>(w.cols()), MatrixXd::Zero(frame_->n(), xi_.cols()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      const auto v = owner[static_cast<std::size_t>(i)];
      blocks_[static_cast<std::size_t>(v)].noalias() +=
          frame_->z_alpha.col(i) * (xi_.row(i) / std::sqrt(w(i, v)));
    }
  }

  MarginalValue monte_carlo(const VectorXd& theta) const {
    const auto& layout = model_->layout;
    const auto& f = *frame_;
    const int nb = layout.n_beta();
    const VectorXd beta = theta.head(nb);
    const VectorXd tau = layout.tau(theta);
    if (!blocks_.empty()) return monte_carlo_blocked(beta, tau, theta.size());
    const VectorXd d = f.alpha_precision(tau);
    const MatrixXd alpha = d.cwiseSqrt().cwiseInverse().asDiagonal() * xi_;  // q x E
    MatrixXd eta = f.z_alpha * alpha;                                          // n x E
    eta.colwise() += f.x * beta;
    const auto e_count = alpha.cols();
    VectorXd ll(e_count);
    for (Eigen::Index e = 0; e < e_count; ++e) ll(e) = family::loglik(model_->spec, y_, eta.col(e));
    const double top = ll.maxCoeff();
    if (!std::isfinite(top)) {
      fail(ErrorKind::LikelihoodUnderflow, "every Monte Carlo draw has zero likelihood");
    }
    const VectorXd w_raw = (ll.array() - top).exp();
    const double total = w_raw.sum();
    MarginalValue out;
    out.value = top + std::log(total) - std::log(static_cast<double>(e_count));
    const VectorXd w = w_raw / total;
    MatrixXd scores(eta.rows(), e_count);
    for (Eigen::Index e = 0; e < e_count; ++e) scores.col(e) = family::score(model_->spec, y_, eta.col(e));
    out.gradient = VectorXd::Zero(theta.size());
    out.gradient.head(nb) = f.x.transpose() * (scores * w);
    if (f.q() > 0) {
      // d alpha_i / d log d_i = -alpha_i / 2
      const MatrixXd zs = f.z_alpha.transpose() * scores;  // q x E
      const VectorXd per_alpha = -0.5 * (zs.cwiseProduct(alpha) * w);
      accumulate_tau_gradient(tau, per_alpha, out.gradient);
    }
    return out;
  }

  MarginalValue monte_carlo_blocked(const VectorXd& beta, const VectorXd& tau, Eigen::Index dim) const {
    const auto& f = *frame_;
    MatrixXd eta = MatrixXd::Zero(f.n(), xi_.cols());
    eta.colwise() += f.x * beta;
    for (std::size_t v = 0; v < blocks_.size(); ++v) {
      eta.noalias() += std::exp(-0.5 * tau(static_cast<Eigen::Index>(v))) * blocks_[v];
    }
    const auto e_count = eta.cols();
    VectorXd ll(e_count);
    MatrixXd scores(eta.rows(), e_count);
    for (Eigen::Index e = 0; e < e_count; ++e) {
      ll(e) = family::loglik_kernel(model_->spec, y_, eta.col(e), scores.col(e));
    }
    const double top = ll.maxCoeff();
    if (!std::isfinite(top)) {
      fail(ErrorKind::LikelihoodUnderflow, "every Monte Carlo draw has zero likelihood");
    }
    const VectorXd w_raw = (ll.array() - top).exp();
    const double total = w_raw.sum();
    MarginalValue out;
    out.value = loglik_constant_ + top + std::log(total) - std::log(static_cast<double>(e_count));
    const VectorXd w = w_raw / total;
    out.gradient = VectorXd::Zero(dim);
    out.gradient.head(beta.size()) = f.x.transpose() * (scores * w);
    const auto& vars = model_->layout.variances;
    for (std::size_t v = 0; v < vars.size(); ++v) {
      if (!vars[v].estimated) continue;
      const VectorXd per_draw = (scores.cwiseProduct(blocks_[v])).colwise().sum().transpose();
      out.gradient(vars[v].theta_index) +=
          -0.5 * std::exp(-0.5 * tau(static_cast<Eigen::Index>(v))) * per_draw.dot(w);
    }
    return out;
  }

  /// Chain rule from d loglik / d log d_i to the estimated log precisions.
  void accumulate_tau_gradient(const VectorXd& tau, const VectorXd& dl_dlogd,
                               VectorXd& gradient) const {
    const MatrixXd dlog = frame_->dlog_precision(tau);
    const VectorXd by_var = dlog.transpose() * dl_dlogd;
    const auto& vars = model_->layout.variances;
    for (std::size_t v = 0; v < vars.size(); ++v) {
      if (vars[v].estimated) gradient(vars[v].theta_index) += by_var(static_cast<Eigen::Index>(v));
    }
  }

  const Model* model_;
  const ModelFrame* frame_;
  VectorXd y_;
  bool exact_ = false;
  MatrixXd ztz_;
  MatrixXd xi_;
  std::vector<MatrixXd> blocks_;
  double loglik_constant_ = 0.0;
};

/// Convenience wrapper: log p(y | theta) for a single theta.
inline double marginal_loglik(const Model& model, const ModelFrame& frame, const VectorXd& theta,
                              const VectorXd& y, int e_draws, std::uint64_t seed,
                              MarginalMethod method = MarginalMethod::automatic) {
  const MarginalLikelihood ml(model, frame, y, {method, e_draws}, Rng(seed).split("inner"));
  return ml(theta).value;
}

struct FitOptions {
  int max_iter = 200;
  double grad_tol = 1e-5;
  double fd_step = 1e-4;
  double min_eigenvalue = 1e-8;
  MarginalOptions marginal;
};

struct ThetaFit {
  VectorXd theta;
  MatrixXd hessian;
  double log_joint = 0.0;  ///< log p(y | theta*) + log p(theta*)
  double loglik = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
  bool ridged = false;
  int iterations = 0;
};

struct AlphaFit {
  VectorXd alpha;
  MatrixXd hessian;
  bool converged = false;
  bool ridged = false;
  int iterations = 0;
};

namespace detail {

/// Gaussian log prior on theta with gradient.
class LogPrior {
 public:
  explicit LogPrior(const GaussianDist& prior)
      : mean_(prior.mean),
        llt_(linalg::checked_llt(prior.cov, ErrorKind::NotPositiveDefinite, "theta prior")) {
    const auto t = static_cast<double>(prior.dim());
    constant_ = -0.5 * (t * std::log(2.0 * std::numbers::pi) + linalg::log_det(llt_));
  }

  double value(const VectorXd& theta, VectorXd* gradient) const {
    const VectorXd r = theta - mean_;
    const VectorXd s = llt_.solve(r);
    if (gradient) *gradient = -s;
    return constant_ - 0.5 * r.dot(s);
  }

  const VectorXd& mean() const { return mean_; }
  MatrixXd precision() const { return linalg::inverse_from_llt(llt_); }

 private:
  VectorXd mean_;
  Eigen::LLT<MatrixXd> llt_;
  double constant_ = 0.0;
};

/// Negative log joint and its gradient.
struct ThetaObjective {
  const MarginalLikelihood& marginal;
  const LogPrior& prior;

  double operator()(const VectorXd& theta, VectorXd& gradient) const {
    VectorXd gp;
    const double lp = prior.value(theta, &gp);
    MarginalValue ml;
    try {
      ml = marginal(theta);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::LikelihoodUnderflow) throw;
      gradient = VectorXd::Zero(theta.size());
      return std::numeric_limits<double>::infinity();
    }
    gradient = -(ml.gradient + gp);
    const double v = -(ml.value + lp);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  }
};

inline MatrixXd fd_hessian(const ThetaObjective& obj, const VectorXd& theta, double step) {
  const auto t = theta.size();
  MatrixXd h(t, t);
  VectorXd gp, gm;
  for (Eigen::Index j = 0; j < t; ++j) {
    const double hj = step * std::max(1.0, std::abs(theta(j)));
    VectorXd tp = theta, tm = theta;
    tp(j) += hj;
    tm(j) -= hj;
    obj(tp, gp);
    obj(tm, gm);
    h.col(j) = (gp - gm) / (2.0 * hj);
  }
  return linalg::symmetrize(h);
}

/// Raise the smallest eigenvalue of a symmetric matrix to `floor`.
inline bool ridge_to(MatrixXd& m, double floor) {
  if (m.rows() == 0) return false;
  const double lo = linalg::min_eigenvalue(m);
  if (lo >= floor && std::isfinite(lo)) return false;
  m.diagonal().array() += (floor - lo);
  return true;
}

}  // namespace detail

/// theta* = argmax {log p(y | theta) + log p(theta)} by BFGS with Armijo
/// backtracking from the prior mean, polished with Newton steps on the
/// finite-difference Hessian of the analytic gradient.
inline ThetaFit fit_theta(const MarginalLikelihood& marginal, const GaussianDist& theta_prior,
                          const FitOptions& opts = {}) {
  const detail::LogPrior prior(theta_prior);
  const detail::ThetaObjective obj{marginal, prior};
  const auto t = theta_prior.dim();
  ThetaFit fit;
  VectorXd x = theta_prior.mean;
  VectorXd g;
  double fx = obj(x, g);
  require(std::isfinite(fx), ErrorKind::EstimationFailed, "objective not finite at the prior mean");
  MatrixXd h_inv = theta_prior.cov;
  int it = 0;
  for (; it < opts.max_iter && g.lpNorm<Eigen::Infinity>() >= opts.grad_tol; ++it) {
    VectorXd dir = -h_inv * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      h_inv = MatrixXd::Identity(t, t);
      dir = -g;
      slope = g.dot(dir);
    }
    double step = 1.0;
    VectorXd xn, gn;
    double fn = 0.0;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      xn = x + step * dir;
      fn = obj(xn, gn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || !(fn < fx)) break;
    const VectorXd s = xn - x;
    const VectorXd yv = gn - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      const MatrixXd i_rsy = MatrixXd::Identity(t, t) - rho * s * yv.transpose();
      h_inv = i_rsy * h_inv * i_rsy.transpose() + rho * s * s.transpose();
    }
    x = xn;
    g = gn;
    fx = fn;
  }
  MatrixXd hess = detail::fd_hessian(obj, x, opts.fd_step);
  // Newton polish: exact in one step when the objective is quadratic.
  for (int k = 0; k < 5 && g.lpNorm<Eigen::Infinity>() >= 1e-3 * opts.grad_tol; ++k) {
    Eigen::LLT<MatrixXd> llt(hess);
    if (llt.info() != Eigen::Success) break;
    const VectorXd dir = -llt.solve(g);
    double step = 1.0;
    bool improved = false;
    for (int j = 0; j < 30; ++j) {
      VectorXd gn;
      const VectorXd xn = x + step * dir;
      const double fn = obj(xn, gn);
      if (std::isfinite(fn) && fn <= fx + 1e-12 * std::abs(fx) &&
          gn.lpNorm<Eigen::Infinity>() < g.lpNorm<Eigen::Infinity>()) {
        x = xn;
        g = gn;
        fx = fn;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    ++it;
    if (!improved) break;
    hess = detail::fd_hessian(obj, x, opts.fd_step);
  }
  fit.theta = x;
  fit.iterations = it;
  fit.grad_norm = g.lpNorm<Eigen::Infinity>();
  fit.converged = fit.grad_norm < opts.grad_tol;
  fit.ridged = detail::ridge_to(hess, opts.min_eigenvalue);
  fit.hessian = hess;
  fit.log_joint = -fx;
  fit.loglik = marginal(x).value;
  return fit;
}

/// alpha* = argmax {log p(y | beta*, alpha) + log p(alpha | gamma*)} by damped
/// Newton; the Hessian returned is the analytic negative Hessian at alpha*.
inline AlphaFit fit_alpha(const Model& model, const ModelFrame& frame, const VectorXd& theta_star,
                          const VectorXd& y, const FitOptions& opts = {}) {
  require(theta_star.allFinite(), ErrorKind::EstimationFailed, "theta* is not finite");
  const VectorXd beta = theta_star.head(model.layout.n_beta());
  const VectorXd d = frame.alpha_precision(model.layout.tau(theta_star));
  const auto q = frame.q();
  AlphaFit fit;
  fit.alpha = VectorXd::Zero(q);
  if (q == 0) {
    fit.hessian = MatrixXd(0, 0);
    fit.converged = true;
    return fit;
  }
  const auto& spec = model.spec;
  const VectorXd base = frame.x * beta;
  auto objective = [&](const VectorXd& a) {
    const VectorXd eta = base + frame.z_alpha * a;
    return family::loglik(spec, y, eta) - 0.5 * a.dot(d.cwiseProduct(a));
  };
  auto neg_hessian = [&](const VectorXd& weights) {
    MatrixXd h = frame.z_alpha.transpose() * weights.asDiagonal() * frame.z_alpha;
    h.diagonal() += d;
    return linalg::symmetrize(h);
  };
  double f = objective(fit.alpha);
  int it = 0;
  for (; it < 100; ++it) {
    const VectorXd eta = base + frame.z_alpha * fit.alpha;
    const VectorXd grad = frame.z_alpha.transpose() * family::score(spec, y, eta) -
                          d.cwiseProduct(fit.alpha);
    const double scale = 1.0 + d.cwiseProduct(fit.alpha).lpNorm<Eigen::Infinity>();
    if (grad.lpNorm<Eigen::Infinity>() < 1e-9 * scale) {
      fit.converged = true;
      break;
    }
    MatrixXd h = neg_hessian(family::curvature(spec, y, eta));
    Eigen::LLT<MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) {
      h = neg_hessian(family::fisher_weights(spec, eta));
      llt.compute(h);
      if (llt.info() != Eigen::Success) break;
    }
    const VectorXd dir = llt.solve(grad);
    // Newton decrement: twice the predicted gain of a full step.
    const double decrement = grad.dot(dir);
    const double f_scale = 1.0 + std::abs(f);
    if (decrement < 1e-15 * f_scale) {
      fit.converged = true;
      break;
    }
    double step = 1.0;
    bool improved = false;
    for (int k = 0; k < 40; ++k) {
      const VectorXd an = fit.alpha + step * dir;
      const double fn = objective(an);
      if (std::isfinite(fn) && fn >= f) {
        improved = fn > f;
        fit.alpha = an;
        f = fn;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      // No measurable ascent left: the remaining gain is at rounding level.
      fit.converged = grad.lpNorm<Eigen::Infinity>() < 1e-5 * scale || decrement < 1e-9 * f_scale;
      break;
    }
  }
  fit.iterations = it;
  const VectorXd eta = base + frame.z_alpha * fit.alpha;
  MatrixXd h = neg_hessian(family::curvature(spec, y, eta));
  fit.ridged = detail::ridge_to(h, opts.min_eigenvalue);
  fit.hessian = h;
  return fit;
}

struct LaplaceFit {
  VectorXd theta_star;
  MatrixXd theta_hessian;
  VectorXd alpha_star;
  MatrixXd alpha_hessian;
  double log_evidence = std::numeric_limits<double>::quiet_NaN();
  double log_joint = 0.0;
  bool converged = false;
  bool ridged = false;
  int iterations = 0;
  std::vector<std::string> theta_labels;
  std::vector<std::string> alpha_labels;

  /// Joint Laplace posterior with block-diagonal covariance.
  GaussianDist posterior() const {
    std::vector<std::string> labels = theta_labels;
    labels.insert(labels.end(), alpha_labels.begin(), alpha_labels.end());
    const auto th = linalg::checked_llt(theta_hessian, ErrorKind::NotPositiveDefinite, "B(theta*)");
    MatrixXd cov_a(0, 0);
    if (alpha_hessian.rows() > 0) {
      cov_a = linalg::inverse_from_llt(
          linalg::checked_llt(alpha_hessian, ErrorKind::NotPositiveDefinite, "H(alpha*)"));
    }
    return {linalg::concat(theta_star, alpha_star),
            linalg::block_diagonal(linalg::inverse_from_llt(th), cov_a), labels};
  }
};

/// log p(y|theta*) + log p(theta*) + (T/2) log 2 pi - 1/2 log |B(theta*)|.
inline double log_evidence(const LaplaceFit& fit) {
  require(fit.converged, ErrorKind::EvidenceUndefined, "Laplace fit did not converge");
  Eigen::LLT<MatrixXd> llt(fit.theta_hessian);
  if (llt.info() != Eigen::Success || linalg::min_eigenvalue(fit.theta_hessian) <= 0.0) {
    fail(ErrorKind::EvidenceUndefined, "B(theta*) is not positive definite");
  }
  const auto t = static_cast<double>(fit.theta_star.size());
  return fit.log_joint + 0.5 * t * std::log(2.0 * std::numbers::pi) - 0.5 * linalg::log_det(llt);
}

/// Both Laplace stages plus the evidence. `crn` seeds the inner Monte Carlo.
inline LaplaceFit laplace_fit(const Model& model, const ModelFrame& frame,
                              const GaussianDist& theta_prior, const VectorXd& y,
                              const FitOptions& opts, Rng crn) {
  const MarginalLikelihood marginal(model, frame, y, opts.marginal, crn);
  const auto tf = fit_theta(marginal, theta_prior, opts);
  const auto af = fit_alpha(model, frame, tf.theta, y, opts);
  LaplaceFit fit;
  fit.theta_star = tf.theta;
  fit.theta_hessian = tf.hessian;
  fit.alpha_star = af.alpha;
  fit.alpha_hessian = af.hessian;
  fit.log_joint = tf.log_joint;
  fit.converged = tf.converged && af.converged;
  fit.ridged = tf.ridged || af.ridged;
  fit.iterations = tf.iterations + af.iterations;
  fit.theta_labels = model.layout.theta_labels;
  fit.alpha_labels = frame.alpha_labels;
  if (fit.converged && !tf.ridged) fit.log_evidence = log_evidence(fit);
  return fit;
}

/// Posterior model probabilities from log evidences and prior probabilities.
inline VectorXd posterior_model_probs(const VectorXd& log_evidences, const VectorXd& prior_probs) {
  require(log_evidences.size() == prior_probs.size() && log_evidences.size() > 0,
          ErrorKind::ShapeMismatch, "evidence and prior vectors must match and be non-empty");
  require(std::abs(prior_probs.sum() - 1.0) < 1e-9 && (prior_probs.array() >= 0).all(),
          ErrorKind::InvalidParameter, "prior model probabilities must sum to 1");
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < log_evidences.size(); ++j) {
    if (prior_probs(j) > 0) top = std::max(top, log_evidences(j));
  }
  require(std::isfinite(top), ErrorKind::EvidenceUndefined, "no model has finite evidence");
  VectorXd p(log_evidences.size());
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    p(j) = prior_probs(j) > 0 ? prior_probs(j) * std::exp(log_evidences(j) - top) : 0.0;
  }
  return p / p.sum();
}

/// Fit a model to pilot data under a vague prior and return the joint Laplace
/// posterior over (theta, alpha), the starting point for a design prior.
inline GaussianDist fit_pilot(const Model& model, const Design& pilot, const VectorXd& y,
                              const GaussianDist& vague_prior, const FitOptions& opts, Rng crn) {
  require(pilot.rows() > 0 && y.size() > 0, ErrorKind::InvalidParameter, "pilot data is empty");
  const auto frame = model.frame(pilot);
  const auto prior = vague_prior.marginal(model.layout.theta_labels);
  const auto fit = laplace_fit(model, frame, prior, y, opts, crn);
  require(fit.converged, ErrorKind::EstimationFailed, "pilot fit did not converge");
  return fit.posterior();
}

}  // namespace robustdesign
