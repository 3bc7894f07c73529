#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "robustdesign/basis.hpp"
#include "robustdesign/errors.hpp"
#include "robustdesign/gamm.hpp"
#include "robustdesign/gaussian.hpp"
#include "robustdesign/linalg.hpp"
#include "robustdesign/rng.hpp"
#include "robustdesign/utility.hpp"

namespace robustdesign {

/// Closed-form posterior of the Gaussian linear additive model
/// y ~ N(Q theta, sigma^2 I), theta ~ N(mu0, Omega0).
inline GaussianDist conjugate_posterior(const MatrixXd& q, const VectorXd& y, const VectorXd& mu0,
                                        const MatrixXd& omega0, double sigma_eps) {
  require(sigma_eps > 0 && std::isfinite(sigma_eps), ErrorKind::InvalidParameter,
          "sigma_eps must be positive");
  require(q.cols() == mu0.size() && omega0.rows() == mu0.size() && q.rows() == y.size(),
          ErrorKind::ShapeMismatch, "conjugate posterior dimensions");
  const auto t = mu0.size();
  const auto l0 = linalg::checked_llt(omega0, ErrorKind::NumericalSingularity, "prior covariance");
  if (q.rows() == 0) return {mu0, omega0, {}};
  const MatrixXd prior_precision = linalg::inverse_from_llt(l0);
  const double w = 1.0 / (sigma_eps * sigma_eps);
  const MatrixXd precision = linalg::symmetrize(w * q.transpose() * q + prior_precision);
  const auto lp = linalg::checked_llt(precision, ErrorKind::NumericalSingularity, "posterior precision");
  const VectorXd rhs = w * q.transpose() * y + l0.solve(mu0);
  return {lp.solve(rhs), linalg::symmetrize(lp.solve(MatrixXd::Identity(t, t))), {}};
}

/// Per-draw expected KLD for the conjugate model with the observation noise
/// integrated analytically. Draw l uses theta_l = mu0 + L0 z_l where z_l is
/// row l of `normals`; only the mean-shift term varies between draws.
inline std::vector<double> conjugate_kld_draws(const MatrixXd& q, const VectorXd& mu0,
                                               const MatrixXd& omega0, double sigma_eps,
                                               const MatrixXd& normals) {
  const auto t = mu0.size();
  require(normals.cols() == t, ErrorKind::ShapeMismatch, "normal block width must equal dim");
  const auto l0 = linalg::checked_llt(omega0, ErrorKind::NumericalSingularity, "prior covariance");
  const double w = 1.0 / (sigma_eps * sigma_eps);
  const MatrixXd precision = linalg::symmetrize(w * q.transpose() * q + linalg::inverse_from_llt(l0));
  const auto lp = linalg::checked_llt(precision, ErrorKind::NumericalSingularity, "posterior precision");
  const MatrixXd omega1 = linalg::symmetrize(lp.solve(MatrixXd::Identity(t, t)));
  // mu1 - mu0 = A (y - Q mu0)
  const MatrixXd a = w * omega1 * q.transpose();
  const MatrixXd l0_inv_a = l0.matrixL().solve(a);
  const double trace = l0.matrixL().solve(MatrixXd(lp.matrixU().solve(MatrixXd::Identity(t, t))))
                           .squaredNorm();
  const double constant = 0.5 * (trace - static_cast<double>(t) + linalg::log_det(l0) +
                                 linalg::log_det(lp)) +
                          0.5 * sigma_eps * sigma_eps * l0_inv_a.squaredNorm();
  const MatrixXd shift = l0_inv_a * q * MatrixXd(l0.matrixL());  // maps z to L0^-1 (mu1 - mu0)
  std::vector<double> out(static_cast<std::size_t>(normals.rows()));
  for (Eigen::Index l = 0; l < normals.rows(); ++l) {
    out[static_cast<std::size_t>(l)] = constant + 0.5 * (shift * normals.row(l).transpose()).squaredNorm();
  }
  return out;
}

inline MatrixXd standard_normals(Rng rng, Eigen::Index rows, Eigen::Index cols) {
  NormalStream normal(rng);
  MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = normal();
  }
  return out;
}

/// Equally spaced replicated designs on [-1, 1]: 2, 3, 4, 6, 12 (and 24 when
/// n = 24) unique points, each repeated to fill n runs. Index 1 is (-1, 1)
/// replicated, the last index is n distinct points.
inline std::vector<std::vector<double>> corollary_designs(int n) {
  require(n == 12 || n == 24, ErrorKind::InvalidParameter, "corollary designs exist for n = 12, 24");
  std::vector<int> unique{2, 3, 4, 6, 12};
  if (n == 24) unique.push_back(24);
  std::vector<std::vector<double>> out;
  for (int u : unique) {
    std::vector<double> d;
    for (int rep = 0; rep < n / u; ++rep) {
      for (int i = 0; i < u; ++i) d.push_back(-1.0 + 2.0 * i / (u - 1));
    }
    out.push_back(d);
  }
  return out;
}

/// The single-covariate linear additive model y ~ N(X beta + Z u, sigma_eps^2)
/// with beta_j ~ N(0, 10^2), u ~ N(0, sigma_u^2), covariate on [-1, 1].
struct IllustrativeExample {
  int k = 6;
  double sigma_u = 10.0;
  double sigma_eps = 0.5;
  double beta_sd = 10.0;
  double lower = -1.0;
  double upper = 1.0;
  int reference_points = 101;

  GammSpec spec() const {
    GammSpec s;
    s.family = Family::normal;
    s.link = Link::identity;
    s.psi = sigma_eps;
    s.smooths = {{"x", k}};
    s.fixed["log_prec_u_x"] = -2.0 * std::log(sigma_u);
    return s;
  }

  Design reference() const {
    std::vector<double> x(static_cast<std::size_t>(reference_points));
    for (int i = 0; i < reference_points; ++i) {
      x[static_cast<std::size_t>(i)] = lower + (upper - lower) * i / (reference_points - 1);
    }
    return points(x);
  }

  static Design points(const std::vector<double>& x) {
    Design d;
    d.covariates = {"x"};
    d.values = Eigen::Map<const VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return d;
  }

  GaussianDist prior() const {
    return GaussianDist::diagonal(VectorXd::Zero(2), VectorXd::Constant(2, beta_sd),
                                  {"beta0", "beta_x"});
  }

  Model model() const {
    const auto s = spec();
    return Model::make(s, ModelBasis::fit(s, reference()), prior().labels);
  }

  /// Q = [X Z] and the joint prior of (beta, u) for the conjugate form.
  MatrixXd q_matrix(const Model& m, const std::vector<double>& x) const {
    const auto b = m.basis.bundle(m.spec, points(x));
    MatrixXd q(b.x_cols.rows(), b.x_cols.cols() + b.z_cols.cols());
    q << b.x_cols, b.z_cols;
    return q;
  }

  MatrixXd joint_prior_cov() const {
    VectorXd v(2 + k);
    v << beta_sd * beta_sd, beta_sd * beta_sd, VectorXd::Constant(k, sigma_u * sigma_u);
    return v.asDiagonal();
  }
};

struct CorollaryRow {
  int n = 0;
  int design_index = 0;  ///< 1-based, as in the design tables
  double sigma_u = 0.0;
  int k = 0;
  double sigma_eps = 0.0;
  double expected_kld = 0.0;
  double mc_se = 0.0;
  int rank = 0;  ///< 1 = highest expected KLD within the parameter combination
  std::vector<double> per_draw;
};

struct CorollaryOptions {
  std::vector<double> sigma_u_grid{1.0, 10.0, 30.0};
  std::vector<int> k_grid{3, 6, 12};
  std::vector<double> sigma_eps_grid{0.1, 1.0};
  std::vector<int> n_grid{12, 24};
  int l_draws = 1000;
  std::uint64_t seed = 0;
};

/// Expected KLD of every tabulated design for each parameter combination.
/// Designs within a combination share their random numbers, so differences
/// between designs are paired.
inline std::vector<CorollaryRow> corollary_study(const CorollaryOptions& opts) {
  require(opts.l_draws >= 2, ErrorKind::InvalidParameter, "l_draws must be at least 2");
  std::vector<CorollaryRow> rows;
  const Rng master = Rng(opts.seed).split("corollary");
  for (int n : opts.n_grid) {
    const auto designs = corollary_designs(n);
    for (int k : opts.k_grid) {
      IllustrativeExample ex;
      ex.k = k;
      const Model model = ex.model();
      std::vector<MatrixXd> qs;
      for (const auto& d : designs) {
        auto sorted = d;
        std::sort(sorted.begin(), sorted.end());
        qs.push_back(ex.q_matrix(model, sorted));
      }
      for (double se : opts.sigma_eps_grid) {
        for (double su : opts.sigma_u_grid) {
          require(se > 0 && su > 0, ErrorKind::InvalidParameter, "grid values must be positive");
          ex.sigma_u = su;
          ex.sigma_eps = se;
          const Rng combo = master.split("n" + std::to_string(n) + "k" + std::to_string(k));
          const MatrixXd z = standard_normals(combo.split("theta"), opts.l_draws, 2 + k);
          const MatrixXd omega0 = ex.joint_prior_cov();
          const auto first = rows.size();
          for (std::size_t j = 0; j < designs.size(); ++j) {
            CorollaryRow row;
            row.n = n;
            row.design_index = static_cast<int>(j) + 1;
            row.sigma_u = su;
            row.k = k;
            row.sigma_eps = se;
            row.per_draw = conjugate_kld_draws(qs[j], VectorXd::Zero(2 + k), omega0, se, z);
            UtilityEstimate est;
            est.l_draws = opts.l_draws;
            est.per_draw = row.per_draw;
            detail::summarize(est);
            row.expected_kld = est.value;
            row.mc_se = est.mc_se;
            rows.push_back(std::move(row));
          }
          for (auto i = first; i < rows.size(); ++i) {
            rows[i].rank = 1;
            for (auto j = first; j < rows.size(); ++j) {
              if (rows[j].expected_kld > rows[i].expected_kld) ++rows[i].rank;
            }
          }
        }
      }
    }
  }
  return rows;
}

/// Polynomial regression of the given degree in t = (x - lower) / (upper - lower)
/// with independent N(0, prior_sd^2) coefficients: the reference problems
/// against which design efficiency is measured.
struct PolynomialReference {
  int degree = 1;
  double prior_sd = 10.0;
  double sigma_eps = 1.0;
  double lower = -1.0;
  double upper = 1.0;

  MatrixXd q_matrix(const std::vector<double>& x) const {
    require(degree >= 0, ErrorKind::InvalidParameter, "polynomial degree must be non-negative");
    MatrixXd q(static_cast<Eigen::Index>(x.size()), degree + 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double t = (x[i] - lower) / (upper - lower);
      require(t >= -1e-12 && t <= 1.0 + 1e-12, ErrorKind::OutOfRange, "design point outside the reference range");
      double p = 1.0;
      for (int j = 0; j <= degree; ++j) {
        q(static_cast<Eigen::Index>(i), j) = p;
        p *= t;
      }
    }
    return q;
  }

  /// Expected KLD with the noise integrated analytically and the coefficient
  /// draws shared by every design evaluated with the same seed.
  UtilityEstimate expected_utility(const std::vector<double>& x, int l_draws, std::uint64_t seed) const {
    require(l_draws >= 1, ErrorKind::InvalidParameter, "l_draws must be at least 1");
    const auto t = degree + 1;
    const MatrixXd z = standard_normals(Rng(seed).split("polynomial").split(static_cast<std::uint64_t>(degree)),
                                        l_draws, t);
    const MatrixXd omega0 = MatrixXd::Identity(t, t) * prior_sd * prior_sd;
    UtilityEstimate est;
    est.l_draws = l_draws;
    est.seed = seed;
    est.per_draw = conjugate_kld_draws(q_matrix(x), VectorXd::Zero(t), omega0, sigma_eps, z);
    detail::summarize(est);
    return est;
  }
};

}  // namespace robustdesign
