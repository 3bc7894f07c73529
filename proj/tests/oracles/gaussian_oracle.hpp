#pragma once

// Test-only references: Gauss-Hermite rules, closed-form Gaussian evidence and
// random instances of the normal linear additive model.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "robustdesign/conjugate.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Nodes and weights for integrals against exp(-x^2) (Golub-Welsch).
struct HermiteRule {
  VectorXd nodes;
  VectorXd weights;
};

inline HermiteRule gauss_hermite(int m) {
  MatrixXd j = MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(j);
  HermiteRule r;
  r.nodes = es.eigenvalues();
  r.weights = std::sqrt(std::numbers::pi) * es.eigenvectors().row(0).transpose().array().square();
  return r;
}

/// log N(y; Q mu0, sigma^2 I + Q Omega0 Q^T), by dense Cholesky.
inline double gaussian_log_evidence(const MatrixXd& q, const VectorXd& y, const VectorXd& mu0,
                                    const MatrixXd& omega0, double sigma) {
  const auto n = y.size();
  MatrixXd cov = q * omega0 * q.transpose();
  cov.diagonal().array() += sigma * sigma;
  Eigen::LLT<MatrixXd> llt(cov);
  const VectorXd r = llt.matrixL().solve(y - q * mu0);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + r.squaredNorm());
}

/// A random normal linear additive instance: one smooth with fixed sigma_u,
/// beta ~ N(mu_beta, diag(sd_beta^2)).
struct ConjugateInstance {
  robustdesign::IllustrativeExample example;
  robustdesign::Model model;
  robustdesign::Design design;
  robustdesign::ModelFrame frame;
  robustdesign::GaussianDist beta_prior;
  VectorXd y;
  MatrixXd q;
  VectorXd mu0;
  MatrixXd omega0;
};

inline ConjugateInstance random_conjugate_instance(std::uint64_t seed) {
  using namespace robustdesign;
  Rng rng = Rng(seed).split("instance");
  std::uniform_int_distribution<int> k_dist(3, 12);
  ConjugateInstance c;
  c.example.k = k_dist(rng);
  std::uniform_int_distribution<int> n_dist(c.example.k + 1, 24);
  const int n = n_dist(rng);
  c.example.sigma_u = std::exp(std::log(0.5) + uniform01(rng) * std::log(60.0));
  c.example.sigma_eps = 0.05 + uniform01(rng) * 1.5;
  c.model = c.example.model();
  std::vector<double> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = -1.0 + 2.0 * uniform01(rng);
  c.design = IllustrativeExample::points(x);
  c.frame = c.model.frame(c.design);
  NormalStream z(rng.split("z"));
  VectorXd mb(2), sb(2);
  for (int j = 0; j < 2; ++j) {
    mb(j) = 3.0 * z();
    sb(j) = 0.5 + 5.0 * uniform01(rng);
  }
  c.beta_prior = GaussianDist::diagonal(mb, sb, {"beta0", "beta_x"});
  c.q.resize(n, 2 + c.example.k);
  c.q << c.frame.x, c.frame.z_alpha;
  c.mu0 = VectorXd::Zero(2 + c.example.k);
  c.mu0.head(2) = mb;
  VectorXd v(2 + c.example.k);
  v << sb.array().square().matrix(), VectorXd::Constant(c.example.k, c.example.sigma_u * c.example.sigma_u);
  c.omega0 = v.asDiagonal();
  const auto draw = simulate_prior_predictive(c.model, c.frame, c.beta_prior, rng.split("data"));
  c.y = draw.y;
  return c;
}

struct SampledKld {
  double mean = 0.0;
  double se = 0.0;
};

/// E_post[log post(x) - log prior(x)] by plain sampling from post.
inline SampledKld sampled_kld(const robustdesign::GaussianDist& prior, const robustdesign::GaussianDist& post,
                              int m, robustdesign::Rng rng) {
  const auto t = post.dim();
  const Eigen::LLT<MatrixXd> l0(prior.cov), l1(post.cov);
  const MatrixXd f1 = l1.matrixL();
  const double c = 0.5 * (2.0 * l0.matrixLLT().diagonal().array().log().sum() -
                          2.0 * l1.matrixLLT().diagonal().array().log().sum());
  robustdesign::NormalStream z(rng);
  VectorXd e(t);
  double sum = 0.0, ss = 0.0;
  for (int i = 0; i < m; ++i) {
    for (auto& v : e) v = z();
    const VectorXd x = post.mean + f1 * e;
    const VectorXd r0 = l0.matrixL().solve(x - prior.mean);
    const double v = c - 0.5 * e.squaredNorm() + 0.5 * r0.squaredNorm();
    sum += v;
    ss += v * v;
  }
  SampledKld out;
  out.mean = sum / m;
  out.se = std::sqrt((ss / m - out.mean * out.mean) / (m - 1));
  return out;
}

}  // namespace oracle
