#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "robustdesign/errors.hpp"
#include "robustdesign/linalg.hpp"
#include "robustdesign/rng.hpp"

namespace robustdesign {

/// Labelled multivariate normal. Covariance may be singular (point masses are
/// legal for simulation); densities and KLD need it positive definite.
struct GaussianDist {
  VectorXd mean;
  MatrixXd cov;
  std::vector<std::string> labels;

  GaussianDist() = default;
  GaussianDist(VectorXd m, MatrixXd c, std::vector<std::string> l)
      : mean(std::move(m)), cov(std::move(c)), labels(std::move(l)) {
    validate();
  }

  static GaussianDist diagonal(const VectorXd& m, const VectorXd& sd,
                               std::vector<std::string> labels) {
    require(m.size() == sd.size(), ErrorKind::ShapeMismatch, "mean and sd lengths differ");
    return {m, sd.array().square().matrix().asDiagonal(), std::move(labels)};
  }

  Eigen::Index dim() const { return mean.size(); }

  void validate() const {
    require(cov.rows() == mean.size() && cov.cols() == mean.size(), ErrorKind::ShapeMismatch,
            "covariance does not match mean length");
    require(labels.empty() || labels.size() == static_cast<std::size_t>(mean.size()),
            ErrorKind::ShapeMismatch, "label count does not match mean length");
    require(linalg::is_symmetric(cov, 1e-10), ErrorKind::NotPositiveDefinite,
            "covariance is not symmetric");
    require(mean.allFinite() && cov.allFinite(), ErrorKind::InvalidParameter,
            "non-finite Gaussian parameters");
  }

  int index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) return static_cast<int>(i);
    }
    return -1;
  }

  bool has(const std::string& label) const { return index_of(label) >= 0; }

  /// Marginal over the named coordinates, in the order given.
  GaussianDist marginal(const std::vector<std::string>& names) const {
    const auto n = static_cast<Eigen::Index>(names.size());
    std::vector<int> idx;
    for (const auto& name : names) {
      const int i = index_of(name);
      require(i >= 0, ErrorKind::InvalidSpec, "prior has no parameter '" + name + "'");
      idx.push_back(i);
    }
    VectorXd m(n);
    MatrixXd c(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      m(a) = mean(idx[a]);
      for (Eigen::Index b = 0; b < n; ++b) c(a, b) = cov(idx[a], idx[b]);
    }
    return {m, c, names};
  }

  VectorXd sample(Rng& rng) const {
    std::normal_distribution<double> normal;
    VectorXd z(dim());
    for (auto& v : z) v = normal(rng);
    return mean + linalg::psd_factor(cov) * z;
  }

  double log_density(const VectorXd& x) const {
    const auto llt = linalg::checked_llt(cov, ErrorKind::NotPositiveDefinite, "covariance");
    const VectorXd r = llt.matrixL().solve(x - mean);
    return -0.5 * (static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) +
                   linalg::log_det(llt) + r.squaredNorm());
  }
};

}  // namespace robustdesign
