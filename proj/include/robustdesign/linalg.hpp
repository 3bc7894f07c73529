#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "robustdesign/errors.hpp"

namespace robustdesign {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace linalg {

inline bool is_symmetric(const MatrixXd& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// Cholesky factor or an Error of the given kind.
inline Eigen::LLT<MatrixXd> checked_llt(const MatrixXd& m, ErrorKind kind,
                                        const std::string& what) {
  require(m.rows() == m.cols(), ErrorKind::ShapeMismatch, what + " is not square");
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) fail(kind, what + " is not positive definite");
  const auto diag = llt.matrixLLT().diagonal();
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > 0.0) || !std::isfinite(diag(i))) {
      fail(kind, what + " is not positive definite");
    }
  }
  return llt;
}

inline double log_det(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline MatrixXd inverse_from_llt(const Eigen::LLT<MatrixXd>& llt) {
  const auto n = llt.matrixLLT().rows();
  return symmetrize(llt.solve(MatrixXd::Identity(n, n)));
}

inline double min_eigenvalue(const MatrixXd& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

/// Symmetric square root L with L L^T = m for positive semi-definite m.
/// Used for sampling, where point-mass (zero-variance) priors are legal.
inline MatrixXd psd_factor(const MatrixXd& m) {
  if (m.rows() == 0) return MatrixXd(0, 0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  require(es.eigenvalues()(0) >= -1e-10 * scale, ErrorKind::NotPositiveDefinite,
          "covariance has a negative eigenvalue");
  VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

inline MatrixXd block_diagonal(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out = MatrixXd::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

inline VectorXd concat(const VectorXd& a, const VectorXd& b) {
  VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace linalg
}  // namespace robustdesign
