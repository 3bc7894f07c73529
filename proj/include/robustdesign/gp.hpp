#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "robustdesign/errors.hpp"
#include "robustdesign/linalg.hpp"

namespace robustdesign {

/// One-dimensional Gaussian-process emulator: constant mean, squared
/// exponential kernel and a nugget. Inputs are mapped to [0, 1] and outputs
/// standardised before fitting; length-scale and nugget maximise the profile
/// likelihood over a fixed grid, so fitting is deterministic.
class Gp1d {
 public:
  static std::optional<Gp1d> fit(const std::vector<double>& x, const std::vector<double>& f, double lower,
                                 double upper) {
    require(x.size() == f.size(), ErrorKind::ShapeMismatch, "GP inputs and outputs differ in length");
    require(upper > lower, ErrorKind::InvalidParameter, "GP interval is empty");
    const auto n = static_cast<Eigen::Index>(x.size());
    if (n < 3) return std::nullopt;
    Gp1d gp;
    gp.lower_ = lower;
    gp.upper_ = upper;
    gp.x_.resize(n);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      gp.x_(i) = (x[static_cast<std::size_t>(i)] - lower) / (upper - lower);
      y(i) = f[static_cast<std::size_t>(i)];
    }
    gp.f_mean_ = y.mean();
    gp.f_scale_ = std::sqrt((y.array() - gp.f_mean_).square().sum() / std::max<Eigen::Index>(1, n - 1));
    if (!(gp.f_scale_ > 0.0) || !std::isfinite(gp.f_scale_)) return std::nullopt;
    const VectorXd ys = (y.array() - gp.f_mean_) / gp.f_scale_;

    double best = -std::numeric_limits<double>::infinity();
    const VectorXd ones = VectorXd::Ones(n);
    for (int li = 0; li < 25; ++li) {
      const double length = std::pow(10.0, -2.0 + 2.3 * li / 24.0);  // 0.01 .. 2
      for (double nugget : {1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1}) {
        const MatrixXd r = gp.correlation(length, nugget);
        Eigen::LLT<MatrixXd> llt(r);
        if (llt.info() != Eigen::Success) continue;
        const VectorXd ri_one = llt.solve(ones);
        const double mu = ri_one.dot(ys) / ri_one.sum();
        const VectorXd resid = ys.array() - mu;
        const VectorXd ri_resid = llt.solve(resid);
        const double sigma2 = resid.dot(ri_resid) / static_cast<double>(n);
        if (!(sigma2 > 0.0)) continue;
        const double ll = -0.5 * static_cast<double>(n) * std::log(sigma2) - 0.5 * linalg::log_det(llt);
        if (std::isfinite(ll) && ll > best) {
          best = ll;
          gp.length_ = length;
          gp.nugget_ = nugget;
          gp.mu_ = mu;
          gp.weights_ = ri_resid;
        }
      }
    }
    if (!std::isfinite(best)) return std::nullopt;
    return gp;
  }

  /// Predictive mean on the original output scale.
  double predict(double x) const {
    const double t = (x - lower_) / (upper_ - lower_);
    double s = mu_;
    for (Eigen::Index i = 0; i < x_.size(); ++i) {
      const double d = (t - x_(i)) / length_;
      s += std::exp(-0.5 * d * d) * weights_(i);
    }
    return f_mean_ + f_scale_ * s;
  }

  /// Maximiser of the predictive mean over `points` equally spaced values.
  double argmax(int points) const {
    require(points >= 2, ErrorKind::InvalidParameter, "grid needs at least two points");
    double best_x = lower_;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < points; ++i) {
      const double x = lower_ + (upper_ - lower_) * i / (points - 1);
      const double v = predict(x);
      if (v > best) {
        best = v;
        best_x = x;
      }
    }
    return best_x;
  }

  double length_scale() const { return length_; }
  double nugget() const { return nugget_; }

 private:
  MatrixXd correlation(double length, double nugget) const {
    const auto n = x_.size();
    MatrixXd r(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double d = (x_(i) - x_(j)) / length;
        r(i, j) = r(j, i) = std::exp(-0.5 * d * d);
      }
      r(i, i) += nugget;
    }
    return r;
  }

  double lower_ = 0.0, upper_ = 1.0;
  VectorXd x_;
  double f_mean_ = 0.0, f_scale_ = 1.0;
  double length_ = 0.1, nugget_ = 1e-6, mu_ = 0.0;
  VectorXd weights_;
};

}  // namespace robustdesign
