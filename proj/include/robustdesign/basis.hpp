#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "robustdesign/errors.hpp"
#include "robustdesign/linalg.hpp"

namespace robustdesign {

/// Min-max map of a covariate onto [0, 1]. Fitted once on reference data and
/// reused for every new design point.
struct Scaling {
  double lo = 0.0;
  double hi = 1.0;

  static Scaling fit(std::span<const double> x) {
    require(!x.empty(), ErrorKind::DegenerateCovariate, "empty covariate");
    const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
    require(std::isfinite(*mn) && std::isfinite(*mx), ErrorKind::DegenerateCovariate,
            "covariate contains non-finite values");
    require(*mx > *mn, ErrorKind::DegenerateCovariate, "covariate has zero range");
    return {*mn, *mx};
  }

  double apply(double v) const { return (v - lo) / (hi - lo); }
  double invert(double t) const { return lo + t * (hi - lo); }
};

namespace detail {

inline constexpr int kSplineDegree = 3;

/// Values of all B-splines of the given degree on the full knot vector at t.
/// The right end of the support is closed so t = knots.back() is covered.
inline VectorXd bspline_values(const std::vector<double>& knots, int degree, double t) {
  const int n_knots = static_cast<int>(knots.size());
  // Degree-0 indicators on half-open spans, with the last non-empty span closed.
  int last_span = n_knots - 2;
  while (last_span > 0 && knots[last_span] == knots[last_span + 1]) --last_span;
  VectorXd b = VectorXd::Zero(n_knots - 1);
  for (int i = 0; i < n_knots - 1; ++i) {
    if (knots[i] < knots[i + 1] &&
        ((t >= knots[i] && t < knots[i + 1]) || (i == last_span && t == knots[i + 1]))) {
      b(i) = 1.0;
    }
  }
  for (int p = 1; p <= degree; ++p) {
    VectorXd next = VectorXd::Zero(n_knots - 1 - p);
    for (int i = 0; i < n_knots - 1 - p; ++i) {
      double v = 0.0;
      const double d1 = knots[i + p] - knots[i];
      const double d2 = knots[i + p + 1] - knots[i + 1];
      if (d1 > 0.0) v += (t - knots[i]) / d1 * b(i);
      if (d2 > 0.0) v += (knots[i + p + 1] - t) / d2 * b(i + 1);
      next(i) = v;
    }
    b = std::move(next);
  }
  return b;
}

/// Second derivatives of the cubic B-splines at t, from the degree-1 values.
inline VectorXd bspline_second_derivative(const std::vector<double>& knots, double t) {
  const VectorXd b1 = bspline_values(knots, 1, t);
  const int n2 = static_cast<int>(knots.size()) - 3;  // number of degree-2 splines
  VectorXd d2(n2);
  for (int i = 0; i < n2; ++i) {
    double v = 0.0;
    const double a = knots[i + 2] - knots[i];
    const double c = knots[i + 3] - knots[i + 1];
    if (a > 0.0) v += b1(i) / a;
    if (c > 0.0) v -= b1(i + 1) / c;
    d2(i) = 2.0 * v;
  }
  const int n3 = static_cast<int>(knots.size()) - 4;
  VectorXd d3(n3);
  for (int i = 0; i < n3; ++i) {
    double v = 0.0;
    const double a = knots[i + 3] - knots[i];
    const double c = knots[i + 4] - knots[i + 1];
    if (a > 0.0) v += d2(i) / a;
    if (c > 0.0) v -= d2(i + 1) / c;
    d3(i) = 3.0 * v;
  }
  return d3;
}

/// Type-7 sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Orthogonalised O'Sullivan penalised spline basis for one covariate.
///
/// The covariate is min-max scaled to [0, 1] with k - 2 interior knots at
/// quantiles of the unique reference values. The cubic B-spline basis and its
/// integrated squared second-derivative penalty are rotated by the spectral
/// decomposition of the penalty; the k non-null directions, rescaled to unit
/// penalty, become the spline columns. Those columns are then residualised
/// against [1, t] on the reference sample so that the spline part carries no
/// intercept or linear trend.
class OSullivanBasis {
 public:
  /// `range` widens the [0, 1] map beyond the reference sample, e.g. to the
  /// full extent of a covariate raster.
  static OSullivanBasis fit(std::span<const double> x, int k,
                            std::optional<Scaling> range = std::nullopt) {
    require(k >= 2, ErrorKind::InvalidParameter, "spline dimension k must be at least 2");
    OSullivanBasis basis;
    basis.k_ = k;
    std::vector<double> unique(x.begin(), x.end());
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    require(unique.size() >= 2, ErrorKind::DegenerateCovariate,
            "covariate has fewer than two distinct values");
    require(unique.size() >= static_cast<std::size_t>(k), ErrorKind::DegenerateCovariate,
            "covariate has " + std::to_string(unique.size()) + " distinct values, need k = " +
                std::to_string(k));
    require(x.size() >= static_cast<std::size_t>(k) + 4, ErrorKind::KnotCountTooLarge,
            "k = " + std::to_string(k) + " needs at least k + 4 observations");
    basis.scaling_ = Scaling::fit(x);
    if (range) {
      require(range->hi > range->lo && range->lo <= basis.scaling_.lo &&
                  range->hi >= basis.scaling_.hi,
              ErrorKind::OutOfRange, "covariate range does not cover the reference sample");
      basis.scaling_ = *range;
    }

    std::vector<double> scaled(unique.size());
    std::transform(unique.begin(), unique.end(), scaled.begin(),
                   [&](double v) { return basis.scaling_.apply(v); });
    const int interior = k - 2;
    std::vector<double> knots(4, 0.0);
    for (int j = 1; j <= interior; ++j) {
      knots.push_back(detail::quantile_sorted(scaled, static_cast<double>(j) / (interior + 1)));
    }
    knots.insert(knots.end(), 4, 1.0);
    basis.knots_ = std::move(knots);

    const MatrixXd omega = basis.penalty_matrix();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(omega);
    require(es.info() == Eigen::Success, ErrorKind::NumericalSingularity,
            "penalty eigen-decomposition failed");
    const int dim = static_cast<int>(omega.rows());  // k + 2
    basis.transform_ = MatrixXd(dim, k);
    for (int c = 0; c < k; ++c) {
      const int idx = dim - 1 - c;  // descending eigenvalue order
      const double value = es.eigenvalues()(idx);
      require(value > 1e-12, ErrorKind::KnotCountTooLarge, "penalty rank below k");
      VectorXd vec = es.eigenvectors().col(idx);
      const double big = vec.cwiseAbs().maxCoeff();
      Eigen::Index arg = 0;
      while (std::abs(vec(arg)) < 1e-6 * big) ++arg;
      if (vec(arg) < 0.0) vec = -vec;
      basis.transform_.col(c) = vec / std::sqrt(value);
    }

    const auto n = static_cast<Eigen::Index>(x.size());
    MatrixXd design(n, 2);
    MatrixXd raw(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = basis.scaling_.apply(x[i]);
      design(i, 0) = 1.0;
      design(i, 1) = t;
      raw.row(i) = basis.raw_row(t);
    }
    basis.trend_ = design.colPivHouseholderQr().solve(raw);
    return basis;
  }

  int k() const { return k_; }
  const Scaling& scaling() const { return scaling_; }

  /// Full clamped knot vector on the [0, 1] scale.
  const std::vector<double>& knot_vector() const { return knots_; }

  /// Boundary and interior knots in covariate units, strictly increasing.
  std::vector<double> knot_locations() const {
    std::vector<double> out;
    for (std::size_t i = 3; i + 3 < knots_.size(); ++i) out.push_back(scaling_.invert(knots_[i]));
    return out;
  }

  /// Integrated squared second-derivative penalty of the raw cubic B-splines.
  /// B'' is piecewise linear so 3-point Gauss-Legendre is exact per span.
  MatrixXd penalty_matrix() const {
    const int dim = static_cast<int>(knots_.size()) - 4;
    MatrixXd omega = MatrixXd::Zero(dim, dim);
    static constexpr std::array<double, 3> nodes{-0.7745966692414834, 0.0, 0.7745966692414834};
    static constexpr std::array<double, 3> weights{5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    for (std::size_t s = 0; s + 1 < knots_.size(); ++s) {
      const double a = knots_[s];
      const double b = knots_[s + 1];
      if (!(b > a)) continue;
      for (int q = 0; q < 3; ++q) {
        const double t = 0.5 * (a + b) + 0.5 * (b - a) * nodes[q];
        const VectorXd d2 = detail::bspline_second_derivative(knots_, t);
        omega.noalias() += 0.5 * (b - a) * weights[q] * d2 * d2.transpose();
      }
    }
    return linalg::symmetrize(omega);
  }

  /// Spectral transform from raw B-spline coefficients to spline columns.
  const MatrixXd& transform() const { return transform_; }
  /// Coefficients of the [1, t] trend removed from the spline columns.
  const MatrixXd& trend() const { return trend_; }

  double scaled(double v) const {
    const double t = scaling_.apply(v);
    require(t >= -1e-9 && t <= 1.0 + 1e-9, ErrorKind::OutOfRange,
            "covariate value " + std::to_string(v) + " outside basis range [" +
                std::to_string(scaling_.lo) + ", " + std::to_string(scaling_.hi) + "]");
    return std::clamp(t, 0.0, 1.0);
  }

  VectorXd linear_column(std::span<const double> x) const {
    VectorXd out(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) out(static_cast<Eigen::Index>(i)) = scaled(x[i]);
    return out;
  }

  MatrixXd spline_matrix(std::span<const double> x) const {
    MatrixXd out(static_cast<Eigen::Index>(x.size()), k_);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double t = scaled(x[i]);
      out.row(static_cast<Eigen::Index>(i)) =
          raw_row(t) - trend_.row(0) - t * trend_.row(1);
    }
    return out;
  }

  /// Rebuild from stored parameters (deserialisation).
  static OSullivanBasis from_parts(int k, Scaling scaling, std::vector<double> knots,
                                   MatrixXd transform, MatrixXd trend) {
    OSullivanBasis basis;
    basis.k_ = k;
    basis.scaling_ = scaling;
    basis.knots_ = std::move(knots);
    basis.transform_ = std::move(transform);
    basis.trend_ = std::move(trend);
    require(basis.transform_.rows() == static_cast<Eigen::Index>(basis.knots_.size()) - 4 &&
                basis.transform_.cols() == k && basis.trend_.rows() == 2 &&
                basis.trend_.cols() == k,
            ErrorKind::ShapeMismatch, "inconsistent stored spline basis");
    return basis;
  }

 private:
  Eigen::RowVectorXd raw_row(double t) const {
    return detail::bspline_values(knots_, detail::kSplineDegree, t).transpose() * transform_;
  }

  int k_ = 0;
  Scaling scaling_;
  std::vector<double> knots_;
  MatrixXd transform_;
  MatrixXd trend_;
};

struct SplineColumns {
  VectorXd linear;
  MatrixXd spline;
  std::vector<double> knots;
};

/// Fit the basis on x and evaluate it at the same points.
inline SplineColumns build_osullivan(std::span<const double> x, int k) {
  const auto basis = OSullivanBasis::fit(x, k);
  return {basis.linear_column(x), basis.spline_matrix(x), basis.knot_locations()};
}

/// Row i of the result is kron(a.row(i), b.row(i)).
inline MatrixXd rowwise_kronecker(const MatrixXd& a, const MatrixXd& b) {
  require(a.rows() == b.rows(), ErrorKind::ShapeMismatch,
          "row-wise Kronecker needs equal row counts (" + std::to_string(a.rows()) + " vs " +
              std::to_string(b.rows()) + ")");
  MatrixXd out(a.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    out.middleCols(j * b.cols(), b.cols()) = b.array().colwise() * a.col(j).array();
  }
  return out;
}

inline MatrixXd kronecker(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// Tensor-product smooth of two covariates.
///
/// Each margin is [t - mean(t), Z] (dimension k + 1, centred on the reference
/// sample) in mixed-model form, so its penalty is diag(0, 1, ..., 1). The
/// three tensor penalties are S_a (x) I, I (x) S_b and the ridge on the
/// product of the two null spaces; their positive combination is positive
/// definite.
class TensorSmooth {
 public:
  static TensorSmooth fit(std::span<const double> xa, std::span<const double> xb, int ka,
                          int kb, std::optional<Scaling> range_a = std::nullopt,
                          std::optional<Scaling> range_b = std::nullopt) {
    require(xa.size() == xb.size(), ErrorKind::ShapeMismatch,
            "tensor smooth covariates differ in length");
    TensorSmooth ts;
    ts.a_ = OSullivanBasis::fit(xa, ka, range_a);
    ts.b_ = OSullivanBasis::fit(xb, kb, range_b);
    ts.center_a_ = ts.a_.linear_column(xa).mean();
    ts.center_b_ = ts.b_.linear_column(xb).mean();
    return ts;
  }

  static TensorSmooth from_parts(OSullivanBasis a, OSullivanBasis b, double center_a,
                                 double center_b) {
    TensorSmooth ts;
    ts.a_ = std::move(a);
    ts.b_ = std::move(b);
    ts.center_a_ = center_a;
    ts.center_b_ = center_b;
    return ts;
  }

  const OSullivanBasis& margin_a() const { return a_; }
  const OSullivanBasis& margin_b() const { return b_; }
  double center_a() const { return center_a_; }
  double center_b() const { return center_b_; }

  int margin_dim_a() const { return a_.k() + 1; }
  int margin_dim_b() const { return b_.k() + 1; }
  int dim() const { return margin_dim_a() * margin_dim_b(); }

  MatrixXd marginal_a(std::span<const double> x) const { return marginal(a_, center_a_, x); }
  MatrixXd marginal_b(std::span<const double> x) const { return marginal(b_, center_b_, x); }

  MatrixXd evaluate(std::span<const double> xa, std::span<const double> xb) const {
    return rowwise_kronecker(marginal_a(xa), marginal_b(xb));
  }

  std::array<MatrixXd, 3> penalties() const {
    const int da = margin_dim_a();
    const int db = margin_dim_b();
    MatrixXd sa = MatrixXd::Identity(da, da);
    sa(0, 0) = 0.0;
    MatrixXd sb = MatrixXd::Identity(db, db);
    sb(0, 0) = 0.0;
    MatrixXd na = MatrixXd::Zero(da, da);
    na(0, 0) = 1.0;
    MatrixXd nb = MatrixXd::Zero(db, db);
    nb(0, 0) = 1.0;
    return {kronecker(na, nb), kronecker(sa, MatrixXd::Identity(db, db)),
            kronecker(MatrixXd::Identity(da, da), sb)};
  }

 private:
  static MatrixXd marginal(const OSullivanBasis& basis, double center,
                           std::span<const double> x) {
    MatrixXd out(static_cast<Eigen::Index>(x.size()), basis.k() + 1);
    out.col(0) = basis.linear_column(x).array() - center;
    out.rightCols(basis.k()) = basis.spline_matrix(x);
    return out;
  }

  OSullivanBasis a_;
  OSullivanBasis b_;
  double center_a_ = 0.0;
  double center_b_ = 0.0;
};

struct TensorBlock {
  MatrixXd w;
  std::array<MatrixXd, 3> penalties;
};

inline TensorBlock build_tensor_smooth(std::span<const double> xa, std::span<const double> xb,
                                       int ka, int kb) {
  const auto ts = TensorSmooth::fit(xa, xb, ka, kb);
  return {ts.evaluate(xa, xb), ts.penalties()};
}

/// Model matrices for one design.
struct BasisBundle {
  MatrixXd x_cols;  ///< intercept, then one linear column per smooth and per linear term
  MatrixXd z_cols;  ///< spline columns grouped by smooth term
  MatrixXd w_cols;  ///< tensor columns grouped by interaction
  std::vector<std::array<MatrixXd, 3>> penalty_sets;
  std::vector<std::vector<double>> knot_locations;

  Eigen::Index rows() const { return x_cols.rows(); }
};

}  // namespace robustdesign
