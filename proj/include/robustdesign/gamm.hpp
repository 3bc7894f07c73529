#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "robustdesign/basis.hpp"
#include "robustdesign/errors.hpp"
#include "robustdesign/gaussian.hpp"
#include "robustdesign/linalg.hpp"
#include "robustdesign/rng.hpp"

namespace robustdesign {

enum class Family { normal, binomial };
enum class Link { identity, logit, log };

inline std::string to_string(Family f) { return f == Family::normal ? "normal" : "binomial"; }
inline std::string to_string(Link l) {
  switch (l) {
    case Link::identity: return "identity";
    case Link::logit: return "logit";
    case Link::log: return "log";
  }
  return "identity";
}

inline Family parse_family(const std::string& s) {
  if (s == "normal" || s == "gaussian") return Family::normal;
  if (s == "binomial") return Family::binomial;
  fail(ErrorKind::InvalidSpec, "unknown family '" + s + "'");
}

inline Link parse_link(const std::string& s) {
  if (s == "identity") return Link::identity;
  if (s == "logit") return Link::logit;
  if (s == "log") return Link::log;
  fail(ErrorKind::InvalidSpec, "unknown link '" + s + "'");
}

struct SmoothTerm {
  std::string covariate;
  int k = 0;
};

struct InteractionTerm {
  std::string a;
  std::string b;
  int ka = 0;
  int kb = 0;
};

enum class RandomEffectKind { none, grouped, spatial_matern };

struct RandomEffectSpec {
  RandomEffectKind kind = RandomEffectKind::none;
  int groups = 0;                ///< declared G (informational; observed groups are used)
  bool second_grouping = false;  ///< adds an additive effect with variance phi2 (e.g. year)
  double matern_phi1 = 1.0;      ///< Matérn variance, simulation only
  double matern_phi2 = 1.0;      ///< Matérn range
  double matern_kappa = 1.5;
};

/// Declarative GA(M)M. Variance parameters live on the log-precision scale and
/// are identified by label:
///   log_prec_u_<cov>          smooth of <cov>
///   log_lambda_<a>_<b>_<f>    tensor smooth of (a, b), f = 0, 1, 2
///   log_prec_phi1 / phi2      grouped random effects
/// A variance parameter is estimated when the prior carries its label and
/// held fixed at `fixed[label]` otherwise.
struct GammSpec {
  Family family = Family::normal;
  Link link = Link::identity;
  double psi = 1.0;  ///< normal: sigma_eps; binomial: number of trials
  std::vector<SmoothTerm> smooths;
  std::vector<std::string> linear_terms;
  std::vector<InteractionTerm> interactions;
  RandomEffectSpec random_effect;
  std::map<std::string, double> fixed;

  void validate() const {
    if (family == Family::binomial) {
      require(link == Link::logit, ErrorKind::InvalidSpec, "binomial family needs the logit link");
      require(psi >= 1.0 && std::floor(psi) == psi, ErrorKind::InvalidSpec,
              "binomial trial count must be a positive integer");
    } else {
      require(link != Link::logit, ErrorKind::InvalidSpec, "normal family cannot use logit");
      require(psi > 0.0 && std::isfinite(psi), ErrorKind::InvalidSpec, "sigma_eps must be > 0");
    }
    std::set<std::string> terms;
    for (const auto& s : smooths) {
      require(s.k >= 2, ErrorKind::InvalidSpec, "smooth of '" + s.covariate + "' needs k >= 2");
      require(terms.insert(s.covariate).second, ErrorKind::InvalidSpec,
              "covariate '" + s.covariate + "' appears twice");
    }
    for (const auto& l : linear_terms) {
      require(terms.insert(l).second, ErrorKind::InvalidSpec,
              "covariate '" + l + "' appears twice");
    }
    for (const auto& r : interactions) {
      require(terms.count(r.a) && terms.count(r.b), ErrorKind::InvalidSpec,
              "interaction " + r.a + ":" + r.b + " needs both main effects");
      require(r.a != r.b, ErrorKind::InvalidSpec, "interaction of a covariate with itself");
      require(r.ka >= 2 && r.kb >= 2, ErrorKind::InvalidSpec, "interaction needs k >= 2");
    }
    if (random_effect.kind == RandomEffectKind::spatial_matern) {
      require(random_effect.matern_phi1 > 0 && random_effect.matern_phi2 > 0 &&
                  random_effect.matern_kappa > 0,
              ErrorKind::InvalidSpec, "Matérn parameters must be positive");
    }
  }

  /// Covariates the model reads, in term order.
  std::vector<std::string> covariates() const {
    std::vector<std::string> out;
    for (const auto& s : smooths) out.push_back(s.covariate);
    for (const auto& l : linear_terms) out.push_back(l);
    return out;
  }

  std::vector<std::string> beta_labels() const {
    std::vector<std::string> out{"beta0"};
    for (const auto& c : covariates()) out.push_back("beta_" + c);
    return out;
  }

  std::vector<std::string> variance_labels() const {
    std::vector<std::string> out;
    for (const auto& s : smooths) out.push_back("log_prec_u_" + s.covariate);
    for (const auto& r : interactions) {
      for (int f = 0; f < 3; ++f) {
        out.push_back("log_lambda_" + r.a + "_" + r.b + "_" + std::to_string(f));
      }
    }
    if (random_effect.kind == RandomEffectKind::grouped) {
      out.push_back("log_prec_phi1");
      if (random_effect.second_grouping) out.push_back("log_prec_phi2");
    }
    return out;
  }
};

/// A design: covariate settings per observation plus optional grouping and
/// coordinates.
struct Design {
  std::vector<std::string> covariates;
  MatrixXd values;             ///< n x covariates.size()
  std::vector<long> groups;    ///< fishnet cell (or other) id per row; empty when unused
  std::vector<long> groups2;   ///< second grouping (year) per row; empty when unused
  MatrixXd coords;             ///< n x 2 planar coordinates; empty when unused

  Eigen::Index rows() const { return values.rows(); }

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < covariates.size(); ++i) {
      if (covariates[i] == name) return static_cast<int>(i);
    }
    return -1;
  }

  std::vector<double> column(const std::string& name) const {
    const int c = column_index(name);
    require(c >= 0, ErrorKind::MissingCovariate, "design has no covariate '" + name + "'");
    std::vector<double> out(static_cast<std::size_t>(values.rows()));
    for (Eigen::Index i = 0; i < values.rows(); ++i) out[static_cast<std::size_t>(i)] = values(i, c);
    return out;
  }

  void validate() const {
    require(values.cols() == static_cast<Eigen::Index>(covariates.size()), ErrorKind::ShapeMismatch,
            "design value columns do not match covariate names");
    const auto n = static_cast<std::size_t>(values.rows());
    require(groups.empty() || groups.size() == n, ErrorKind::ShapeMismatch,
            "group ids do not match design rows");
    require(groups2.empty() || groups2.size() == n, ErrorKind::ShapeMismatch,
            "second group ids do not match design rows");
    require(coords.size() == 0 || (coords.rows() == values.rows() && coords.cols() == 2),
            ErrorKind::ShapeMismatch, "coordinates must be n x 2");
    require(values.allFinite(), ErrorKind::MissingCovariate, "design contains non-finite values");
  }

  /// Rows in a canonical order: lexicographic in (covariates, groups,
  /// coordinates). Results computed on the canonical form do not depend on
  /// how the caller ordered the rows.
  Design canonical() const {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(rows()));
    std::iota(order.begin(), order.end(), 0);
    auto key_less = [&](Eigen::Index a, Eigen::Index b) {
      for (Eigen::Index c = 0; c < values.cols(); ++c) {
        if (values(a, c) != values(b, c)) return values(a, c) < values(b, c);
      }
      if (!groups.empty() && groups[a] != groups[b]) return groups[a] < groups[b];
      if (!groups2.empty() && groups2[a] != groups2[b]) return groups2[a] < groups2[b];
      for (Eigen::Index c = 0; c < coords.cols(); ++c) {
        if (coords(a, c) != coords(b, c)) return coords(a, c) < coords(b, c);
      }
      return false;
    };
    std::stable_sort(order.begin(), order.end(), key_less);
    Design out;
    out.covariates = covariates;
    out.values.resize(values.rows(), values.cols());
    out.coords.resize(coords.rows(), coords.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      out.values.row(r) = values.row(order[i]);
      if (coords.size() > 0) out.coords.row(r) = coords.row(order[i]);
      if (!groups.empty()) out.groups.push_back(groups[order[i]]);
      if (!groups2.empty()) out.groups2.push_back(groups2[order[i]]);
    }
    return out;
  }
};

/// Bases fitted once on reference covariate values, then evaluated on any
/// design whose values fall inside the reference range.
struct ModelBasis {
  std::map<std::string, OSullivanBasis> smooth;
  std::map<std::string, Scaling> linear;
  std::vector<TensorSmooth> tensors;

  /// `ranges` optionally fixes the [0, 1] map of a covariate.
  static ModelBasis fit(const GammSpec& spec, const Design& reference,
                        const std::map<std::string, Scaling>& ranges = {}) {
    spec.validate();
    auto range_of = [&](const std::string& c) -> std::optional<Scaling> {
      const auto it = ranges.find(c);
      if (it == ranges.end()) return std::nullopt;
      return it->second;
    };
    ModelBasis mb;
    for (const auto& s : spec.smooths) {
      const auto x = reference.column(s.covariate);
      mb.smooth.emplace(s.covariate, OSullivanBasis::fit(x, s.k, range_of(s.covariate)));
    }
    for (const auto& l : spec.linear_terms) {
      const auto x = reference.column(l);
      auto sc = Scaling::fit(x);
      if (auto r = range_of(l)) sc = *r;
      mb.linear.emplace(l, sc);
    }
    for (const auto& r : spec.interactions) {
      mb.tensors.push_back(TensorSmooth::fit(reference.column(r.a), reference.column(r.b), r.ka,
                                             r.kb, range_of(r.a), range_of(r.b)));
    }
    return mb;
  }

  BasisBundle bundle(const GammSpec& spec, const Design& design) const {
    const auto n = design.rows();
    BasisBundle out;
    const auto names = spec.covariates();
    out.x_cols.resize(n, 1 + static_cast<Eigen::Index>(names.size()));
    out.x_cols.col(0).setOnes();
    Eigen::Index col = 1;
    Eigen::Index zdim = 0;
    for (const auto& s : spec.smooths) zdim += s.k;
    out.z_cols.resize(n, zdim);
    Eigen::Index zc = 0;
    for (const auto& s : spec.smooths) {
      const auto& b = at(smooth, s.covariate);
      require(b.k() == s.k, ErrorKind::ShapeMismatch, "stored basis k differs from the model");
      const auto x = design.column(s.covariate);
      out.x_cols.col(col++) = b.linear_column(x);
      out.z_cols.middleCols(zc, s.k) = b.spline_matrix(x);
      zc += s.k;
      out.knot_locations.push_back(b.knot_locations());
    }
    for (const auto& l : spec.linear_terms) {
      const auto& sc = at(linear, l);
      const auto x = design.column(l);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double t = sc.apply(x[static_cast<std::size_t>(i)]);
        require(t >= -1e-9 && t <= 1.0 + 1e-9, ErrorKind::OutOfRange,
                "covariate '" + l + "' outside its reference range");
        out.x_cols(i, col) = t;
      }
      ++col;
    }
    require(tensors.size() == spec.interactions.size(), ErrorKind::ShapeMismatch,
            "stored tensor smooths do not match the model");
    Eigen::Index wdim = 0;
    for (const auto& t : tensors) wdim += t.dim();
    out.w_cols.resize(n, wdim);
    Eigen::Index wc = 0;
    for (std::size_t r = 0; r < tensors.size(); ++r) {
      const auto& t = tensors[r];
      out.w_cols.middleCols(wc, t.dim()) =
          t.evaluate(design.column(spec.interactions[r].a), design.column(spec.interactions[r].b));
      wc += t.dim();
      out.penalty_sets.push_back(t.penalties());
    }
    return out;
  }

 private:
  template <typename M>
  static const typename M::mapped_type& at(const M& m, const std::string& key) {
    const auto it = m.find(key);
    require(it != m.end(), ErrorKind::InvalidSpec, "no fitted basis for '" + key + "'");
    return it->second;
  }
};

/// eta = X beta + Z u + W v + s_{g(i)}. `row_group` maps rows to entries of s;
/// pass an empty vector when the model has no grouped effect.
inline VectorXd linear_predictor(const BasisBundle& bundle, const VectorXd& beta,
                                 const VectorXd& u, const VectorXd& v, const VectorXd& s,
                                 const std::vector<int>& row_group = {}) {
  require(beta.size() == bundle.x_cols.cols(), ErrorKind::ShapeMismatch, "beta length");
  require(u.size() == bundle.z_cols.cols(), ErrorKind::ShapeMismatch, "u length");
  require(v.size() == bundle.w_cols.cols(), ErrorKind::ShapeMismatch, "v length");
  VectorXd eta = bundle.x_cols * beta;
  if (u.size() > 0) eta += bundle.z_cols * u;
  if (v.size() > 0) eta += bundle.w_cols * v;
  if (!row_group.empty()) {
    require(row_group.size() == static_cast<std::size_t>(eta.size()), ErrorKind::ShapeMismatch,
            "group map length");
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const int g = row_group[static_cast<std::size_t>(i)];
      require(g >= 0 && g < s.size(), ErrorKind::ShapeMismatch, "group index out of range");
      eta(i) += s(g);
    }
  } else {
    require(s.size() == 0 || s.size() == eta.size(), ErrorKind::ShapeMismatch, "s length");
    if (s.size() > 0) eta += s;
  }
  return eta;
}

/// Matérn covariance with variance phi1, range phi2 and smoothness kappa.
inline double matern(double h, double phi1, double phi2, double kappa) {
  require(phi1 > 0 && phi2 > 0 && kappa > 0, ErrorKind::InvalidParameter,
          "Matérn parameters must be positive");
  require(h >= 0, ErrorKind::InvalidParameter, "distance must be non-negative");
  if (h == 0.0) return phi1;
  const double r = h / phi2;
  const double log_c = (1.0 - kappa) * std::log(2.0) - std::lgamma(kappa) + kappa * std::log(r);
  const double value = phi1 * std::exp(log_c) * std::cyl_bessel_k(kappa, r);
  return std::isfinite(value) ? value : 0.0;
}

struct VarianceParam {
  std::string label;
  bool estimated = false;
  double fixed_value = 0.0;  ///< log precision when not estimated
  int theta_index = -1;      ///< position in theta when estimated
};

/// theta = (beta, estimated variance parameters), in spec order.
struct ParameterLayout {
  std::vector<std::string> beta_labels;
  std::vector<VarianceParam> variances;
  std::vector<std::string> theta_labels;

  static ParameterLayout make(const GammSpec& spec, const std::vector<std::string>& prior_labels) {
    spec.validate();
    ParameterLayout out;
    const std::set<std::string> have(prior_labels.begin(), prior_labels.end());
    out.beta_labels = spec.beta_labels();
    for (const auto& b : out.beta_labels) {
      require(have.count(b), ErrorKind::InvalidSpec, "prior has no parameter '" + b + "'");
    }
    out.theta_labels = out.beta_labels;
    for (const auto& label : spec.variance_labels()) {
      VarianceParam vp;
      vp.label = label;
      if (have.count(label)) {
        vp.estimated = true;
        vp.theta_index = static_cast<int>(out.theta_labels.size());
        out.theta_labels.push_back(label);
      } else {
        const auto it = spec.fixed.find(label);
        require(it != spec.fixed.end(), ErrorKind::InvalidSpec,
                "variance parameter '" + label + "' is neither in the prior nor fixed");
        vp.fixed_value = it->second;
      }
      out.variances.push_back(vp);
    }
    return out;
  }

  int n_beta() const { return static_cast<int>(beta_labels.size()); }
  int n_theta() const { return static_cast<int>(theta_labels.size()); }

  /// Log precision of every variance parameter, taking estimated ones from theta.
  VectorXd tau(const VectorXd& theta) const {
    VectorXd out(static_cast<Eigen::Index>(variances.size()));
    for (std::size_t i = 0; i < variances.size(); ++i) {
      out(static_cast<Eigen::Index>(i)) =
          variances[i].estimated ? theta(variances[i].theta_index) : variances[i].fixed_value;
    }
    return out;
  }
};

/// Everything needed to evaluate the model on one design: fixed-effect matrix
/// X and the random-effect matrix [Z W G1 G2] whose coefficients alpha have a
/// diagonal prior precision d(tau).
struct ModelFrame {
  BasisBundle bundle;
  MatrixXd x;
  MatrixXd z_alpha;
  std::vector<std::string> alpha_labels;
  std::vector<int> row_group;   ///< index into observed groups, or empty
  std::vector<int> row_group2;
  std::vector<long> group_ids;  ///< observed group ids, sorted
  std::vector<long> group2_ids;
  /// d_i = sum_v exp(tau_v) * weight(i, v)
  MatrixXd precision_weights;   ///< q x n_variance

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index q() const { return z_alpha.cols(); }

  VectorXd alpha_precision(const VectorXd& tau) const {
    return precision_weights * tau.array().exp().matrix();
  }

  /// d log d_i / d tau_v.
  MatrixXd dlog_precision(const VectorXd& tau) const {
    const VectorXd d = alpha_precision(tau);
    MatrixXd out = precision_weights * tau.array().exp().matrix().asDiagonal();
    return d.cwiseInverse().asDiagonal() * out;
  }

  VectorXd eta(const VectorXd& beta, const VectorXd& alpha) const {
    VectorXd e = x * beta;
    if (q() > 0) e.noalias() += z_alpha * alpha;
    return e;
  }

  static ModelFrame make(const GammSpec& spec, const ModelBasis& basis,
                         const ParameterLayout& layout, const Design& design) {
    design.validate();
    ModelFrame f;
    f.bundle = basis.bundle(spec, design);
    f.x = f.bundle.x_cols;
    const auto n = design.rows();
    const auto n_var = static_cast<Eigen::Index>(layout.variances.size());

    auto observed = [&](const std::vector<long>& ids, std::vector<long>& unique,
                        std::vector<int>& rows) {
      unique = ids;
      std::sort(unique.begin(), unique.end());
      unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
      rows.resize(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        rows[i] = static_cast<int>(std::lower_bound(unique.begin(), unique.end(), ids[i]) -
                                   unique.begin());
      }
    };

    const bool grouped = spec.random_effect.kind == RandomEffectKind::grouped;
    if (grouped) {
      require(!design.groups.empty(), ErrorKind::InvalidSpec,
              "grouped random effect needs group ids in the design");
      observed(design.groups, f.group_ids, f.row_group);
      if (spec.random_effect.second_grouping) {
        require(!design.groups2.empty(), ErrorKind::InvalidSpec,
                "second grouping needs ids in the design");
        observed(design.groups2, f.group2_ids, f.row_group2);
      }
    }
    require(spec.random_effect.kind != RandomEffectKind::spatial_matern, ErrorKind::InvalidSpec,
            "Matérn random effects are available for simulation only; fit with a grouped effect");

    const Eigen::Index q = f.bundle.z_cols.cols() + f.bundle.w_cols.cols() +
                           static_cast<Eigen::Index>(f.group_ids.size() + f.group2_ids.size());
    f.z_alpha = MatrixXd::Zero(n, q);
    f.precision_weights = MatrixXd::Zero(q, n_var);
    Eigen::Index col = 0;
    int var = 0;
    Eigen::Index zc = 0;
    for (const auto& s : spec.smooths) {
      f.z_alpha.middleCols(col, s.k) = f.bundle.z_cols.middleCols(zc, s.k);
      for (int j = 0; j < s.k; ++j) {
        f.precision_weights(col + j, var) = 1.0;
        f.alpha_labels.push_back("u_" + s.covariate + "_" + std::to_string(j + 1));
      }
      col += s.k;
      zc += s.k;
      ++var;
    }
    Eigen::Index wc = 0;
    for (std::size_t r = 0; r < spec.interactions.size(); ++r) {
      const auto& pens = f.bundle.penalty_sets[r];
      const auto dim = pens[0].rows();
      f.z_alpha.middleCols(col, dim) = f.bundle.w_cols.middleCols(wc, dim);
      for (int fi = 0; fi < 3; ++fi) {
        const MatrixXd& s = pens[static_cast<std::size_t>(fi)];
        require((s - MatrixXd(s.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0,
                ErrorKind::InvalidSpec, "tensor penalties must be diagonal");
        f.precision_weights.block(col, var + fi, dim, 1) = s.diagonal();
      }
      const auto& it = spec.interactions[r];
      for (Eigen::Index j = 0; j < dim; ++j) {
        f.alpha_labels.push_back("v_" + it.a + "_" + it.b + "_" + std::to_string(j + 1));
      }
      col += dim;
      wc += dim;
      var += 3;
    }
    if (grouped) {
      for (std::size_t g = 0; g < f.group_ids.size(); ++g) {
        f.precision_weights(col + static_cast<Eigen::Index>(g), var) = 1.0;
        f.alpha_labels.push_back("s_" + std::to_string(f.group_ids[g]));
      }
      for (Eigen::Index i = 0; i < n; ++i) f.z_alpha(i, col + f.row_group[i]) = 1.0;
      col += static_cast<Eigen::Index>(f.group_ids.size());
      ++var;
      if (spec.random_effect.second_grouping) {
        for (std::size_t g = 0; g < f.group2_ids.size(); ++g) {
          f.precision_weights(col + static_cast<Eigen::Index>(g), var) = 1.0;
          f.alpha_labels.push_back("t_" + std::to_string(f.group2_ids[g]));
        }
        for (Eigen::Index i = 0; i < n; ++i) f.z_alpha(i, col + f.row_group2[i]) = 1.0;
        col += static_cast<Eigen::Index>(f.group2_ids.size());
        ++var;
      }
    }
    return f;
  }
};

/// Spec, fitted bases and parameter layout: everything that does not depend
/// on the design being evaluated.
struct Model {
  GammSpec spec;
  ModelBasis basis;
  ParameterLayout layout;

  static Model make(GammSpec spec, ModelBasis basis, const std::vector<std::string>& prior_labels) {
    Model m{std::move(spec), std::move(basis), {}};
    m.layout = ParameterLayout::make(m.spec, prior_labels);
    return m;
  }

  ModelFrame frame(const Design& design) const {
    return ModelFrame::make(spec, basis, layout, design);
  }
};

namespace family {

inline double log_choose(double m, double y) {
  return std::lgamma(m + 1.0) - std::lgamma(y + 1.0) - std::lgamma(m - y + 1.0);
}

inline double log1pexp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double inverse_link(Link link, double eta) {
  switch (link) {
    case Link::identity: return eta;
    case Link::log: return std::exp(eta);
    case Link::logit: return 1.0 / (1.0 + std::exp(-eta));
  }
  return eta;
}

/// Log-likelihood of y given eta, summed over observations.
inline double loglik(const GammSpec& spec, const VectorXd& y, const VectorXd& eta) {
  double out = 0.0;
  if (spec.family == Family::normal) {
    const double s2 = spec.psi * spec.psi;
    const double c = -0.5 * std::log(2.0 * std::numbers::pi * s2);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double mu = inverse_link(spec.link, eta(i));
      out += c - 0.5 * (y(i) - mu) * (y(i) - mu) / s2;
    }
  } else {
    const double m = spec.psi;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      out += log_choose(m, y(i)) + y(i) * eta(i) - m * log1pexp(eta(i));
    }
  }
  return out;
}

/// Sum of the terms of loglik that do not involve eta.
inline double loglik_constant(const GammSpec& spec, const VectorXd& y) {
  if (spec.family != Family::binomial) return 0.0;
  double out = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) out += log_choose(spec.psi, y(i));
  return out;
}

/// d loglik / d eta_i.
inline VectorXd score(const GammSpec& spec, const VectorXd& y, const VectorXd& eta) {
  VectorXd out(y.size());
  if (spec.family == Family::normal) {
    const double s2 = spec.psi * spec.psi;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (spec.link == Link::identity) {
        out(i) = (y(i) - eta(i)) / s2;
      } else {
        const double mu = std::exp(eta(i));
        out(i) = (y(i) - mu) * mu / s2;
      }
    }
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      out(i) = y(i) - spec.psi * inverse_link(Link::logit, eta(i));
    }
  }
  return out;
}

/// loglik minus loglik_constant, with the score written to `score_out`.
inline double loglik_kernel(const GammSpec& spec, const VectorXd& y, const Eigen::Ref<const VectorXd>& eta,
                            Eigen::Ref<VectorXd> score_out) {
  double out = 0.0;
  if (spec.family == Family::binomial) {
    const double m = spec.psi;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double e = eta(i);
      const double t = std::exp(-std::abs(e));
      out += y(i) * e - m * (std::max(e, 0.0) + std::log1p(t));
      const double p = e > 0 ? 1.0 / (1.0 + t) : t / (1.0 + t);
      score_out(i) = y(i) - m * p;
    }
    return out;
  }
  const VectorXd e = eta;
  score_out = score(spec, y, e);
  return loglik(spec, y, e);
}

/// -d^2 loglik / d eta_i^2 (observed information).
inline VectorXd curvature(const GammSpec& spec, const VectorXd& y, const VectorXd& eta) {
  VectorXd out(y.size());
  if (spec.family == Family::normal) {
    const double s2 = spec.psi * spec.psi;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (spec.link == Link::identity) {
        out(i) = 1.0 / s2;
      } else {
        const double mu = std::exp(eta(i));
        out(i) = (2.0 * mu * mu - y(i) * mu) / s2;
      }
    }
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double p = inverse_link(Link::logit, eta(i));
      out(i) = spec.psi * p * (1.0 - p);
    }
  }
  return out;
}

/// Expected information, always non-negative; used to keep Newton steps
/// ascending when the observed curvature is not.
inline VectorXd fisher_weights(const GammSpec& spec, const VectorXd& eta) {
  VectorXd out(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (spec.family == Family::normal) {
      const double d = spec.link == Link::identity ? 1.0 : std::exp(eta(i));
      out(i) = d * d / (spec.psi * spec.psi);
    } else {
      const double p = inverse_link(Link::logit, eta(i));
      out(i) = spec.psi * p * (1.0 - p);
    }
  }
  return out;
}

inline VectorXd sample(const GammSpec& spec, const VectorXd& eta, Rng& rng) {
  VectorXd y(eta.size());
  if (spec.family == Family::normal) {
    NormalStream normal(rng.split("noise"));
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      y(i) = inverse_link(spec.link, eta(i)) + spec.psi * normal();
    }
  } else {
    Rng stream = rng.split("binomial");
    const int trials = static_cast<int>(spec.psi);
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      std::binomial_distribution<int> dist(trials, inverse_link(Link::logit, eta(i)));
      y(i) = dist(stream);
    }
  }
  return y;
}

}  // namespace family

struct PriorDraw {
  VectorXd theta;
  VectorXd alpha;
  VectorXd spatial;  ///< per-row Matérn field; empty unless the model has one
  VectorXd eta;
  VectorXd y;
};

/// Draw theta from its prior marginal, alpha | gamma hierarchically, then y.
/// `theta_prior` must be ordered as model.layout.theta_labels.
inline PriorDraw simulate_prior_predictive(const Model& model, const ModelFrame& frame,
                                           const GaussianDist& theta_prior, Rng rng,
                                           const Design* design = nullptr) {
  PriorDraw out;
  Rng theta_rng = rng.split("theta");
  out.theta = theta_prior.sample(theta_rng);
  const VectorXd tau = model.layout.tau(out.theta);
  const VectorXd d = frame.alpha_precision(tau);
  NormalStream normal(rng.split("alpha"));
  out.alpha.resize(frame.q());
  for (Eigen::Index i = 0; i < frame.q(); ++i) out.alpha(i) = normal() / std::sqrt(d(i));
  out.eta = frame.eta(out.theta.head(model.layout.n_beta()), out.alpha);
  const auto& re = model.spec.random_effect;
  if (re.kind == RandomEffectKind::spatial_matern) {
    require(design != nullptr && design->coords.rows() == frame.n(), ErrorKind::InvalidSpec,
            "Matérn simulation needs design coordinates");
    const auto n = frame.n();
    MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double h = (design->coords.row(i) - design->coords.row(j)).norm();
        c(i, j) = c(j, i) = matern(h, re.matern_phi1, re.matern_phi2, re.matern_kappa);
      }
    }
    NormalStream spatial(rng.split("spatial"));
    VectorXd z(n);
    for (auto& v : z) v = spatial();
    out.spatial = linalg::psd_factor(c) * z;
    out.eta += out.spatial;
  }
  for (Eigen::Index i = 0; i < out.eta.size(); ++i) {
    const double mu = family::inverse_link(model.spec.link, out.eta(i));
    if (!std::isfinite(out.eta(i)) || !std::isfinite(mu)) {
      fail(ErrorKind::SimulationOverflow,
           "non-finite linear predictor at observation " + std::to_string(i));
    }
  }
  Rng y_rng = rng.split("response");
  out.y = family::sample(model.spec, out.eta, y_rng);
  return out;
}

}  // namespace robustdesign
