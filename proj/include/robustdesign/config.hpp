#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "robustdesign/basis.hpp"
#include "robustdesign/errors.hpp"
#include "robustdesign/gamm.hpp"
#include "robustdesign/gaussian.hpp"
#include "robustdesign/io.hpp"
#include "robustdesign/laplace.hpp"
#include "robustdesign/optimize.hpp"

namespace robustdesign::config {

/// Where a node came from, for error messages of the form file:line:col.
class Source {
 public:
  explicit Source(std::string path) : path_(std::move(path)) {}

  const std::string& path() const { return path_; }

  [[noreturn]] void invalid(const YAML::Node& node, const std::string& message) const {
    const auto m = node.Mark();
    if (m.is_null()) fail(ErrorKind::InvalidConfig, path_ + ": " + message);
    fail(ErrorKind::InvalidConfig,
         path_ + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1) + ": " + message);
  }

  /// Paths in a config are relative to the config file.
  std::string resolve(const std::string& p) const {
    const std::filesystem::path fp(p);
    if (fp.is_absolute()) return p;
    return (std::filesystem::path(path_).parent_path() / fp).lexically_normal().string();
  }

  void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) const {
    if (!node.IsMap()) invalid(node, where + " must be a mapping");
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) invalid(kv.first, "unknown key '" + key + "' in " + where);
    }
  }

  template <typename T>
  T as(const YAML::Node& node, const std::string& what) const {
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      invalid(node, what + " has the wrong type");
    }
  }

  template <typename T>
  T get(const YAML::Node& parent, const std::string& key, const T& fallback) const {
    const auto n = parent[key];
    return n ? as<T>(n, "'" + key + "'") : fallback;
  }

  template <typename T>
  T need(const YAML::Node& parent, const std::string& key, const std::string& where) const {
    const auto n = parent[key];
    if (!n) invalid(parent, where + " needs '" + key + "'");
    return as<T>(n, "'" + key + "'");
  }

  YAML::Node section(const YAML::Node& parent, const std::string& key, const std::string& where) const {
    const auto n = parent[key];
    if (!n) invalid(parent, where + " needs a '" + key + "' section");
    return n;
  }

 private:
  std::string path_;
};

struct Grid {
  double from = 0.0;
  double to = 1.0;
  int points = 101;
};

/// Model section: the GammSpec plus the reference sample that fixes the bases.
struct ModelConfig {
  GammSpec spec;
  std::map<std::string, Grid> reference;
  std::map<std::string, Scaling> ranges;

  /// Reference design: the product of the per-covariate grids.
  Design reference_design() const {
    Design d;
    d.covariates = spec.covariates();
    std::size_t rows = 1;
    for (const auto& c : d.covariates) rows *= static_cast<std::size_t>(reference.at(c).points);
    d.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d.covariates.size()));
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t rest = r;
      for (std::size_t c = d.covariates.size(); c-- > 0;) {
        const auto& g = reference.at(d.covariates[c]);
        const auto i = rest % static_cast<std::size_t>(g.points);
        rest /= static_cast<std::size_t>(g.points);
        d.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            g.from + (g.to - g.from) * static_cast<double>(i) / (g.points - 1);
      }
    }
    if (spec.random_effect.kind == RandomEffectKind::grouped) {
      d.groups.assign(rows, 0);
      if (spec.random_effect.second_grouping) d.groups2.assign(rows, 0);
    }
    return d;
  }

  Model build(const std::vector<std::string>& prior_labels) const {
    return Model::make(spec, ModelBasis::fit(spec, reference_design(), ranges), prior_labels);
  }

  /// Canonical text of everything that changes the meaning of the parameters.
  std::string fingerprint() const {
    using io::format_double;
    std::string s = "family=" + to_string(spec.family) + ";link=" + to_string(spec.link) +
                    ";psi=" + format_double(spec.psi);
    for (const auto& t : spec.smooths) s += ";smooth=" + t.covariate + ":" + std::to_string(t.k);
    for (const auto& l : spec.linear_terms) s += ";linear=" + l;
    for (const auto& r : spec.interactions) {
      s += ";interaction=" + r.a + ":" + r.b + ":" + std::to_string(r.ka) + ":" + std::to_string(r.kb);
    }
    s += ";random_effect=" + std::to_string(static_cast<int>(spec.random_effect.kind)) + ":" +
         std::to_string(spec.random_effect.second_grouping);
    for (const auto& [k, v] : spec.fixed) s += ";fixed=" + k + ":" + format_double(v);
    for (const auto& [k, g] : reference) {
      s += ";reference=" + k + ":" + format_double(g.from) + ":" + format_double(g.to) + ":" + std::to_string(g.points);
    }
    for (const auto& [k, r] : ranges) s += ";range=" + k + ":" + format_double(r.lo) + ":" + format_double(r.hi);
    return s;
  }

  std::string hash() const { return io::hex(io::fnv1a(fingerprint())); }
};

inline ModelConfig parse_model(const Source& src, const YAML::Node& node) {
  src.check_keys(node, {"family", "link", "psi", "smooths", "linear", "interactions", "random_effect", "fixed",
                        "ranges", "reference"},
                 "model");
  ModelConfig mc;
  auto& s = mc.spec;
  try {
    s.family = parse_family(src.need<std::string>(node, "family", "model"));
  } catch (const Error& e) {
    src.invalid(node["family"], e.what());
  }
  const auto default_link = s.family == Family::binomial ? "logit" : "identity";
  try {
    s.link = parse_link(src.get<std::string>(node, "link", default_link));
  } catch (const Error& e) {
    src.invalid(node["link"], e.what());
  }
  s.psi = src.need<double>(node, "psi", "model");
  if (const auto sm = node["smooths"]) {
    if (!sm.IsSequence()) src.invalid(sm, "'smooths' must be a list");
    for (const auto& t : sm) {
      src.check_keys(t, {"covariate", "k"}, "smooth term");
      s.smooths.push_back({src.need<std::string>(t, "covariate", "smooth term"), src.need<int>(t, "k", "smooth term")});
    }
  }
  if (const auto ln = node["linear"]) {
    if (!ln.IsSequence()) src.invalid(ln, "'linear' must be a list");
    for (const auto& t : ln) s.linear_terms.push_back(src.as<std::string>(t, "linear covariate"));
  }
  if (const auto it = node["interactions"]) {
    if (!it.IsSequence()) src.invalid(it, "'interactions' must be a list");
    for (const auto& t : it) {
      src.check_keys(t, {"a", "b", "ka", "kb"}, "interaction");
      s.interactions.push_back({src.need<std::string>(t, "a", "interaction"), src.need<std::string>(t, "b", "interaction"),
                                src.need<int>(t, "ka", "interaction"), src.need<int>(t, "kb", "interaction")});
    }
  }
  if (const auto re = node["random_effect"]) {
    src.check_keys(re, {"kind", "second_grouping"}, "random_effect");
    const auto kind = src.need<std::string>(re, "kind", "random_effect");
    if (kind == "none") {
      s.random_effect.kind = RandomEffectKind::none;
    } else if (kind == "grouped") {
      s.random_effect.kind = RandomEffectKind::grouped;
    } else {
      src.invalid(re["kind"], "random_effect kind must be 'none' or 'grouped'");
    }
    s.random_effect.second_grouping = src.get<bool>(re, "second_grouping", false);
  }
  if (const auto fx = node["fixed"]) {
    if (!fx.IsMap()) src.invalid(fx, "'fixed' must be a mapping");
    const auto labels = s.variance_labels();
    for (const auto& kv : fx) {
      const auto key = kv.first.as<std::string>();
      if (std::find(labels.begin(), labels.end(), key) == labels.end()) {
        src.invalid(kv.first, "'" + key + "' is not a variance parameter of this model");
      }
      s.fixed[key] = src.as<double>(kv.second, "'" + key + "'");
    }
  }
  try {
    s.validate();
  } catch (const Error& e) {
    src.invalid(node, e.what());
  }
  const auto covs = s.covariates();
  const auto ref = src.section(node, "reference", "model");
  src.check_keys(ref, {covs.begin(), covs.end()}, "model.reference");
  for (const auto& c : covs) {
    const auto g = ref[c];
    if (!g) src.invalid(ref, "model.reference needs a grid for '" + c + "'");
    src.check_keys(g, {"from", "to", "points"}, "reference grid");
    Grid grid{src.need<double>(g, "from", "reference grid"), src.need<double>(g, "to", "reference grid"),
              src.get<int>(g, "points", 101)};
    if (!(grid.from < grid.to) || grid.points < 2) src.invalid(g, "reference grid needs from < to and points >= 2");
    mc.reference[c] = grid;
  }
  if (const auto rg = node["ranges"]) {
    src.check_keys(rg, {covs.begin(), covs.end()}, "model.ranges");
    for (const auto& kv : rg) {
      const auto v = src.as<std::vector<double>>(kv.second, "range");
      if (v.size() != 2 || !(v[0] < v[1])) src.invalid(kv.second, "a range is [lower, upper] with lower < upper");
      mc.ranges[kv.first.as<std::string>()] = Scaling{v[0], v[1]};
    }
  }
  return mc;
}

/// Prior section: a file written by fit-pilot (or by hand), or inline
/// independent normals given as `mean` and `sd` mappings.
inline io::PriorFile parse_prior(const Source& src, const YAML::Node& node) {
  src.check_keys(node, {"file", "mean", "sd"}, "prior");
  if (const auto f = node["file"]) {
    if (node["mean"] || node["sd"]) src.invalid(node, "prior takes either 'file' or 'mean'/'sd', not both");
    const auto path = src.resolve(src.as<std::string>(f, "prior file"));
    try {
      return io::read_prior(path);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::IoError) src.invalid(f, e.what());
      throw;
    }
  }
  const auto mean = src.section(node, "mean", "prior");
  const auto sd = src.section(node, "sd", "prior");
  if (!mean.IsMap() || !sd.IsMap()) src.invalid(node, "prior mean and sd must be mappings");
  std::vector<std::string> labels;
  std::vector<double> m, s;
  for (const auto& kv : mean) {
    const auto key = kv.first.as<std::string>();
    if (!sd[key]) src.invalid(sd, "prior sd has no entry for '" + key + "'");
    labels.push_back(key);
    m.push_back(src.as<double>(kv.second, "prior mean"));
    const double v = src.as<double>(sd[key], "prior sd");
    if (!(v > 0.0)) src.invalid(sd[key], "prior sd must be positive");
    s.push_back(v);
  }
  if (sd.size() != mean.size()) src.invalid(sd, "prior sd and mean have different labels");
  io::PriorFile out;
  out.prior = GaussianDist::diagonal(Eigen::Map<const VectorXd>(m.data(), static_cast<Eigen::Index>(m.size())),
                                     Eigen::Map<const VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())), labels);
  return out;
}

/// Checks that a prior belongs to the model and covers its fixed effects.
inline void check_prior(const Source& src, const YAML::Node& node, const io::PriorFile& prior, const ModelConfig& model) {
  if (!prior.model_hash.empty() && prior.model_hash != model.hash()) {
    src.invalid(node, "prior was produced for model " + prior.model_hash + " but this model hashes to " + model.hash());
  }
  for (const auto& l : model.spec.beta_labels()) {
    if (!prior.prior.has(l)) src.invalid(node, "prior has no entry for '" + l + "'");
  }
  for (const auto& l : model.spec.variance_labels()) {
    if (!prior.prior.has(l) && !model.spec.fixed.count(l)) {
      src.invalid(node, "'" + l + "' is neither in the prior nor fixed");
    }
  }
}

struct UtilityConfig {
  int l_draws = 200;
  int e_draws = 500;
};

inline UtilityConfig parse_utility(const Source& src, const YAML::Node& node) {
  UtilityConfig u;
  if (!node) return u;
  src.check_keys(node, {"l_draws", "e_draws"}, "utility");
  u.l_draws = src.get<int>(node, "l_draws", u.l_draws);
  u.e_draws = src.get<int>(node, "e_draws", u.e_draws);
  if (u.l_draws < 1 || u.e_draws < 1) src.invalid(node, "l_draws and e_draws must be at least 1");
  return u;
}

struct OptimizerConfig {
  int restarts = 1;
  Budget budget;
};

inline OptimizerConfig parse_optimizer(const Source& src, const YAML::Node& node) {
  OptimizerConfig o;
  if (!node) return o;
  src.check_keys(node, {"restarts", "max_sweeps", "m_evals", "rel_tol", "grid_points"}, "optimizer");
  o.restarts = src.get<int>(node, "restarts", o.restarts);
  o.budget.max_sweeps = src.get<int>(node, "max_sweeps", o.budget.max_sweeps);
  o.budget.m_evals = src.get<int>(node, "m_evals", o.budget.m_evals);
  o.budget.rel_tol = src.get<double>(node, "rel_tol", o.budget.rel_tol);
  o.budget.grid_points = src.get<int>(node, "grid_points", o.budget.grid_points);
  if (o.restarts < 1 || o.budget.max_sweeps < 1 || o.budget.m_evals < 1 || o.budget.grid_points < 2 ||
      o.budget.rel_tol < 0) {
    src.invalid(node, "optimizer settings must be positive");
  }
  return o;
}

/// Design space: `points` places n runs in a box of covariate values,
/// `transects` places fixed-length lines on a raster.
struct DesignConfig {
  enum class Kind { points, transects } kind = Kind::points;
  int n = 12;
  std::map<std::string, std::pair<double, double>> bounds;
  int candidates = 0;  ///< 0: continuous coordinates
  std::vector<std::string> raster;
  int count = 18;
  int n_points = 50;
  double length = 500.0;
  double width = 50.0;
  double fishnet = 500.0;
};

inline DesignConfig parse_design(const Source& src, const YAML::Node& node, const ModelConfig& model) {
  DesignConfig d;
  const auto kind = src.need<std::string>(node, "kind", "design");
  if (kind == "points") {
    src.check_keys(node, {"kind", "n", "bounds", "candidates"}, "design");
    d.n = src.need<int>(node, "n", "design");
    if (d.n < 1) src.invalid(node["n"], "design needs at least one point");
    d.candidates = src.get<int>(node, "candidates", 0);
    if (d.candidates == 1 || d.candidates < 0) src.invalid(node["candidates"], "candidates is 0 or at least 2");
    const auto b = src.section(node, "bounds", "design");
    const auto covs = model.spec.covariates();
    src.check_keys(b, {covs.begin(), covs.end()}, "design.bounds");
    for (const auto& c : covs) {
      if (!b[c]) src.invalid(b, "design.bounds needs '" + c + "'");
      const auto v = src.as<std::vector<double>>(b[c], "bounds");
      if (v.size() != 2 || !(v[0] < v[1])) src.invalid(b[c], "bounds are [lower, upper] with lower < upper");
      d.bounds[c] = {v[0], v[1]};
    }
  } else if (kind == "transects") {
    d.kind = DesignConfig::Kind::transects;
    src.check_keys(node, {"kind", "raster", "count", "n_points", "length", "width", "fishnet"}, "design");
    const auto r = src.section(node, "raster", "design");
    for (const auto& p : src.as<std::vector<std::string>>(r, "raster")) d.raster.push_back(src.resolve(p));
    if (d.raster.empty()) src.invalid(r, "design.raster lists no layers");
    d.count = src.get<int>(node, "count", d.count);
    d.n_points = src.get<int>(node, "n_points", d.n_points);
    d.length = src.get<double>(node, "length", d.length);
    d.width = src.get<double>(node, "width", d.width);
    d.fishnet = src.get<double>(node, "fishnet", d.fishnet);
    if (d.count < 1 || d.n_points < 2 || !(d.length > 0) || !(d.width > 0) || !(d.fishnet > 0)) {
      src.invalid(node, "transect settings must be positive (n_points >= 2)");
    }
  } else {
    src.invalid(node["kind"], "design kind must be 'points' or 'transects'");
  }
  return d;
}

/// Observed data: a CSV with covariate columns and a response column.
struct DataConfig {
  std::string file;
  std::string response = "y";
};

inline DataConfig parse_data(const Source& src, const YAML::Node& node) {
  src.check_keys(node, {"file", "response"}, "data");
  return {src.resolve(src.need<std::string>(node, "file", "data")), src.get<std::string>(node, "response", "y")};
}

struct EfficiencyConfig {
  std::vector<double> sigma_u{1.0, 5.0, 10.0, 20.0};
  std::vector<int> degrees{1, 2, 3};
  int k = 3;
  double sigma_eps = 1.0;
  double beta_sd = 10.0;
  int n = 12;
};

inline EfficiencyConfig parse_efficiency(const Source& src, const YAML::Node& node) {
  EfficiencyConfig e;
  if (!node) return e;
  src.check_keys(node, {"sigma_u", "degrees", "k", "sigma_eps", "beta_sd", "n"}, "efficiency");
  e.sigma_u = src.get<std::vector<double>>(node, "sigma_u", e.sigma_u);
  e.degrees = src.get<std::vector<int>>(node, "degrees", e.degrees);
  e.k = src.get<int>(node, "k", e.k);
  e.sigma_eps = src.get<double>(node, "sigma_eps", e.sigma_eps);
  e.beta_sd = src.get<double>(node, "beta_sd", e.beta_sd);
  e.n = src.get<int>(node, "n", e.n);
  bool ok = !e.sigma_u.empty() && !e.degrees.empty() && e.k >= 2 && e.sigma_eps > 0 && e.beta_sd > 0 && e.n >= 2;
  for (double s : e.sigma_u) ok = ok && s > 0;
  for (int g : e.degrees) ok = ok && g >= 1 && g < e.n;
  if (!ok) src.invalid(node, "efficiency settings out of range");
  return e;
}

struct CorollaryConfig {
  std::vector<double> sigma_u{1.0, 10.0, 30.0};
  std::vector<int> k{3, 6, 12};
  std::vector<double> sigma_eps{0.1, 1.0};
  std::vector<int> n{12, 24};
};

inline CorollaryConfig parse_corollary(const Source& src, const YAML::Node& node) {
  CorollaryConfig c;
  if (!node) return c;
  src.check_keys(node, {"sigma_u", "k", "sigma_eps", "n"}, "corollary");
  c.sigma_u = src.get<std::vector<double>>(node, "sigma_u", c.sigma_u);
  c.k = src.get<std::vector<int>>(node, "k", c.k);
  c.sigma_eps = src.get<std::vector<double>>(node, "sigma_eps", c.sigma_eps);
  c.n = src.get<std::vector<int>>(node, "n", c.n);
  for (int n : c.n) {
    if (n != 12 && n != 24) src.invalid(node["n"], "corollary designs exist for n = 12 and 24");
  }
  return c;
}

/// A loaded config file. Sections are parsed on demand by the subcommand that
/// needs them; unknown top-level keys are rejected up front.
class Config {
 public:
  static Config load(const std::string& path) {
    const auto text = io::read_file(path);
    Config c(path, text);
    try {
      c.root_ = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
      fail(ErrorKind::InvalidConfig, path + ":" + std::to_string(e.mark.line + 1) + ":" +
                                         std::to_string(e.mark.column + 1) + ": " + e.msg);
    }
    if (!c.root_ || c.root_.IsNull()) fail(ErrorKind::InvalidConfig, path + ": empty config");
    c.src_.check_keys(c.root_,
                      {"model", "prior", "utility", "design", "optimizer", "data", "models", "efficiency", "corollary"},
                      "config");
    return c;
  }

  const Source& source() const { return src_; }
  const YAML::Node& root() const { return root_; }
  const std::string& hash() const { return hash_; }

  YAML::Node section(const std::string& key) const { return src_.section(root_, key, "config"); }
  YAML::Node optional(const std::string& key) const { return root_[key]; }

 private:
  Config(const std::string& path, const std::string& text) : src_(path), hash_(io::hex(io::fnv1a(text))) {}

  Source src_;
  std::string hash_;
  YAML::Node root_;
};

}  // namespace robustdesign::config
