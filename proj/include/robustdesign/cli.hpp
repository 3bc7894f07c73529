#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "robustdesign/config.hpp"
#include "robustdesign/conjugate.hpp"
#include "robustdesign/efficiency.hpp"
#include "robustdesign/geo.hpp"
#include "robustdesign/io.hpp"
#include "robustdesign/laplace.hpp"
#include "robustdesign/optimize.hpp"
#include "robustdesign/utility.hpp"

namespace robustdesign::cli {

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"fit-pilot",     "select-model", "find-design",
                                              "evaluate-design", "efficiency", "corollary-study"};
  return names;
}

struct RunOptions {
  std::string command;
  std::string config;
  std::string out = ".";
  std::string design;  ///< evaluate-design input
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<int> l_draws;
  std::optional<int> e_draws;
};

/// File name -> content, written under the output directory.
using Artifacts = std::map<std::string, std::string>;

namespace detail {

using nlohmann::ordered_json;

inline std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

inline ordered_json stamp_json(const io::Stamp& s) {
  ordered_json j;
  j["config_hash"] = s.config_hash;
  j["seed"] = s.seed;
  return j;
}

/// Design rows from a CSV: one column per model covariate, group ids from
/// `fishnet_id` (or `group`) and `group2`, coordinates from easting/northing.
inline Design design_from_table(const io::Table& t, const GammSpec& spec, const std::string& source) {
  Design d;
  d.covariates = spec.covariates();
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  require(n > 0, ErrorKind::IoError, source + ": no design rows");
  d.values.resize(n, static_cast<Eigen::Index>(d.covariates.size()));
  for (std::size_t c = 0; c < d.covariates.size(); ++c) {
    const auto v = t.numbers(d.covariates[c], source);
    for (Eigen::Index i = 0; i < n; ++i) d.values(i, static_cast<Eigen::Index>(c)) = v[static_cast<std::size_t>(i)];
  }
  auto ids = [&](const std::string& name) {
    std::vector<long> out;
    for (double v : t.numbers(name, source)) {
      require(std::floor(v) == v, ErrorKind::IoError, source + ": group ids must be integers");
      out.push_back(static_cast<long>(v));
    }
    return out;
  };
  if (spec.random_effect.kind == RandomEffectKind::grouped) {
    const std::string col = t.column("fishnet_id") >= 0 ? "fishnet_id" : "group";
    d.groups = ids(col);
    if (spec.random_effect.second_grouping) {
      d.groups2 = t.column("group2") >= 0 ? ids("group2") : std::vector<long>(static_cast<std::size_t>(n), 0);
    }
  }
  if (t.column("easting") >= 0 && t.column("northing") >= 0) {
    const auto e = t.numbers("easting", source), nn = t.numbers("northing", source);
    d.coords.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      d.coords(i, 0) = e[static_cast<std::size_t>(i)];
      d.coords(i, 1) = nn[static_cast<std::size_t>(i)];
    }
  }
  return d;
}

/// Candidate transects: start points at fishnet cell centres, any angle.
struct TransectSpace {
  Raster raster;
  TransectLayout layout;
  int count = 0;
  std::vector<double> eastings;
  std::vector<double> northings;

  static TransectSpace make(const config::DesignConfig& dc) {
    TransectSpace s{load_raster(dc.raster)};
    s.layout.n_points = dc.n_points;
    s.layout.width = dc.width;
    s.layout.length = dc.length;
    s.layout.fishnet = dc.fishnet;
    s.count = dc.count;
    const auto net = Fishnet::over(s.raster, dc.fishnet);
    for (int c = 0; c < net.ncols; ++c) s.eastings.push_back(net.center(0, c).e);
    for (int r = 0; r < net.nrows; ++r) s.northings.push_back(net.center(r, 0).n);
    return s;
  }

  std::vector<Coordinate> coordinates() const {
    std::vector<Coordinate> out;
    for (int t = 0; t < count; ++t) {
      const auto id = std::to_string(t + 1);
      out.push_back(Coordinate::choice("e0_" + id, eastings));
      out.push_back(Coordinate::choice("n0_" + id, northings));
      out.push_back(Coordinate::interval("omega_" + id, 0.0, 2.0 * std::numbers::pi));
    }
    return out;
  }

  std::vector<TransectParams> params(const std::vector<double>& x) const {
    std::vector<TransectParams> out;
    for (int t = 0; t < count; ++t) {
      const auto k = static_cast<std::size_t>(3 * t);
      out.push_back({x[k], x[k + 1], x[k + 2], layout.length});
    }
    return out;
  }

  bool feasible(const TransectParams& t) const {
    for (const auto& p : transect_points(t, layout.n_points)) {
      if (!raster.in_bounds(p)) return false;
    }
    return true;
  }

  /// Independent uniform draws per transect, redrawn until the transect fits.
  std::vector<double> sample(Rng& rng) const {
    std::vector<double> x;
    for (int t = 0; t < count; ++t) {
      for (int attempt = 0;; ++attempt) {
        require(attempt < 100000, ErrorKind::TransectOutOfBounds, "no transect of this length fits the raster");
        auto pick = [&](const std::vector<double>& v) {
          const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(v.size()));
          return v[std::min(i, v.size() - 1)];
        };
        const TransectParams p{pick(eastings), pick(northings), 2.0 * std::numbers::pi * uniform01(rng), layout.length};
        if (feasible(p)) {
          x.insert(x.end(), {p.e0, p.n0, p.omega});
          break;
        }
      }
    }
    return x;
  }

  std::optional<TransectDesign> design(const std::vector<double>& x, const GammSpec& spec) const {
    const auto ps = params(x);
    for (const auto& p : ps) {
      if (!feasible(p)) return std::nullopt;
    }
    auto td = transects_to_design(raster, ps, spec, layout);
    if (spec.random_effect.second_grouping) td.design.groups2.assign(td.design.groups.size(), 0);
    return td;
  }
};

inline std::string transect_design_csv(const TransectDesign& td, const io::Stamp& stamp) {
  std::ostringstream os;
  os << stamp.csv_line() << "transect_id,point_id,easting,northing";
  for (const auto& c : td.design.covariates) os << "," << c;
  os << ",fishnet_id\n";
  for (Eigen::Index i = 0; i < td.design.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    os << td.transect_id[k] << "," << td.point_id[k] << "," << io::format_double(td.design.coords(i, 0)) << ","
       << io::format_double(td.design.coords(i, 1));
    for (Eigen::Index c = 0; c < td.design.values.cols(); ++c) os << "," << io::format_double(td.design.values(i, c));
    os << "," << td.design.groups[k] << "\n";
  }
  return os.str();
}

inline std::string points_design_csv(const Design& d, const io::Stamp& stamp) {
  std::ostringstream os;
  os << stamp.csv_line() << "point_id";
  for (const auto& c : d.covariates) os << "," << c;
  if (!d.groups.empty()) os << ",group";
  os << "\n";
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    os << i;
    for (Eigen::Index c = 0; c < d.values.cols(); ++c) os << "," << io::format_double(d.values(i, c));
    if (!d.groups.empty()) os << "," << d.groups[static_cast<std::size_t>(i)];
    os << "\n";
  }
  return os.str();
}

inline ordered_json utility_json(const UtilityEstimate& u) {
  ordered_json j;
  j["expected_utility"] = u.value;
  j["mc_se"] = u.mc_se;
  j["l_draws"] = u.l_draws;
  j["failed_draws"] = u.failed_draws;
  j["ridged_draws"] = u.ridged_draws;
  return j;
}

/// Everything a design evaluation needs, assembled from the config.
struct DesignRun {
  config::Config cfg;
  config::ModelConfig model_cfg;
  io::PriorFile prior;
  Model model;
  config::UtilityConfig utility;
  UtilityOptions uopts;
  io::Stamp stamp;

  static DesignRun make(const RunOptions& opts) {
    DesignRun r{config::Config::load(opts.config), {}, {}, {}, {}, {}, {}};
    const auto& src = r.cfg.source();
    r.model_cfg = config::parse_model(src, r.cfg.section("model"));
    const auto pnode = r.cfg.section("prior");
    r.prior = config::parse_prior(src, pnode);
    config::check_prior(src, pnode, r.prior, r.model_cfg);
    r.model = r.model_cfg.build(r.prior.prior.labels);
    r.utility = config::parse_utility(src, r.cfg.optional("utility"));
    if (opts.l_draws) r.utility.l_draws = *opts.l_draws;
    if (opts.e_draws) r.utility.e_draws = *opts.e_draws;
    require(r.utility.l_draws >= 1 && r.utility.e_draws >= 1, ErrorKind::InvalidConfig,
            "l_draws and e_draws must be at least 1");
    r.uopts.l_draws = r.utility.l_draws;
    r.uopts.seed = Rng(opts.seed).split("utility")();
    r.uopts.threads = opts.threads;
    r.uopts.fit.marginal.e_draws = r.utility.e_draws;
    r.stamp = {r.cfg.hash(), opts.seed};
    return r;
  }

  UtilityEstimate evaluate(const Design& d) const { return expected_utility(model, prior.prior, d, uopts); }

  ordered_json header() const {
    auto j = stamp_json(stamp);
    j["model_hash"] = model_cfg.hash();
    j["e_draws"] = utility.e_draws;
    return j;
  }
};

inline Artifacts find_design(const RunOptions& opts) {
  const auto run = DesignRun::make(opts);
  const auto& src = run.cfg.source();
  const auto dc = config::parse_design(src, run.cfg.section("design"), run.model_cfg);
  const auto oc = config::parse_optimizer(src, run.cfg.optional("optimizer"));
  const auto& spec = run.model.spec;
  const auto covs = spec.covariates();

  DesignProblem problem;
  problem.budget = oc.budget;
  std::optional<TransectSpace> space;
  std::function<Design(const std::vector<double>&)> to_points;
  if (dc.kind == config::DesignConfig::Kind::transects) {
    space = TransectSpace::make(dc);
    problem.coordinates = space->coordinates();
    problem.sampler = [&](Rng& rng) { return space->sample(rng); };
    problem.objective = [&](const std::vector<double>& x) -> std::optional<double> {
      const auto td = space->design(x, spec);
      if (!td) return std::nullopt;
      return run.evaluate(td->design).value;
    };
  } else {
    for (int i = 0; i < dc.n; ++i) {
      for (const auto& c : covs) {
        const auto [lo, hi] = dc.bounds.at(c);
        const auto name = c + "_" + std::to_string(i + 1);
        if (dc.candidates == 0) {
          problem.coordinates.push_back(Coordinate::interval(name, lo, hi));
        } else {
          std::vector<double> cand;
          for (int j = 0; j < dc.candidates; ++j) cand.push_back(lo + (hi - lo) * j / (dc.candidates - 1));
          problem.coordinates.push_back(Coordinate::choice(name, cand));
        }
      }
    }
    to_points = [&, n = dc.n](const std::vector<double>& x) {
      Design d;
      d.covariates = covs;
      d.values.resize(n, static_cast<Eigen::Index>(covs.size()));
      for (int i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < covs.size(); ++c) {
          d.values(i, static_cast<Eigen::Index>(c)) = x[static_cast<std::size_t>(i) * covs.size() + c];
        }
      }
      if (spec.random_effect.kind == RandomEffectKind::grouped) {
        for (int i = 0; i < n; ++i) d.groups.push_back(i);
        if (spec.random_effect.second_grouping) d.groups2.assign(static_cast<std::size_t>(n), 0);
      }
      return d;
    };
    problem.objective = [&](const std::vector<double>& x) -> std::optional<double> {
      return run.evaluate(to_points(x)).value;
    };
  }

  const auto result = optimize_design(problem, oc.restarts, Rng(opts.seed).split("optimizer")());
  Artifacts out;
  auto summary = run.header();
  summary["design_kind"] = space ? "transects" : "points";
  Design final_design;
  if (space) {
    const auto td = space->design(result.design, spec);
    require(td.has_value(), ErrorKind::EstimationFailed, "optimised transects are infeasible");
    final_design = td->design;
    out["design.csv"] = transect_design_csv(*td, run.stamp);
    std::ostringstream ts;
    ts << run.stamp.csv_line() << "transect_id,e0,n0,omega,length,e1,n1\n";
    const auto ps = space->params(result.design);
    for (std::size_t t = 0; t < ps.size(); ++t) {
      const auto end = transect_endpoint(ps[t]);
      ts << t << "," << io::format_double(ps[t].e0) << "," << io::format_double(ps[t].n0) << ","
         << io::format_double(ps[t].omega) << "," << io::format_double(ps[t].length) << "," << io::format_double(end.e)
         << "," << io::format_double(end.n) << "\n";
    }
    out["transects.csv"] = ts.str();
    const int dcol = final_design.column_index(space->layout.depth_covariate);
    if (dcol >= 0) {
      summary["mean_design_depth"] = final_design.values.col(dcol).mean();
      summary["raster_mean_depth"] = space->raster.mean_depth();
    }
  } else {
    final_design = to_points(result.design);
    out["design.csv"] = points_design_csv(final_design, run.stamp);
  }

  std::ostringstream tr;
  tr << run.stamp.csv_line() << "restart,sweep,coordinate,name,old_value,new_value,objective,accepted\n";
  for (const auto& row : result.trace.rows) {
    tr << row.restart << "," << row.sweep << "," << row.coordinate << ","
       << problem.coordinates[static_cast<std::size_t>(row.coordinate)].name << "," << io::format_double(row.old_value)
       << "," << io::format_double(row.new_value) << "," << io::format_double(row.objective) << ","
       << (row.accepted ? 1 : 0) << "\n";
  }
  out["trace.csv"] = tr.str();

  const auto u = run.evaluate(final_design);
  summary["n"] = final_design.rows();
  summary["restarts"] = oc.restarts;
  summary["evaluations"] = result.trace.evaluations;
  summary["skipped"] = result.trace.skipped;
  summary["optimizer_objective"] = result.trace.objective;
  summary.update(utility_json(u));
  out["design.json"] = dump(summary);
  return out;
}

inline Artifacts evaluate_design(const RunOptions& opts) {
  const auto run = DesignRun::make(opts);
  require(!opts.design.empty(), ErrorKind::InvalidConfig, "evaluate-design needs --design <file>");
  const auto table = io::read_csv(opts.design);
  const auto d = design_from_table(table, run.model.spec, opts.design);
  auto j = run.header();
  j["n"] = d.rows();
  j.update(utility_json(run.evaluate(d)));
  return {{"evaluation.json", dump(j)}};
}

/// Response vector and design rows of an observed data set.
inline std::pair<Design, VectorXd> load_data(const config::DataConfig& dc, const GammSpec& spec) {
  const auto table = io::read_csv(dc.file);
  const auto y = table.numbers(dc.response, dc.file);
  return {design_from_table(table, spec, dc.file), Eigen::Map<const VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()))};
}

inline Artifacts fit_pilot_cmd(const RunOptions& opts) {
  const auto cfg = config::Config::load(opts.config);
  const auto& src = cfg.source();
  const auto mc = config::parse_model(src, cfg.section("model"));
  const auto pnode = cfg.section("prior");
  const auto vague = config::parse_prior(src, pnode);
  config::check_prior(src, pnode, vague, mc);
  auto uc = config::parse_utility(src, cfg.optional("utility"));
  if (opts.e_draws) uc.e_draws = *opts.e_draws;
  const auto data = config::parse_data(src, cfg.section("data"));
  const Model model = mc.build(vague.prior.labels);
  const auto [design, y] = load_data(data, model.spec);
  FitOptions fo;
  fo.marginal.e_draws = uc.e_draws;
  const auto joint = fit_pilot(model, design, y, vague.prior, fo, Rng(opts.seed).split("pilot"));
  const auto theta = joint.marginal(model.layout.theta_labels);
  return {{"prior.json", io::prior_to_json(theta, mc.hash(), {cfg.hash(), opts.seed})}};
}

inline Artifacts select_model_cmd(const RunOptions& opts) {
  const auto cfg = config::Config::load(opts.config);
  const auto& src = cfg.source();
  const auto data = config::parse_data(src, cfg.section("data"));
  auto uc = config::parse_utility(src, cfg.optional("utility"));
  if (opts.e_draws) uc.e_draws = *opts.e_draws;
  const auto models = cfg.section("models");
  if (!models.IsSequence() || models.size() == 0) src.invalid(models, "'models' must be a non-empty list");
  std::vector<std::string> names;
  std::vector<double> log_ev, prior_p;
  std::vector<bool> converged;
  for (std::size_t j = 0; j < models.size(); ++j) {
    const auto node = models[j];
    src.check_keys(node, {"name", "prior_prob", "model", "prior"}, "models entry");
    names.push_back(src.need<std::string>(node, "name", "models entry"));
    prior_p.push_back(src.need<double>(node, "prior_prob", "models entry"));
    const auto mc = config::parse_model(src, src.section(node, "model", "models entry"));
    const auto pnode = src.section(node, "prior", "models entry");
    const auto prior = config::parse_prior(src, pnode);
    config::check_prior(src, pnode, prior, mc);
    const Model model = mc.build(prior.prior.labels);
    const auto [design, y] = load_data(data, model.spec);
    FitOptions fo;
    fo.marginal.e_draws = uc.e_draws;
    const auto frame = model.frame(design);
    double ev = -std::numeric_limits<double>::infinity();
    bool ok = false;
    try {
      const auto fit = laplace_fit(model, frame, prior.prior.marginal(model.layout.theta_labels), y, fo,
                                   Rng(opts.seed).split("select").split(j));
      if (std::isfinite(fit.log_evidence)) {
        ev = fit.log_evidence;
        ok = true;
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::InvalidConfig || e.kind() == ErrorKind::IoError) throw;
    }
    log_ev.push_back(ev);
    converged.push_back(ok);
  }
  const VectorXd post = posterior_model_probs(
      Eigen::Map<const VectorXd>(log_ev.data(), static_cast<Eigen::Index>(log_ev.size())),
      Eigen::Map<const VectorXd>(prior_p.data(), static_cast<Eigen::Index>(prior_p.size())));
  std::ostringstream os;
  os << io::Stamp{cfg.hash(), opts.seed}.csv_line() << "model,log_evidence,prior_prob,posterior_prob,converged\n";
  for (std::size_t j = 0; j < names.size(); ++j) {
    os << names[j] << "," << io::format_double(log_ev[j]) << "," << io::format_double(prior_p[j]) << ","
       << io::format_double(post(static_cast<Eigen::Index>(j))) << "," << (converged[j] ? 1 : 0) << "\n";
  }
  return {{"model_selection.csv", os.str()}};
}

inline Artifacts efficiency_cmd(const RunOptions& opts) {
  const auto cfg = config::Config::load(opts.config);
  const auto& src = cfg.source();
  const auto ec = config::parse_efficiency(src, cfg.optional("efficiency"));
  const auto oc = config::parse_optimizer(src, cfg.optional("optimizer"));
  auto uc = config::parse_utility(src, cfg.optional("utility"));
  if (opts.l_draws) uc.l_draws = *opts.l_draws;
  EfficiencyStudyOptions eo;
  eo.sigma_u = ec.sigma_u;
  eo.degrees = ec.degrees;
  eo.k = ec.k;
  eo.sigma_eps = ec.sigma_eps;
  eo.beta_sd = ec.beta_sd;
  eo.n = ec.n;
  eo.l_draws = uc.l_draws;
  eo.restarts = oc.restarts;
  eo.budget = oc.budget;
  eo.seed = opts.seed;
  eo.threads = opts.threads;
  const auto study = efficiency_study(eo);
  const io::Stamp stamp{cfg.hash(), opts.seed};
  std::ostringstream table, designs;
  table << stamp.csv_line() << "design,sigma_u,reference_degree,efficiency,se\n";
  for (const auto& c : study.cells) {
    double su = std::numeric_limits<double>::quiet_NaN();
    for (const auto& d : study.designs) {
      if (d.name == c.design) su = d.sigma_u;
    }
    table << c.design << "," << io::format_double(su) << "," << c.degree << "," << io::format_double(c.ratio) << ","
          << io::format_double(c.se) << "\n";
  }
  designs << stamp.csv_line() << "design,point_id,x\n";
  for (const auto& d : study.designs) {
    for (std::size_t i = 0; i < d.x.size(); ++i) designs << d.name << "," << i << "," << io::format_double(d.x[i]) << "\n";
  }
  return {{"efficiency.csv", table.str()}, {"efficiency_designs.csv", designs.str()}};
}

inline Artifacts corollary_cmd(const RunOptions& opts) {
  const auto cfg = config::Config::load(opts.config);
  const auto& src = cfg.source();
  const auto cc = config::parse_corollary(src, cfg.optional("corollary"));
  auto uc = config::parse_utility(src, cfg.optional("utility"));
  if (opts.l_draws) uc.l_draws = *opts.l_draws;
  CorollaryOptions co;
  co.sigma_u_grid = cc.sigma_u;
  co.k_grid = cc.k;
  co.sigma_eps_grid = cc.sigma_eps;
  co.n_grid = cc.n;
  co.l_draws = uc.l_draws;
  co.seed = opts.seed;
  const auto rows = corollary_study(co);
  std::ostringstream os;
  os << io::Stamp{cfg.hash(), opts.seed}.csv_line() << "n,design,sigma_u,k,sigma_eps,expected_kld,mc_se,rank\n";
  for (const auto& r : rows) {
    os << r.n << "," << r.design_index << "," << io::format_double(r.sigma_u) << "," << r.k << ","
       << io::format_double(r.sigma_eps) << "," << io::format_double(r.expected_kld) << ","
       << io::format_double(r.mc_se) << "," << r.rank << "\n";
  }
  return {{"corollary.csv", os.str()}};
}

}  // namespace detail

/// Runs a subcommand and returns its artifacts without touching the disk.
inline Artifacts execute(const RunOptions& opts) {
  require(opts.threads >= 1, ErrorKind::InvalidParameter, "--threads must be at least 1");
  if (opts.command == "fit-pilot") return detail::fit_pilot_cmd(opts);
  if (opts.command == "select-model") return detail::select_model_cmd(opts);
  if (opts.command == "find-design") return detail::find_design(opts);
  if (opts.command == "evaluate-design") return detail::evaluate_design(opts);
  if (opts.command == "efficiency") return detail::efficiency_cmd(opts);
  if (opts.command == "corollary-study") return detail::corollary_cmd(opts);
  fail(ErrorKind::InvalidParameter, "unknown subcommand '" + opts.command + "'");
}

inline void write_artifacts(const Artifacts& artifacts, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create " + dir + ": " + ec.message());
  for (const auto& [name, content] : artifacts) io::write_file((std::filesystem::path(dir) / name).string(), content);
}

/// Exit status: 0 success, 2 bad config or input file, 1 anything else.
inline int run(const RunOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    const auto artifacts = execute(opts);
    write_artifacts(artifacts, opts.out);
    for (const auto& [name, content] : artifacts) out << (std::filesystem::path(opts.out) / name).string() << "\n";
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::InvalidConfig || e.kind() == ErrorKind::IoError ? 2 : 1;
  }
}

}  // namespace robustdesign::cli
