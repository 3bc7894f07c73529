#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "robustdesign/errors.hpp"
#include "robustdesign/gp.hpp"
#include "robustdesign/rng.hpp"

namespace robustdesign {

struct Coordinate {
  std::string name;
  bool discrete = true;
  std::vector<double> candidates;
  double lower = 0.0;
  double upper = 1.0;

  static Coordinate choice(std::string name, std::vector<double> candidates) {
    return {std::move(name), true, std::move(candidates), 0.0, 0.0};
  }
  static Coordinate interval(std::string name, double lower, double upper) {
    return {std::move(name), false, {}, lower, upper};
  }

  bool contains(double v) const {
    if (discrete) return std::find(candidates.begin(), candidates.end(), v) != candidates.end();
    return v >= lower && v <= upper;
  }
};

/// Returns nullopt when the design is infeasible or the evaluation failed.
using Objective = std::function<std::optional<double>(const std::vector<double>&)>;

struct Budget {
  int max_sweeps = 10;
  int m_evals = 20;
  double rel_tol = 1e-4;
  int grid_points = 1001;
};

struct DesignProblem {
  std::vector<Coordinate> coordinates;
  Objective objective;
  Budget budget;
  /// Optional generator of random starting designs; uniform over each
  /// coordinate otherwise.
  std::function<std::vector<double>(Rng&)> sampler;

  void validate() const {
    require(!coordinates.empty(), ErrorKind::InvalidParameter, "design problem has no coordinates");
    for (const auto& c : coordinates) {
      if (c.discrete) {
        require(!c.candidates.empty(), ErrorKind::InvalidParameter, "empty candidate set for " + c.name);
      } else {
        require(c.lower < c.upper, ErrorKind::InvalidParameter, "empty interval for " + c.name);
      }
    }
    require(static_cast<bool>(objective), ErrorKind::InvalidParameter, "design problem has no objective");
    require(budget.max_sweeps > 0 && budget.m_evals > 0 && budget.grid_points >= 2 && budget.rel_tol >= 0.0,
            ErrorKind::InvalidParameter, "optimisation budget must be positive");
  }
};

struct TraceRow {
  int restart = 0;
  int sweep = 0;
  int coordinate = 0;
  double old_value = 0.0;
  double new_value = 0.0;
  double objective = 0.0;
  bool accepted = false;
};

struct OptTrace {
  std::vector<TraceRow> rows;
  std::vector<double> design;
  double objective = 0.0;
  int evaluations = 0;
  int skipped = 0;
  std::vector<std::string> warnings;
};

struct OptResult {
  std::vector<double> design;
  OptTrace trace;
};

namespace detail {

/// Memoises a deterministic objective and keeps the evaluation bookkeeping.
class Evaluator {
 public:
  Evaluator(const DesignProblem& p, OptTrace& trace) : problem_(p), trace_(trace) {}

  std::optional<double> operator()(const std::vector<double>& d) {
    if (auto it = cache_.find(d); it != cache_.end()) return it->second;
    ++trace_.evaluations;
    std::optional<double> v;
    std::string why;
    try {
      v = problem_.objective(d);
      if (v && !std::isfinite(*v)) {
        v.reset();
        why = "non-finite objective";
      }
    } catch (const Error& e) {
      why = e.what();
    }
    if (!v) {
      ++trace_.skipped;
      if (trace_.warnings.size() < 100) {
        std::ostringstream os;
        os << "skipped candidate (";
        for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
        os << ")" << (why.empty() ? "" : ": " + why);
        trace_.warnings.push_back(os.str());
      }
    }
    cache_.emplace(d, v);
    return v;
  }

 private:
  const DesignProblem& problem_;
  OptTrace& trace_;
  std::map<std::vector<double>, std::optional<double>> cache_;
};

struct CoordinateStep {
  double value = 0.0;
  double objective = 0.0;
  bool accepted = false;
};

inline CoordinateStep discrete_step(const DesignProblem& p, std::vector<double> design, std::size_t c,
                                    double incumbent, Evaluator& eval) {
  const double current = design[c];
  std::vector<double> values = p.coordinates[c].candidates;
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  CoordinateStep best{current, incumbent, false};
  for (double v : values) {
    if (v == current) continue;
    design[c] = v;
    const auto f = eval(design);
    if (f && *f > best.objective) best = {v, *f, true};
  }
  return best;
}

inline CoordinateStep ace_step(const DesignProblem& p, std::vector<double> design, std::size_t c, double incumbent,
                               int m_evals, Rng rng, Evaluator& eval) {
  const auto& coord = p.coordinates[c];
  const double current = design[c];
  std::vector<double> xs{current}, fs{incumbent};
  CoordinateStep best{current, incumbent, false};
  for (int j = 0; j < m_evals; ++j) {
    const double v = coord.lower + (coord.upper - coord.lower) * (j + uniform01(rng)) / m_evals;
    design[c] = v;
    const auto f = eval(design);
    if (!f) continue;
    xs.push_back(v);
    fs.push_back(*f);
    if (*f > best.objective) best = {v, *f, true};
  }
  if (const auto gp = Gp1d::fit(xs, fs, coord.lower, coord.upper)) {
    const double v = gp->argmax(p.budget.grid_points);
    design[c] = v;
    const auto f = eval(design);
    if (f && *f > best.objective) best = {v, *f, true};
  }
  return best;
}

}  // namespace detail

inline OptResult coordinate_exchange_run(const DesignProblem& problem, std::vector<double> design, std::uint64_t seed,
                                         int restart, detail::Evaluator& eval, OptTrace& trace) {
  require(design.size() == problem.coordinates.size(), ErrorKind::ShapeMismatch,
          "initial design does not match the coordinates");
  for (std::size_t c = 0; c < design.size(); ++c) {
    require(problem.coordinates[c].contains(design[c]), ErrorKind::OutOfRange,
            "initial value outside the domain of " + problem.coordinates[c].name);
  }
  const auto start = eval(design);
  require(start.has_value(), ErrorKind::InvalidParameter, "initial design is infeasible");
  double f = *start;
  const Rng base = Rng(seed).split("ace");
  for (int sweep = 1; sweep <= problem.budget.max_sweeps; ++sweep) {
    const double f_start = f;
    for (std::size_t c = 0; c < design.size(); ++c) {
      const auto& coord = problem.coordinates[c];
      const auto step = coord.discrete
                            ? detail::discrete_step(problem, design, c, f, eval)
                            : detail::ace_step(problem, design, c, f, problem.budget.m_evals,
                                               base.split(static_cast<std::uint64_t>(sweep)).split(c), eval);
      TraceRow row{restart, sweep, static_cast<int>(c), design[c], design[c], f, false};
      if (step.accepted && step.objective > f) {
        design[c] = step.value;
        f = step.objective;
        row.new_value = step.value;
        row.objective = f;
        row.accepted = true;
      }
      trace.rows.push_back(row);
    }
    const double scale = std::max(std::abs(f_start), 1e-300);
    if ((f - f_start) / scale < problem.budget.rel_tol) break;
  }
  trace.design = design;
  trace.objective = f;
  return {design, trace};
}

/// Coordinate exchange from `init`: discrete coordinates are exchanged over
/// their whole candidate set, continuous ones through a GP-emulated step.
inline OptResult coordinate_exchange(const DesignProblem& problem, const std::vector<double>& init,
                                     std::uint64_t seed) {
  problem.validate();
  OptTrace trace;
  detail::Evaluator eval(problem, trace);
  auto out = coordinate_exchange_run(problem, init, seed, 0, eval, trace);
  out.trace = trace;
  return out;
}

/// One emulated exchange of a continuous coordinate; returns the value to use.
inline double ace_coordinate(const DesignProblem& problem, const std::vector<double>& design, std::size_t coord_index,
                             int m_evals, std::uint64_t seed) {
  problem.validate();
  require(coord_index < problem.coordinates.size(), ErrorKind::OutOfRange, "coordinate index out of range");
  require(!problem.coordinates[coord_index].discrete, ErrorKind::InvalidParameter, "coordinate is not continuous");
  require(m_evals > 0, ErrorKind::InvalidParameter, "m_evals must be positive");
  OptTrace trace;
  detail::Evaluator eval(problem, trace);
  const auto f = eval(design);
  require(f.has_value(), ErrorKind::InvalidParameter, "incumbent design is infeasible");
  return detail::ace_step(problem, design, coord_index, *f, m_evals, Rng(seed).split("ace"), eval).value;
}

inline std::vector<double> random_design(const DesignProblem& problem, Rng& rng) {
  if (problem.sampler) return problem.sampler(rng);
  std::vector<double> d;
  for (const auto& c : problem.coordinates) {
    if (c.discrete) {
      auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(c.candidates.size()));
      d.push_back(c.candidates[std::min(i, c.candidates.size() - 1)]);
    } else {
      d.push_back(c.lower + (c.upper - c.lower) * uniform01(rng));
    }
  }
  return d;
}

/// Best of `restarts` exchange runs from random feasible starts.
inline OptResult optimize_design(const DesignProblem& problem, int restarts, std::uint64_t seed) {
  problem.validate();
  require(restarts >= 1, ErrorKind::InvalidParameter, "restarts must be at least 1");
  OptTrace trace;
  detail::Evaluator eval(problem, trace);
  std::optional<OptResult> best;
  for (int r = 0; r < restarts; ++r) {
    Rng rng = Rng(seed).split("restart").split(static_cast<std::uint64_t>(r));
    const std::uint64_t run_seed = rng();
    Rng init_rng = rng.split("init");
    std::vector<double> init;
    for (int attempt = 0;; ++attempt) {
      require(attempt < 1000, ErrorKind::EstimationFailed, "no feasible random starting design found");
      init = random_design(problem, init_rng);
      if (eval(init)) break;
    }
    auto run = coordinate_exchange_run(problem, init, run_seed, r, eval, trace);
    if (!best || run.trace.objective > best->trace.objective) best = std::move(run);
  }
  trace.design = best->design;
  trace.objective = best->trace.objective;
  return {best->design, trace};
}

}  // namespace robustdesign
