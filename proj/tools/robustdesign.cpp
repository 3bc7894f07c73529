#include <CLI11.hpp>

#include "robustdesign/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bayesian optimal designs for generalised additive mixed models"};
  app.require_subcommand(1);
  robustdesign::cli::RunOptions opts;
  int l_draws = 0, e_draws = 0;
  for (const auto& name : robustdesign::cli::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config, "YAML config file")->required();
    sub->add_option("--seed", opts.seed, "master seed")->default_val(0);
    sub->add_option("--out", opts.out, "output directory")->default_val(".");
    sub->add_option("--threads", opts.threads, "worker threads")->default_val(1)->check(CLI::PositiveNumber);
    sub->add_option("--l-draws", l_draws, "outer Monte Carlo draws (overrides the config)")->check(CLI::PositiveNumber);
    sub->add_option("--e-draws", e_draws, "inner Monte Carlo draws (overrides the config)")->check(CLI::PositiveNumber);
    if (name == "evaluate-design") sub->add_option("--design", opts.design, "design CSV to evaluate")->required();
    sub->callback([&opts, sub] { opts.command = sub->get_name(); });
  }
  CLI11_PARSE(app, argc, argv);
  if (l_draws > 0) opts.l_draws = l_draws;
  if (e_draws > 0) opts.e_draws = e_draws;
  return robustdesign::cli::run(opts, std::cout, std::cerr);
}
