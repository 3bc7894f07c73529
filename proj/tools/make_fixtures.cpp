// Regenerates the synthetic shoal raster and the simulated pilot survey.
//   make_fixtures <fixtures dir> <pilot config>

#include <fstream>
#include <iostream>

#include "robustdesign/cli.hpp"

namespace rd = robustdesign;

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: make_fixtures <fixtures dir> <pilot config>\n";
    return 2;
  }
  try {
    const std::string dir = argv[1];
    const auto raster = rd::synthetic_shoal();
    std::ostringstream grid;
    rd::write_raster_layer(raster, "depth", grid);
    rd::io::write_file(dir + "/shoal_depth.grid", grid.str());

    const auto cfg = rd::config::Config::load(argv[2]);
    const auto mc = rd::config::parse_model(cfg.source(), cfg.section("model"));
    // Pilot truth: prior means of the first survey year.
    const std::vector<std::string> labels{"beta0", "beta_depth", "log_prec_u_depth", "log_prec_phi1"};
    Eigen::VectorXd truth(4);
    truth << -6.66, 5.12, -4.52, 3.40;
    const rd::GaussianDist point(truth, Eigen::MatrixXd::Zero(4, 4), labels);
    const auto model = mc.build(labels);

    rd::config::DesignConfig dc;
    dc.kind = rd::config::DesignConfig::Kind::transects;
    dc.raster = {dir + "/shoal_depth.grid"};
    dc.count = 12;
    const auto space = rd::cli::detail::TransectSpace::make(dc);
    rd::Rng rng = rd::Rng(20100101).split("pilot");
    const auto td = space.design(space.sample(rng), model.spec);
    const auto draw = rd::simulate_prior_predictive(model, model.frame(td->design.canonical()), point, rng.split("y"));

    const auto canon = td->design.canonical();
    std::ostringstream csv;
    csv << "# simulated pilot survey: 12 transects x 50 points, binomial(20) cover counts\n"
        << "easting,northing,depth,fishnet_id,y\n";
    for (Eigen::Index i = 0; i < canon.rows(); ++i) {
      csv << rd::io::format_double(canon.coords(i, 0)) << "," << rd::io::format_double(canon.coords(i, 1)) << ","
          << rd::io::format_double(canon.values(i, 0)) << "," << canon.groups[static_cast<std::size_t>(i)] << ","
          << draw.y(i) << "\n";
    }
    rd::io::write_file(dir + "/shoal_pilot.csv", csv.str());
  } catch (const rd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
