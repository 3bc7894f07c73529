#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "robustdesign/errors.hpp"
#include "robustdesign/gamm.hpp"
#include "robustdesign/io.hpp"

namespace robustdesign {

struct Point {
  double e = 0.0;
  double n = 0.0;
};

/// A regular grid of named layers. Cell (r, c) covers easting
/// [origin_e + c*cell, origin_e + (c+1)*cell) and northing
/// [origin_n + r*cell, origin_n + (r+1)*cell); row 0 is the southern edge.
/// Cells where depth is NaN are masked.
class Raster {
 public:
  Raster(int ncols, int nrows, double origin_e, double origin_n, double cell)
      : ncols_(ncols), nrows_(nrows), origin_e_(origin_e), origin_n_(origin_n), cell_(cell) {
    require(ncols > 0 && nrows > 0, ErrorKind::InvalidParameter, "raster needs at least one cell");
    require(cell > 0.0 && std::isfinite(cell), ErrorKind::InvalidParameter, "raster cell size must be > 0");
    require(std::isfinite(origin_e) && std::isfinite(origin_n), ErrorKind::InvalidParameter,
            "raster origin must be finite");
  }

  int ncols() const { return ncols_; }
  int nrows() const { return nrows_; }
  double origin_e() const { return origin_e_; }
  double origin_n() const { return origin_n_; }
  double cell() const { return cell_; }
  double width() const { return ncols_ * cell_; }
  double height() const { return nrows_ * cell_; }

  /// Layer values are nrows x ncols with row 0 southernmost.
  void add_layer(const std::string& name, MatrixXd values) {
    require(values.rows() == nrows_ && values.cols() == ncols_, ErrorKind::ShapeMismatch,
            "layer '" + name + "' does not match the raster dimensions");
    require(!name.empty(), ErrorKind::InvalidParameter, "layer name is empty");
    layers_[name] = std::move(values);
  }

  bool has_layer(const std::string& name) const { return layers_.count(name) > 0; }

  const MatrixXd& layer(const std::string& name) const {
    const auto it = layers_.find(name);
    require(it != layers_.end(), ErrorKind::MissingCovariate, "raster has no layer '" + name + "'");
    return it->second;
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : layers_) out.push_back(k);
    return out;
  }

  bool valid(int r, int c) const {
    if (r < 0 || c < 0 || r >= nrows_ || c >= ncols_) return false;
    return std::isfinite(layer("depth")(r, c));
  }

  bool inside(Point p) const {
    return p.e >= origin_e_ && p.e <= origin_e_ + width() && p.n >= origin_n_ && p.n <= origin_n_ + height();
  }

  /// Cell containing p; points on the far edges belong to the last cell.
  std::pair<int, int> cell_of(Point p) const {
    int c = static_cast<int>(std::floor((p.e - origin_e_) / cell_));
    int r = static_cast<int>(std::floor((p.n - origin_n_) / cell_));
    return {std::clamp(r, 0, nrows_ - 1), std::clamp(c, 0, ncols_ - 1)};
  }

  /// Inside the grid and in an unmasked cell.
  bool in_bounds(Point p) const {
    if (!inside(p)) return false;
    const auto [r, c] = cell_of(p);
    return valid(r, c);
  }

  Point center(int r, int c) const { return {origin_e_ + (c + 0.5) * cell_, origin_n_ + (r + 0.5) * cell_}; }

  /// Mean depth over unmasked cells.
  double mean_depth() const {
    const auto& d = layer("depth");
    double s = 0.0;
    long n = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (std::isfinite(d.data()[i])) {
        s += d.data()[i];
        ++n;
      }
    }
    require(n > 0, ErrorKind::MissingCovariate, "raster has no valid cells");
    return s / static_cast<double>(n);
  }

  std::pair<double, double> depth_range() const {
    const auto& d = layer("depth");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (std::isfinite(d.data()[i])) {
        lo = std::min(lo, d.data()[i]);
        hi = std::max(hi, d.data()[i]);
      }
    }
    require(lo <= hi, ErrorKind::MissingCovariate, "raster has no valid cells");
    return {lo, hi};
  }

  void validate() const {
    const auto& d = layer("depth");
    for (const auto& [name, v] : layers_) {
      for (int r = 0; r < nrows_; ++r) {
        for (int c = 0; c < ncols_; ++c) {
          if (std::isfinite(d(r, c))) {
            require(!std::isinf(v(r, c)), ErrorKind::InvalidConfig, "layer '" + name + "' has infinite values");
          }
        }
      }
    }
  }

 private:
  int ncols_, nrows_;
  double origin_e_, origin_n_, cell_;
  std::map<std::string, MatrixXd> layers_;
};

/// Bilinear interpolation between the four surrounding cell centres. Masked or
/// off-grid neighbours drop out and the remaining weights are renormalised.
inline double lookup(const Raster& raster, Point p, const std::string& layer) {
  require(raster.inside(p), ErrorKind::OutOfRange, "point outside the raster");
  const auto& v = raster.layer(layer);
  const double gx = (p.e - raster.origin_e()) / raster.cell() - 0.5;
  const double gy = (p.n - raster.origin_n()) / raster.cell() - 0.5;
  const int c0 = static_cast<int>(std::floor(gx));
  const int r0 = static_cast<int>(std::floor(gy));
  const double fx = gx - c0, fy = gy - r0;
  double num = 0.0, den = 0.0;
  const int dr[4] = {0, 0, 1, 1}, dc[4] = {0, 1, 0, 1};
  for (int k = 0; k < 4; ++k) {
    const int r = r0 + dr[k], c = c0 + dc[k];
    const double w = (dc[k] ? fx : 1.0 - fx) * (dr[k] ? fy : 1.0 - fy);
    if (w == 0.0 || !raster.valid(r, c) || !std::isfinite(v(r, c))) continue;
    num += w * v(r, c);
    den += w;
  }
  require(den > 0.0, ErrorKind::MissingCovariate, "all neighbouring cells are masked");
  return num / den;
}

inline std::vector<double> lookup(const Raster& raster, const std::vector<Point>& points, const std::string& layer) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(lookup(raster, p, layer));
  return out;
}

// Plain-text raster: six header lines then nrows lines of ncols values,
// southern row first. See docs/raster_format.md.

inline void write_raster_layer(const Raster& raster, const std::string& name, std::ostream& out) {
  const auto& v = raster.layer(name);
  out << "layer " << name << "\n"
      << "ncols " << raster.ncols() << "\n"
      << "nrows " << raster.nrows() << "\n"
      << "origin_easting " << io::format_double(raster.origin_e()) << "\n"
      << "origin_northing " << io::format_double(raster.origin_n()) << "\n"
      << "cellsize " << io::format_double(raster.cell()) << "\n";
  for (int r = 0; r < raster.nrows(); ++r) {
    for (int c = 0; c < raster.ncols(); ++c) out << (c ? " " : "") << io::format_double(v(r, c));
    out << "\n";
  }
}

struct RasterLayerFile {
  std::string name;
  int ncols = 0, nrows = 0;
  double origin_e = 0.0, origin_n = 0.0, cell = 0.0;
  MatrixXd values;
};

inline RasterLayerFile read_raster_layer(std::istream& in, const std::string& source = "raster") {
  RasterLayerFile f;
  int line_no = 0;
  auto header = [&](const char* key) {
    std::string line;
    ++line_no;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::IoError,
            source + ":" + std::to_string(line_no) + ": missing header '" + key + "'");
    std::istringstream ls(line);
    std::string k, value, extra;
    ls >> k >> value;
    require(k == key && !value.empty() && !(ls >> extra), ErrorKind::IoError,
            source + ":" + std::to_string(line_no) + ": expected '" + key + " <value>'");
    return value;
  };
  auto number = [&](const std::string& s, const char* key) {
    if (const auto v = io::parse_double(s)) return *v;
    fail(ErrorKind::IoError, source + ":" + std::to_string(line_no) + ": bad value for " + key);
  };
  f.name = header("layer");
  f.ncols = static_cast<int>(number(header("ncols"), "ncols"));
  f.nrows = static_cast<int>(number(header("nrows"), "nrows"));
  f.origin_e = number(header("origin_easting"), "origin_easting");
  f.origin_n = number(header("origin_northing"), "origin_northing");
  f.cell = number(header("cellsize"), "cellsize");
  require(f.ncols > 0 && f.nrows > 0 && f.cell > 0.0, ErrorKind::IoError, source + ": invalid raster geometry");
  f.values.resize(f.nrows, f.ncols);
  for (int r = 0; r < f.nrows; ++r) {
    std::string line;
    ++line_no;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::IoError,
            source + ":" + std::to_string(line_no) + ": missing grid row");
    std::istringstream ls(line);
    std::string tok;
    int c = 0;
    while (ls >> tok) {
      require(c < f.ncols, ErrorKind::IoError, source + ":" + std::to_string(line_no) + ": too many values");
      f.values(r, c++) = (tok == "nan" || tok == "NaN") ? std::numeric_limits<double>::quiet_NaN()
                                                        : number(tok, "cell");
    }
    require(c == f.ncols, ErrorKind::IoError, source + ":" + std::to_string(line_no) + ": too few values");
  }
  return f;
}

/// Loads one or more layer files sharing a geometry; one must be `depth`.
inline Raster load_raster(const std::vector<std::string>& paths) {
  require(!paths.empty(), ErrorKind::IoError, "no raster files given");
  std::optional<Raster> raster;
  for (const auto& path : paths) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot open raster file " + path);
    auto f = read_raster_layer(in, path);
    if (!raster) {
      raster.emplace(f.ncols, f.nrows, f.origin_e, f.origin_n, f.cell);
    } else {
      require(f.ncols == raster->ncols() && f.nrows == raster->nrows() && f.origin_e == raster->origin_e() &&
                  f.origin_n == raster->origin_n() && f.cell == raster->cell(),
              ErrorKind::ShapeMismatch, path + ": layer geometry differs from the first layer");
    }
    raster->add_layer(f.name, std::move(f.values));
  }
  require(raster->has_layer("depth"), ErrorKind::MissingCovariate, "raster stack has no depth layer");
  raster->validate();
  return *raster;
}

/// Regular grid of square cells anchored at the raster origin. Ids run
/// row-major from the south-west cell.
struct Fishnet {
  double origin_e = 0.0;
  double origin_n = 0.0;
  double size = 500.0;
  int ncols = 1;
  int nrows = 1;

  static Fishnet over(const Raster& raster, double size) {
    require(size > 0.0, ErrorKind::InvalidParameter, "fishnet cell size must be > 0");
    Fishnet f;
    f.origin_e = raster.origin_e();
    f.origin_n = raster.origin_n();
    f.size = size;
    f.ncols = static_cast<int>(std::ceil(raster.width() / size - 1e-9));
    f.nrows = static_cast<int>(std::ceil(raster.height() / size - 1e-9));
    return f;
  }

  /// Floor division; a point on a shared edge goes to the cell on its lower
  /// (or left) side.
  static int index(double offset, double size, int count) {
    const double q = offset / size;
    int i = static_cast<int>(std::floor(q));
    if (static_cast<double>(i) == q && i > 0) --i;
    return std::clamp(i, 0, count - 1);
  }

  long id(Point p) const {
    const int c = index(p.e - origin_e, size, ncols);
    const int r = index(p.n - origin_n, size, nrows);
    return static_cast<long>(r) * ncols + c;
  }

  Point center(int r, int c) const { return {origin_e + (c + 0.5) * size, origin_n + (r + 0.5) * size}; }
};

struct TransectParams {
  double e0 = 0.0;
  double n0 = 0.0;
  double omega = 0.0;
  double length = 500.0;
};

inline Point transect_endpoint(const TransectParams& t) {
  return {t.e0 + t.length * std::cos(t.omega), t.n0 + t.length * std::sin(t.omega)};
}

/// Equally spaced points from start to end inclusive.
inline std::vector<Point> transect_points(const TransectParams& t, int n_points) {
  require(n_points >= 2, ErrorKind::InvalidParameter, "a transect needs at least two points");
  require(t.length > 0.0, ErrorKind::InvalidParameter, "transect length must be > 0");
  const double ce = std::cos(t.omega), sn = std::sin(t.omega);
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const double s = t.length * i / (n_points - 1);
    out.push_back({t.e0 + s * ce, t.n0 + s * sn});
  }
  return out;
}

/// Like transect_points, but every point must fall on unmasked raster cells.
inline std::vector<Point> sample_transect(const Raster& raster, const TransectParams& t, int n_points,
                                          double width = 50.0) {
  require(width > 0.0, ErrorKind::InvalidParameter, "transect width must be > 0");
  auto pts = transect_points(t, n_points);
  for (const auto& p : pts) {
    require(raster.in_bounds(p), ErrorKind::TransectOutOfBounds, "transect leaves the valid raster area");
  }
  return pts;
}

struct TransectLayout {
  int n_points = 50;
  double width = 50.0;
  double length = 500.0;
  double fishnet = 500.0;
  std::string depth_covariate = "depth";
};

struct TransectDesign {
  Design design;
  std::vector<int> transect_id;
  std::vector<int> point_id;
};

/// Stacks the sampled points of all transects into a design: one covariate
/// column per model covariate (looked up from the layer of the same name),
/// fishnet ids as groups and the planar coordinates.
inline TransectDesign transects_to_design(const Raster& raster, const std::vector<TransectParams>& transects,
                                          const GammSpec& spec, const TransectLayout& layout = {}) {
  require(!transects.empty(), ErrorKind::InvalidParameter, "no transects");
  const auto fishnet = Fishnet::over(raster, layout.fishnet);
  auto covariates = spec.covariates();
  if (covariates.empty()) covariates.push_back(layout.depth_covariate);
  std::vector<Point> all;
  TransectDesign out;
  for (std::size_t i = 0; i < transects.size(); ++i) {
    const auto pts = sample_transect(raster, transects[i], layout.n_points, layout.width);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      all.push_back(pts[j]);
      out.transect_id.push_back(static_cast<int>(i));
      out.point_id.push_back(static_cast<int>(j));
    }
  }
  const auto n = static_cast<Eigen::Index>(all.size());
  auto& d = out.design;
  d.covariates = covariates;
  d.values.resize(n, static_cast<Eigen::Index>(covariates.size()));
  d.coords.resize(n, 2);
  d.groups.resize(all.size());
  for (std::size_t k = 0; k < covariates.size(); ++k) {
    const auto vals = lookup(raster, all, covariates[k]);
    for (Eigen::Index i = 0; i < n; ++i) d.values(i, static_cast<Eigen::Index>(k)) = vals[static_cast<std::size_t>(i)];
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = all[static_cast<std::size_t>(i)];
    d.coords(i, 0) = p.e;
    d.coords(i, 1) = p.n;
    d.groups[static_cast<std::size_t>(i)] = fishnet.id(p);
  }
  return out;
}

/// CSV with columns transect_id, point_id, easting, northing, <depth>, fishnet_id.
inline void write_transect_csv(const TransectDesign& td, std::ostream& out, const std::string& depth_covariate = "depth") {
  const int dc = td.design.column_index(depth_covariate);
  require(dc >= 0, ErrorKind::MissingCovariate, "design has no depth column");
  out << "transect_id,point_id,easting,northing," << depth_covariate << ",fishnet_id\n";
  for (Eigen::Index i = 0; i < td.design.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out << td.transect_id[k] << "," << td.point_id[k] << "," << io::format_double(td.design.coords(i, 0)) << ","
        << io::format_double(td.design.coords(i, 1)) << "," << io::format_double(td.design.values(i, dc)) << ","
        << td.design.groups[k] << "\n";
  }
}

/// Smooth synthetic bathymetry: two overlapping crests on an elliptical shoal,
/// rescaled so valid depths span exactly [deepest, shallowest]. Cells outside
/// the ellipse are masked.
inline Raster synthetic_shoal(int ncols = 120, int nrows = 90, double cell = 100.0, double deepest = -60.0,
                              double shallowest = -18.0) {
  Raster raster(ncols, nrows, 0.0, 0.0, cell);
  MatrixXd g(nrows, ncols);
  const double w = ncols * cell, h = nrows * cell;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int r = 0; r < nrows; ++r) {
    for (int c = 0; c < ncols; ++c) {
      const auto p = raster.center(r, c);
      const double u = (p.e - 0.5 * w) / (0.47 * w), v = (p.n - 0.5 * h) / (0.45 * h);
      if (u * u + v * v > 1.0) {
        g(r, c) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      auto bump = [&](double ce, double cn, double se, double sn) {
        const double a = (p.e - ce * w) / (se * w), b = (p.n - cn * h) / (sn * h);
        return std::exp(-0.5 * (a * a + b * b));
      };
      const double ridge = 0.15 * std::sin(2.0 * std::numbers::pi * p.e / (0.6 * w)) * std::cos(std::numbers::pi * p.n / h);
      g(r, c) = bump(0.35, 0.6, 0.12, 0.14) + 0.8 * bump(0.68, 0.38, 0.1, 0.12) + ridge - 0.3 * (u * u + v * v);
      lo = std::min(lo, g(r, c));
      hi = std::max(hi, g(r, c));
    }
  }
  MatrixXd depth = g;
  for (Eigen::Index i = 0; i < depth.size(); ++i) {
    if (std::isfinite(depth.data()[i])) depth.data()[i] = deepest + (shallowest - deepest) * (g.data()[i] - lo) / (hi - lo);
  }
  raster.add_layer("depth", depth);
  return raster;
}

}  // namespace robustdesign
