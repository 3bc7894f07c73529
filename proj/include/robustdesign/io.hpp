#pragma once

#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "robustdesign/errors.hpp"
#include "robustdesign/gaussian.hpp"

namespace robustdesign::io {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Whole-string parse; subnormals and "nan" are accepted.
inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty() || std::isspace(static_cast<unsigned char>(s.front()))) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path);
  out << content;
  require(static_cast<bool>(out), ErrorKind::IoError, "failed writing " + path);
}

/// Provenance stamped on every artifact.
struct Stamp {
  std::string config_hash;
  std::uint64_t seed = 0;

  std::string csv_line() const { return "# config_hash=" + config_hash + ", seed=" + std::to_string(seed) + "\n"; }
};

/// A CSV table: '#' lines are comments, the first other line is the header.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> comments;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }

  std::vector<double> numbers(const std::string& name, const std::string& source = "table") const {
    const int c = column(name);
    require(c >= 0, ErrorKind::MissingCovariate, source + ": no column '" + name + "'");
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& cell = rows[r][static_cast<std::size_t>(c)];
      const auto v = parse_double(cell);
      require(v.has_value(), ErrorKind::IoError,
              source + ": row " + std::to_string(r + 1) + ", column '" + name + "': not a number: '" + cell + "'");
      out.push_back(*v);
    }
    return out;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline Table parse_csv(const std::string& text, const std::string& source = "csv") {
  Table t;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(line);
      continue;
    }
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    require(cells.size() == t.header.size(), ErrorKind::IoError,
            source + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                " fields, found " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  require(!t.header.empty(), ErrorKind::IoError, source + ": no header line");
  return t;
}

inline Table read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

/// Prior file: labelled mean and covariance, plus the hash of the model it
/// was produced for.
struct PriorFile {
  GaussianDist prior;
  std::string model_hash;  ///< empty when the file does not pin a model
};

inline std::string prior_to_json(const GaussianDist& prior, const std::string& model_hash, const Stamp& stamp) {
  nlohmann::ordered_json j;
  j["config_hash"] = stamp.config_hash;
  j["seed"] = stamp.seed;
  j["model_hash"] = model_hash;
  j["labels"] = prior.labels;
  std::vector<double> mean(prior.mean.data(), prior.mean.data() + prior.mean.size());
  j["mean"] = mean;
  std::vector<std::vector<double>> cov;
  for (Eigen::Index i = 0; i < prior.cov.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < prior.cov.cols(); ++k) row.push_back(prior.cov(i, k));
    cov.push_back(row);
  }
  j["cov"] = cov;
  return j.dump(2) + "\n";
}

/// Accepts either a full covariance ("cov") or independent standard
/// deviations ("sd").
inline PriorFile prior_from_json(const std::string& text, const std::string& source = "prior") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::IoError, source + ": " + e.what());
  }
  try {
    PriorFile out;
    const auto labels = j.at("labels").get<std::vector<std::string>>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    require(labels.size() == mean.size(), ErrorKind::IoError, source + ": labels and mean differ in length");
    VectorXd m = Eigen::Map<const VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    const auto t = m.size();
    MatrixXd cov(t, t);
    if (j.contains("cov")) {
      const auto rows = j.at("cov").get<std::vector<std::vector<double>>>();
      require(rows.size() == mean.size(), ErrorKind::IoError, source + ": covariance has the wrong shape");
      for (Eigen::Index i = 0; i < t; ++i) {
        require(rows[static_cast<std::size_t>(i)].size() == mean.size(), ErrorKind::IoError,
                source + ": covariance has the wrong shape");
        for (Eigen::Index k = 0; k < t; ++k) cov(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      }
    } else {
      const auto sd = j.at("sd").get<std::vector<double>>();
      require(sd.size() == mean.size(), ErrorKind::IoError, source + ": labels and sd differ in length");
      cov = MatrixXd::Zero(t, t);
      for (Eigen::Index i = 0; i < t; ++i) cov(i, i) = sd[static_cast<std::size_t>(i)] * sd[static_cast<std::size_t>(i)];
    }
    out.prior = GaussianDist(m, cov, labels);
    if (j.contains("model_hash")) out.model_hash = j.at("model_hash").get<std::string>();
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::IoError, source + ": " + e.what());
  }
}

inline PriorFile read_prior(const std::string& path) { return prior_from_json(read_file(path), path); }

}  // namespace robustdesign::io
