#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "asyncov/estimands.hpp"
#include "asyncov/version.hpp"

namespace asyncov {

using Json = nlohmann::json;

inline Json vector_json(const VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json matrix_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

// Report of the intercept-scale calibration at a representative loading
// matrix: both shift conventions, their gap, and how non-diagonal the
// whitened loading product actually is (the shift assumes it is diagonal).
inline Json calibration_report(const InterceptAdjuster& adj, const MatrixXd& gamma_stacked) {
  Json j;
  const VectorXd cal = adj.calibrated_shift(gamma_stacked);
  const VectorXd prec = adj.precision_shift(gamma_stacked);
  j["calibrated_shift"] = vector_json(cal);
  j["precision_shift"] = vector_json(prec);
  j["shift_difference"] = vector_json(prec - cal);
  j["whitened_offdiag_max"] = adj.offdiag_magnitude(gamma_stacked);
  return j;
}

// Every command writes one of these next to its outputs; together with the
// input files it reproduces the run.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  Json config = Json::object();
  Json diagnostics = Json::object();
  Json calibration = Json::object();
  double wall_seconds = 0.0;

  Json to_json() const {
    Json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["config"] = config;
    if (!diagnostics.empty()) j["diagnostics"] = diagnostics;
    if (!calibration.empty()) j["calibration"] = calibration;
    j["timing"] = Json{{"wall_seconds", wall_seconds}};
    return j;
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace asyncov
