#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "asyncov/config.hpp"
#include "asyncov/csv.hpp"
#include "asyncov/diagnostics.hpp"
#include "asyncov/fit.hpp"

namespace asyncov {

// Human-readable coordinate names for the flat parameter vector, aligned
// with ParamLayout's ordering.
inline std::vector<std::string> theta_names(const ModelConfig& cfg) {
  const ParamLayout lay = ParamLayout::make(cfg);
  std::vector<std::string> names(lay.total);
  for (int k = 0; k < lay.K; ++k)
    for (int i = 0; i < lay.p[k]; ++i)
      for (int j = 0; j < lay.d; ++j)
        names[lay.x_index(k, i, j)] =
            "x_" + cfg.layout.variable_names[k][i] + "_" + std::to_string(j + 1);
  lay.for_each_a([&](int at, int l, int c, bool diag) {
    names[at] = std::string(diag ? "a_log" : "a") + "_" + std::to_string(l + 1) + "_" +
                std::to_string(c + 1);
  });
  for (int l = 0; l < lay.d; ++l)
    for (int c = 0; c < lay.q; ++c)
      names[lay.bt_index(l, c)] = "bt_" + std::to_string(l + 1) + "_" + std::to_string(c + 1);
  for (int i = 0; i < lay.N; ++i)
    for (int l = 0; l < lay.d; ++l)
      names[lay.b_index(i, l)] = "bstd_" + std::to_string(i + 1) + "_" + std::to_string(l + 1);
  for (int l = 0; l < lay.lw_len; ++l) names[lay.lw_off + l] = "log_wb_" + std::to_string(l + 1);
  return names;
}

inline void write_draws_csv(const std::string& path, const FitResult& fr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "chain,draw,logp";
  for (const auto& n : theta_names(fr.cfg)) out << ',' << n;
  out << '\n';
  for (std::size_t c = 0; c < fr.sample.chains.size(); ++c) {
    const ChainResult& chain = fr.sample.chains[c];
    for (Eigen::Index r = 0; r < chain.draws.rows(); ++r) {
      out << (c + 1) << ',' << (r + 1) << ',' << format_double(chain.logp(r));
      for (Eigen::Index j = 0; j < chain.draws.cols(); ++j)
        out << ',' << format_double(chain.draws(r, j));
      out << '\n';
    }
  }
}

// Scalar convergence table: one row per coordinate plus the joint density
// trace. R-hat entries are NaN when only one chain was run.
struct ScalarDiag {
  std::string name;
  double rhat = std::numeric_limits<double>::quiet_NaN();
  double ess = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<ScalarDiag> coordinate_diagnostics(const FitResult& fr) {
  const auto names = theta_names(fr.cfg);
  const std::size_t m = fr.sample.chains.size();
  std::vector<ScalarDiag> table;
  auto add = [&](const std::string& name, const std::vector<VectorXd>& traces) {
    ScalarDiag d;
    d.name = name;
    if (m >= 2) d.rhat = split_rhat(traces);
    d.ess = split_ess(traces);
    table.push_back(d);
  };
  std::vector<VectorXd> traces(m);
  for (std::size_t j = 0; j < names.size(); ++j) {
    for (std::size_t c = 0; c < m; ++c) traces[c] = fr.sample.chains[c].draws.col(j);
    add(names[j], traces);
  }
  for (std::size_t c = 0; c < m; ++c) traces[c] = fr.sample.chains[c].logp;
  add("logp", traces);
  return table;
}

inline void write_diagnostics_csv(const std::string& path, const std::vector<ScalarDiag>& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "name,split_rhat,ess\n";
  for (const auto& d : table) {
    out << d.name << ',' << (std::isfinite(d.rhat) ? format_double(d.rhat) : std::string()) << ','
        << (std::isfinite(d.ess) ? format_double(d.ess) : std::string()) << '\n';
  }
}

// Persists everything summarize needs: the retained draws, the working
// covariance, and a config describing layout and dimensions.
inline void write_fit_artifacts(const std::string& dir, const FitResult& fr,
                                const std::vector<std::string>& covariate_names) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_draws_csv((fs::path(dir) / "draws.csv").string(), fr);
  const auto vars = fr.cfg.layout.flat_variable_names();
  write_matrix_csv((fs::path(dir) / "sigma_bar.csv").string(), fr.cov.cov, vars, vars);

  std::ofstream cfg((fs::path(dir) / "fit_config.cfg").string(), std::ios::binary);
  if (!cfg) throw DataError("cannot open fit_config.cfg for writing");
  for (int k = 0; k < fr.cfg.layout.num_modalities(); ++k) {
    cfg << "modality " << fr.cfg.layout.modality_names[k] << " =";
    const auto& block = fr.cfg.layout.variable_names[k];
    for (std::size_t i = 0; i < block.size(); ++i) cfg << (i ? "," : " ") << block[i];
    cfg << '\n';
  }
  cfg << "covariates =";
  for (std::size_t i = 0; i < covariate_names.size(); ++i)
    cfg << (i ? "," : " ") << covariate_names[i];
  cfg << '\n';
  cfg << "rank = " << fr.cfg.rank << '\n';
  cfg << "include_time = " << (fr.cfg.include_time ? "true" : "false") << '\n';
  cfg << "num_subjects = " << fr.cfg.num_subjects << '\n';
}

struct FitArtifacts {
  FitResult fit;
  std::vector<std::string> covariate_names;
};

inline FitArtifacts load_fit_artifacts(const std::string& dir) {
  namespace fs = std::filesystem;
  const KeyValueFile kv = KeyValueFile::parse_file((fs::path(dir) / "fit_config.cfg").string());
  FitArtifacts art;
  ModelConfig& cfg = art.fit.cfg;
  for (const auto& [name, value] : kv.prefixed("modality")) {
    cfg.layout.modality_names.push_back(name);
    cfg.layout.variable_names.push_back(split_list(value));
  }
  cfg.layout.check();
  art.covariate_names = split_list(kv.get_or("covariates", ""));
  cfg.rank = static_cast<int>(kv.get_int("rank"));
  cfg.include_time = kv.get_bool_or("include_time", true);
  cfg.num_subjects = static_cast<int>(kv.get_int("num_subjects"));
  cfg.design_dim =
      1 + (cfg.include_time ? 1 : 0) + static_cast<int>(art.covariate_names.size());
  cfg.check();

  art.fit.cov.cov = read_matrix_csv((fs::path(dir) / "sigma_bar.csv").string());
  if (art.fit.cov.cov.rows() != cfg.layout.total_dim())
    throw DataError("sigma_bar.csv does not match the layout dimension");

  const CsvTable t = read_csv((fs::path(dir) / "draws.csv").string());
  const ParamLayout lay = ParamLayout::make(cfg);
  const int dim = lay.total;
  if (static_cast<int>(t.header.size()) != dim + 3)
    throw DataError("draws.csv has " + std::to_string(t.header.size()) + " columns; expected " +
                    std::to_string(dim + 3));
  std::map<int, std::vector<std::pair<double, VectorXd>>> per_chain;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = "draws.csv row " + std::to_string(r + 2);
    const int chain = static_cast<int>(parse_double(row[0], where));
    VectorXd theta(dim);
    for (int j = 0; j < dim; ++j) theta(j) = parse_double(row[3 + j], where);
    per_chain[chain].emplace_back(parse_double(row[2], where), std::move(theta));
  }
  if (per_chain.empty()) throw DataError("draws.csv holds no draws");
  for (const auto& [chain, rows] : per_chain) {
    ChainResult cr;
    cr.draws.resize(static_cast<Eigen::Index>(rows.size()), dim);
    cr.logp.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      cr.logp(static_cast<Eigen::Index>(r)) = rows[r].first;
      cr.draws.row(static_cast<Eigen::Index>(r)) = rows[r].second.transpose();
    }
    art.fit.sample.chains.push_back(std::move(cr));
  }
  art.fit.sample.dim = dim;
  return art;
}

// Builds the design vector for a named-covariate query, validating names
// against the fit's covariates (plus "time" when the fit used it).
inline VectorXd query_design(const std::vector<std::pair<std::string, double>>& assignments,
                             const std::vector<std::string>& covariate_names, bool include_time) {
  const int q = 1 + (include_time ? 1 : 0) + static_cast<int>(covariate_names.size());
  VectorXd x = VectorXd::Zero(q);
  x(0) = 1.0;
  auto known = [&]() {
    std::string s = include_time ? "time" : "";
    for (const auto& n : covariate_names) s += (s.empty() ? "" : ", ") + n;
    return s.empty() ? std::string("(none)") : s;
  };
  for (const auto& [name, value] : assignments) {
    if (include_time && name == "time") {
      x(1) = value;
      continue;
    }
    const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
    if (it == covariate_names.end())
      throw UsageError("unknown covariate '" + name + "'; known: " + known());
    x(1 + (include_time ? 1 : 0) +
      static_cast<int>(it - covariate_names.begin())) = value;
  }
  return x;
}

}  // namespace asyncov
