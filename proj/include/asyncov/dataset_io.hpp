#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "asyncov/config.hpp"
#include "asyncov/csv.hpp"
#include "asyncov/types.hpp"

namespace asyncov {

// Column mapping for long-format CSV ingestion, parsed from a layout config:
//
//   subject_col = subject_id
//   visit_col   = visit
//   time_col    = time
//   covariates  = x1, x2
//   missing     = NA
//   include_time = false
//   modality plasma = p1, p2, p3
//   modality pet    = t1, t2, t3, t4
struct IngestSpec {
  std::string subject_col = "subject_id";
  std::string visit_col = "visit";
  std::string time_col = "time";
  std::vector<std::string> covariate_cols;
  std::string missing_token = "NA";
  bool include_time = true;
  ModalityLayout layout;

  static IngestSpec from_config(const KeyValueFile& kv) {
    IngestSpec spec;
    spec.subject_col = kv.get_or("subject_col", spec.subject_col);
    spec.visit_col = kv.get_or("visit_col", spec.visit_col);
    spec.time_col = kv.get_or("time_col", spec.time_col);
    spec.covariate_cols = kv.get_list_or("covariates");
    spec.missing_token = kv.get_or("missing", spec.missing_token);
    spec.include_time = kv.get_bool_or("include_time", spec.include_time);
    for (const auto& [name, cols] : kv.prefixed("modality")) {
      spec.layout.modality_names.push_back(name);
      spec.layout.variable_names.push_back(split_list(cols));
    }
    spec.layout.check();
    return spec;
  }

  static IngestSpec from_file(const std::string& path) {
    return from_config(KeyValueFile::parse_file(path));
  }

  std::string to_config_text() const {
    std::ostringstream out;
    out << "subject_col = " << subject_col << "\n";
    out << "visit_col = " << visit_col << "\n";
    out << "time_col = " << time_col << "\n";
    out << "covariates =";
    for (std::size_t i = 0; i < covariate_cols.size(); ++i)
      out << (i ? ", " : " ") << covariate_cols[i];
    out << "\n";
    out << "missing = " << missing_token << "\n";
    out << "include_time = " << (include_time ? "true" : "false") << "\n";
    for (int k = 0; k < layout.num_modalities(); ++k) {
      out << "modality " << layout.modality_names[k] << " =";
      for (std::size_t j = 0; j < layout.variable_names[k].size(); ++j)
        out << (j ? ", " : " ") << layout.variable_names[k][j];
      out << "\n";
    }
    return out.str();
  }
};

inline bool is_missing_cell(const std::string& cell, const std::string& token) {
  auto t = trim(cell);
  return t.empty() || t == token;
}

// Long-format ingestion. Each row becomes one record; a modality whose cells
// are all missing in a row is dropped from that row's mask. Partially missing
// blocks are rejected.
inline Dataset ingest_csv(const std::string& path, const IngestSpec& spec) {
  const CsvTable table = read_csv(path);

  const int c_subj = table.column(spec.subject_col);
  if (c_subj < 0) throw DataError(path + ": missing subject column '" + spec.subject_col + "'");
  const int c_visit = table.column(spec.visit_col);
  if (c_visit < 0) throw DataError(path + ": missing visit column '" + spec.visit_col + "'");
  const int c_time = table.column(spec.time_col);
  if (c_time < 0) throw DataError(path + ": missing time column '" + spec.time_col + "'");

  std::vector<int> c_cov;
  for (const auto& name : spec.covariate_cols) {
    int c = table.column(name);
    if (c < 0) throw DataError(path + ": missing covariate column '" + name + "'");
    c_cov.push_back(c);
  }

  const int K = spec.layout.num_modalities();
  std::vector<std::vector<int>> c_vars(K);
  for (int k = 0; k < K; ++k) {
    for (const auto& name : spec.layout.variable_names[k]) {
      int c = table.column(name);
      if (c < 0) throw DataError(path + ": missing variable column '" + name + "'");
      c_vars[k].push_back(c);
    }
  }

  Dataset ds;
  ds.layout = spec.layout;
  ds.covariate_names = spec.covariate_cols;
  ds.records.reserve(table.rows.size());

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = path + " row " + std::to_string(r + 2);

    ObservationRecord rec;
    rec.subject_id = trim(row[c_subj]);
    if (rec.subject_id.empty()) throw DataError(where + ": empty subject id");
    rec.visit = static_cast<int>(parse_double(row[c_visit], where + " visit"));
    rec.time = parse_double(row[c_time], where + " time");

    rec.covariates.resize(static_cast<Eigen::Index>(c_cov.size()));
    for (std::size_t i = 0; i < c_cov.size(); ++i) {
      if (is_missing_cell(row[c_cov[i]], spec.missing_token))
        throw DataError(where + ": missing covariate '" + spec.covariate_cols[i] +
                        "' (complete covariates are required)");
      rec.covariates(static_cast<Eigen::Index>(i)) =
          parse_double(row[c_cov[i]], where + " covariate " + spec.covariate_cols[i]);
    }

    std::vector<double> values;
    for (int k = 0; k < K; ++k) {
      int present = 0;
      for (int c : c_vars[k])
        if (!is_missing_cell(row[c], spec.missing_token)) ++present;
      if (present == 0) continue;
      if (present != static_cast<int>(c_vars[k].size()))
        throw DataError(where + ": partial modality block '" + spec.layout.modality_names[k] +
                        "' (" + std::to_string(present) + " of " +
                        std::to_string(c_vars[k].size()) + " variables present)");
      rec.mask.push_back(k);
      for (std::size_t j = 0; j < c_vars[k].size(); ++j)
        values.push_back(parse_double(row[c_vars[k][j]],
                                      where + " variable " + spec.layout.variable_names[k][j]));
    }
    if (rec.mask.empty()) throw DataError(where + ": no observed modality (empty mask)");
    rec.y_obs = Eigen::Map<VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));

    ds.records.push_back(std::move(rec));
  }

  ds.reindex();
  ds.check();
  return ds;
}

// Inverse of ingest_csv: missing blocks are written as empty cells, doubles
// in shortest round-trip form, so write -> ingest reproduces the dataset.
inline void write_dataset_csv(const std::string& path, const Dataset& ds, const IngestSpec& spec) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);

  out << spec.subject_col << "," << spec.visit_col << "," << spec.time_col;
  for (const auto& c : spec.covariate_cols) out << "," << c;
  for (const auto& v : ds.layout.flat_variable_names()) out << "," << v;
  out << "\n";

  for (const auto& rec : ds.records) {
    out << rec.subject_id << "," << rec.visit << "," << format_double(rec.time);
    for (Eigen::Index i = 0; i < rec.covariates.size(); ++i)
      out << "," << format_double(rec.covariates(i));
    int at = 0;
    for (int k = 0; k < ds.layout.num_modalities(); ++k) {
      const bool obs = std::find(rec.mask.begin(), rec.mask.end(), k) != rec.mask.end();
      for (int j = 0; j < ds.layout.dim(k); ++j) {
        if (obs)
          out << "," << format_double(rec.y_obs(at++));
        else
          out << "," << spec.missing_token;
      }
    }
    out << "\n";
  }
}

struct ValidationReport {
  int num_records = 0;
  int num_subjects = 0;
  std::map<std::string, int> records_per_subject;
  std::map<std::uint64_t, int> pattern_counts;        // mask bitset -> count
  std::map<std::uint64_t, std::vector<int>> patterns; // bitset -> mask
  int full_mask_records = 0;
  double synchrony_pct = 0.0;                         // percent of full-mask records

  std::string to_text(const ModalityLayout& layout) const {
    std::ostringstream out;
    out << "records: " << num_records << "\n";
    out << "subjects: " << num_subjects << "\n";
    out << "synchrony: " << full_mask_records << "/" << num_records << " ("
        << format_double(synchrony_pct) << "%)\n";
    out << "patterns:\n";
    for (const auto& [key, count] : pattern_counts) {
      out << "  {";
      const auto& mask = patterns.at(key);
      for (std::size_t i = 0; i < mask.size(); ++i)
        out << (i ? "," : "") << layout.modality_names[mask[i]];
      out << "}: " << count << "\n";
    }
    return out.str();
  }
};

inline ValidationReport validate(const Dataset& ds) {
  if (ds.records.empty()) throw DataError("validate: no records");
  ValidationReport rep;
  rep.num_records = ds.num_records();
  rep.num_subjects = ds.num_subjects();
  for (const auto& rec : ds.records) {
    rep.records_per_subject[rec.subject_id] += 1;
    const auto key = mask_key(rec.mask);
    rep.pattern_counts[key] += 1;
    rep.patterns.emplace(key, rec.mask);
    if (rec.full_mask(ds.layout)) ++rep.full_mask_records;
  }
  rep.synchrony_pct = 100.0 * rep.full_mask_records / rep.num_records;
  return rep;
}

}  // namespace asyncov
