#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "asyncov/errors.hpp"

namespace asyncov {

// Shortest representation that round-trips the exact double.
inline std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& cell, const std::string& where) {
  const char* b = cell.data();
  const char* e = b + cell.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t' || *(e - 1) == '\r')) --e;
  double x = 0;
  auto res = std::from_chars(b, e, x);
  if (res.ec != std::errc() || res.ptr != e)
    throw DataError("non-numeric cell at " + where + ": '" + cell + "'");
  return x;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    cells.push_back(cur);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() && in.eof()) break;
    auto cells = split_csv_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw DataError(path + ": row " + std::to_string(t.rows.size() + 2) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw DataError(path + ": empty file");
  return t;
}

// Matrix CSV with row/column labels in the first column/row.
inline void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m,
                             const std::vector<std::string>& row_names,
                             const std::vector<std::string>& col_names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << "";
  for (const auto& c : col_names) out << "," << c;
  out << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << (i < static_cast<Eigen::Index>(row_names.size()) ? row_names[i] : std::to_string(i));
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << "," << format_double(m(i, j));
    out << "\n";
  }
}

inline Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  const int nc = static_cast<int>(t.header.size()) - 1;
  const int nr = static_cast<int>(t.rows.size());
  if (nc < 1 || nr < 1) throw DataError(path + ": not a labeled matrix CSV");
  Eigen::MatrixXd m(nr, nc);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j)
      m(i, j) = parse_double(t.rows[i][j + 1], path + " row " + std::to_string(i + 2));
  return m;
}

// Unlabeled numeric matrix, one row per line (used for draw persistence).
inline void write_plain_matrix(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ",";
      out << format_double(m(i, j));
    }
    out << "\n";
  }
}

inline Eigen::MatrixXd read_plain_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    std::vector<double> r;
    r.reserve(cells.size());
    for (const auto& c : cells) r.push_back(parse_double(c, path));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError(path + ": empty matrix file");
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw DataError(path + ": ragged matrix rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

}  // namespace asyncov
