#pragma once

#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "asyncov/errors.hpp"

namespace asyncov {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Grouping of variables into modality blocks. Blocks are always handled in
// ascending modality index order; y vectors concatenate blocks in that order.
struct ModalityLayout {
  std::vector<std::string> modality_names;
  std::vector<std::vector<std::string>> variable_names;  // per modality

  int num_modalities() const { return static_cast<int>(variable_names.size()); }

  int dim(int k) const { return static_cast<int>(variable_names[k].size()); }

  int total_dim() const {
    int p = 0;
    for (const auto& v : variable_names) p += static_cast<int>(v.size());
    return p;
  }

  int block_offset(int k) const {
    int off = 0;
    for (int i = 0; i < k; ++i) off += dim(i);
    return off;
  }

  std::vector<std::string> flat_variable_names() const {
    std::vector<std::string> out;
    for (const auto& block : variable_names)
      out.insert(out.end(), block.begin(), block.end());
    return out;
  }

  // Flat variable indices covered by a modality mask (ascending).
  std::vector<int> mask_variables(const std::vector<int>& mask) const {
    std::vector<int> idx;
    for (int k : mask) {
      const int off = block_offset(k);
      for (int j = 0; j < dim(k); ++j) idx.push_back(off + j);
    }
    return idx;
  }

  int mask_dim(const std::vector<int>& mask) const {
    int p = 0;
    for (int k : mask) p += dim(k);
    return p;
  }

  void check() const {
    if (num_modalities() < 1) throw DataError("layout: need at least one modality");
    if (modality_names.size() != variable_names.size())
      throw DataError("layout: modality name/variable list mismatch");
    std::set<std::string> seen;
    for (int k = 0; k < num_modalities(); ++k) {
      if (variable_names[k].empty())
        throw DataError("layout: modality '" + modality_names[k] + "' has no variables");
      for (const auto& v : variable_names[k])
        if (!seen.insert(v).second) throw DataError("layout: duplicate variable label '" + v + "'");
    }
  }
};

inline std::uint64_t mask_key(const std::vector<int>& mask) {
  std::uint64_t key = 0;
  for (int k : mask) key |= (1ULL << k);
  return key;
}

// One subject-visit row. The mask lists observed modalities in ascending
// order and y_obs stacks exactly those blocks.
struct ObservationRecord {
  std::string subject_id;
  int visit = 0;
  double time = 0.0;
  VectorXd covariates;      // x_ij, length q0
  std::vector<int> mask;    // ascending modality indices
  VectorXd y_obs;

  bool full_mask(const ModalityLayout& layout) const {
    return static_cast<int>(mask.size()) == layout.num_modalities();
  }

  void check(const ModalityLayout& layout) const {
    if (mask.empty()) throw DataError("record " + subject_id + "/" + std::to_string(visit) + ": empty modality mask");
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] < 0 || mask[i] >= layout.num_modalities())
        throw DataError("record " + subject_id + ": modality index out of range");
      if (i > 0 && mask[i] <= mask[i - 1])
        throw DataError("record " + subject_id + ": mask not strictly ascending");
    }
    if (y_obs.size() != layout.mask_dim(mask))
      throw DataError("record " + subject_id + "/" + std::to_string(visit) +
                      ": observed vector length does not match mask blocks");
  }
};

// Design vector x̃ = (1, [t], x^T)^T. The time slot is optional so the same
// builder serves both time-indexed studies and purely covariate-indexed ones.
inline VectorXd build_design(const ObservationRecord& rec, bool include_time = true) {
  const int q0 = static_cast<int>(rec.covariates.size());
  VectorXd x(1 + (include_time ? 1 : 0) + q0);
  x(0) = 1.0;
  int at = 1;
  if (include_time) x(at++) = rec.time;
  for (int i = 0; i < q0; ++i) x(at++) = rec.covariates(i);
  return x;
}

// Immutable after construction; shared read access is safe.
struct Dataset {
  ModalityLayout layout;
  std::vector<std::string> covariate_names;
  std::vector<ObservationRecord> records;
  std::vector<std::string> subject_order;            // first-appearance order
  std::unordered_map<std::string, int> subject_index;
  std::vector<int> record_subject;                   // per record

  int num_subjects() const { return static_cast<int>(subject_order.size()); }
  int num_records() const { return static_cast<int>(records.size()); }

  void reindex() {
    subject_order.clear();
    subject_index.clear();
    record_subject.clear();
    record_subject.reserve(records.size());
    for (const auto& r : records) {
      auto it = subject_index.find(r.subject_id);
      if (it == subject_index.end()) {
        int id = static_cast<int>(subject_order.size());
        subject_index.emplace(r.subject_id, id);
        subject_order.push_back(r.subject_id);
        record_subject.push_back(id);
      } else {
        record_subject.push_back(it->second);
      }
    }
  }

  void check() const {
    layout.check();
    for (const auto& r : records) {
      r.check(layout);
      if (r.covariates.size() != static_cast<Eigen::Index>(covariate_names.size()))
        throw DataError("record " + r.subject_id + ": covariate count mismatch");
    }
  }

  bool operator==(const Dataset& other) const {
    if (layout.modality_names != other.layout.modality_names) return false;
    if (layout.variable_names != other.layout.variable_names) return false;
    if (covariate_names != other.covariate_names) return false;
    if (records.size() != other.records.size()) return false;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& a = records[i];
      const auto& b = other.records[i];
      if (a.subject_id != b.subject_id || a.visit != b.visit || a.time != b.time) return false;
      if (a.mask != b.mask) return false;
      if (a.covariates.size() != b.covariates.size() || a.covariates != b.covariates) return false;
      if (a.y_obs.size() != b.y_obs.size() || a.y_obs != b.y_obs) return false;
    }
    return true;
  }
};

}  // namespace asyncov
