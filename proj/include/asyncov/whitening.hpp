#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "asyncov/linalg.hpp"
#include "asyncov/types.hpp"

namespace asyncov {

struct EmpiricalCov {
  VectorXd mean;       // available-case mean per variable
  MatrixXd cov;        // pairwise-complete, PSD-repaired
  MatrixXd cov_raw;    // before repair
  Eigen::MatrixXi n_pairs;
  double min_eig_raw = 0.0;
  bool repaired = false;
};

// Pairwise-complete covariance of the stacked variable vector. Each variable's
// mean uses all records where its modality is observed; each covariance entry
// uses records where both variables are observed, with an (n-1) denominator.
// Entries with fewer than two co-observations are set to zero. The result is
// eigenvalue-clipped to be safely positive definite.
inline EmpiricalCov empirical_covariance(const Dataset& ds, double floor_rel = 1e-6) {
  const int p = ds.layout.total_dim();
  EmpiricalCov out;
  out.mean = VectorXd::Zero(p);
  out.cov_raw = MatrixXd::Zero(p, p);
  out.n_pairs = Eigen::MatrixXi::Zero(p, p);
  VectorXd n_obs = VectorXd::Zero(p);

  // Scatter each record's observed block into full-length index space.
  std::vector<std::vector<int>> idx;  // per record: global variable indices
  idx.reserve(ds.records.size());
  for (const auto& rec : ds.records) {
    std::vector<int> ix;
    for (int k : rec.mask) {
      const int off = ds.layout.block_offset(k);
      for (int j = 0; j < ds.layout.dim(k); ++j) ix.push_back(off + j);
    }
    idx.push_back(std::move(ix));
    for (std::size_t a = 0; a < idx.back().size(); ++a) {
      out.mean(idx.back()[a]) += ds.records[idx.size() - 1].y_obs(static_cast<Eigen::Index>(a));
      n_obs(idx.back()[a]) += 1.0;
    }
  }
  for (int a = 0; a < p; ++a) {
    if (n_obs(a) == 0.0) {
      const auto names = ds.layout.flat_variable_names();
      throw DataError("variable '" + names[a] + "' is never observed; cannot estimate covariance");
    }
    out.mean(a) /= n_obs(a);
  }

  for (std::size_t r = 0; r < ds.records.size(); ++r) {
    const auto& ix = idx[r];
    const auto& y = ds.records[r].y_obs;
    for (std::size_t a = 0; a < ix.size(); ++a) {
      const double da = y(static_cast<Eigen::Index>(a)) - out.mean(ix[a]);
      for (std::size_t b = a; b < ix.size(); ++b) {
        const double db = y(static_cast<Eigen::Index>(b)) - out.mean(ix[b]);
        out.cov_raw(ix[a], ix[b]) += da * db;
        out.n_pairs(ix[a], ix[b]) += 1;
      }
    }
  }
  for (int a = 0; a < p; ++a)
    for (int b = a; b < p; ++b) {
      const int n = out.n_pairs(a, b);
      double v = 0.0;
      if (n >= 2)
        v = out.cov_raw(a, b) / (n - 1);
      else if (a == b)
        throw DataError("variable index " + std::to_string(a) +
                        " observed fewer than twice; cannot estimate variance");
      out.cov_raw(a, b) = out.cov_raw(b, a) = v;
      out.n_pairs(b, a) = n;
    }

  out.cov = clip_to_psd(out.cov_raw, floor_rel, &out.min_eig_raw);
  out.repaired = out.min_eig_raw < floor_rel * sym_eig(out.cov_raw).values.maxCoeff();
  return out;
}

// Whitener for one missingness pattern: the inverse symmetric square root of
// the principal submatrix of the working covariance on the observed variables.
struct PatternWhitener {
  std::vector<int> mask;      // modalities, ascending
  std::vector<int> var_idx;   // global variable indices
  MatrixXd w;                 // inv sqrt of submatrix, m x m
};

class WhiteningCache {
 public:
  WhiteningCache() = default;
  WhiteningCache(ModalityLayout layout, MatrixXd sigma_bar, double floor_rel = 1e-6)
      : layout_(std::move(layout)), sigma_bar_(std::move(sigma_bar)), floor_rel_(floor_rel) {}

  const MatrixXd& sigma_bar() const { return sigma_bar_; }
  const ModalityLayout& layout() const { return layout_; }

  const PatternWhitener& get(const std::vector<int>& mask) const {
    const std::uint64_t key = mask_key(mask);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ++compute_count_;
    PatternWhitener pw;
    pw.mask = mask;
    for (int k : mask) {
      const int off = layout_.block_offset(k);
      for (int j = 0; j < layout_.dim(k); ++j) pw.var_idx.push_back(off + j);
    }
    const int m = static_cast<int>(pw.var_idx.size());
    MatrixXd sub(m, m);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) sub(a, b) = sigma_bar_(pw.var_idx[a], pw.var_idx[b]);
    pw.w = sym_inv_sqrt(sub, floor_rel_, "pattern covariance");
    return cache_.emplace(key, std::move(pw)).first->second;
  }

  // Precompute whiteners for every pattern present in the dataset.
  void warm(const Dataset& ds) const {
    std::set<std::uint64_t> seen;
    for (const auto& rec : ds.records)
      if (seen.insert(mask_key(rec.mask)).second) get(rec.mask);
  }

  int compute_count() const { return compute_count_; }
  std::size_t size() const { return cache_.size(); }

 private:
  ModalityLayout layout_;
  MatrixXd sigma_bar_;
  double floor_rel_ = 1e-6;
  mutable std::map<std::uint64_t, PatternWhitener> cache_;
  mutable int compute_count_ = 0;
};

}  // namespace asyncov
