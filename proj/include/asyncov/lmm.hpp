#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "asyncov/types.hpp"

namespace asyncov {

struct LmmFit {
  VectorXd beta;
  double sigma_b2 = 0.0;
  double sigma_e2 = 1.0;
  VectorXd blups;  // per subject index
  bool boundary = false;
  double reml = 0.0;
};

// Random-intercept model y = X beta + b_subject + e, estimated by restricted
// maximum likelihood profiled down to the variance ratio lambda =
// sigma_b2 / sigma_e2, maximized by golden-section search on log lambda with
// an explicit boundary check at lambda = 0 (ties resolve to the boundary).
inline LmmFit fit_random_intercept_reml(const VectorXd& y, const MatrixXd& x,
                                        const std::vector<int>& subject, int n_subjects) {
  const int n = static_cast<int>(y.size());
  const int p = static_cast<int>(x.cols());
  if (static_cast<int>(subject.size()) != n) throw UsageError("subject index length mismatch");
  if (n_subjects < 2) throw UsageError("need at least 2 subjects");
  if (n <= p) throw DataError("too few observations for the fixed-effect design");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw DataError("rank-deficient fixed-effect design");

  // Per-subject sufficient statistics.
  std::vector<MatrixXd> xtx(n_subjects, MatrixXd::Zero(p, p));
  std::vector<VectorXd> xs(n_subjects, VectorXd::Zero(p));   // X_i^T 1
  std::vector<VectorXd> xty(n_subjects, VectorXd::Zero(p));
  VectorXd ys = VectorXd::Zero(n_subjects);                  // sum of y per subject
  VectorXd yty = VectorXd::Zero(n_subjects);
  VectorXd cnt = VectorXd::Zero(n_subjects);
  for (int r = 0; r < n; ++r) {
    const int i = subject[r];
    if (i < 0 || i >= n_subjects) throw UsageError("subject index out of range");
    const auto xr = x.row(r).transpose();
    xtx[i] += xr * xr.transpose();
    xs[i] += xr;
    xty[i] += xr * y(r);
    ys(i) += y(r);
    yty(i) += y(r) * y(r);
    cnt(i) += 1.0;
  }

  struct Profile {
    double reml;
    VectorXd beta;
    double sigma_e2;
  };
  auto profile = [&](double lambda) -> Profile {
    MatrixXd a = MatrixXd::Zero(p, p);
    VectorXd v = VectorXd::Zero(p);
    double q = 0.0, logdet_v0 = 0.0;
    for (int i = 0; i < n_subjects; ++i) {
      if (cnt(i) == 0.0) continue;
      const double c = lambda / (1.0 + lambda * cnt(i));
      a += xtx[i] - c * (xs[i] * xs[i].transpose());
      v += xty[i] - c * xs[i] * ys(i);
      q += yty(i) - c * ys(i) * ys(i);
      logdet_v0 += std::log(1.0 + lambda * cnt(i));
    }
    Eigen::LDLT<MatrixXd> ldlt(a);
    const VectorXd beta = ldlt.solve(v);
    const double rvr = std::max(q - beta.dot(v), 1e-300);
    const double sigma_e2 = rvr / (n - p);
    double logdet_a = 0.0;
    for (int j = 0; j < p; ++j) logdet_a += std::log(std::max(ldlt.vectorD()(j), 1e-300));
    const double reml =
        -0.5 * ((n - p) * std::log(sigma_e2) + logdet_v0 + logdet_a);
    return {reml, beta, sigma_e2};
  };

  // Golden-section maximization on log lambda.
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(1e-10), hi = std::log(1e6);
  double m1 = hi - gr * (hi - lo), m2 = lo + gr * (hi - lo);
  double f1 = profile(std::exp(m1)).reml, f2 = profile(std::exp(m2)).reml;
  for (int it = 0; it < 120; ++it) {
    if (f1 < f2) {
      lo = m1;
      m1 = m2;
      f1 = f2;
      m2 = lo + gr * (hi - lo);
      f2 = profile(std::exp(m2)).reml;
    } else {
      hi = m2;
      m2 = m1;
      f2 = f1;
      m1 = hi - gr * (hi - lo);
      f1 = profile(std::exp(m1)).reml;
    }
  }
  double lambda = std::exp(0.5 * (lo + hi));
  Profile best = profile(lambda);
  const Profile at_zero = profile(0.0);
  bool boundary = false;
  if (at_zero.reml >= best.reml - 1e-8 || lambda <= 1e-8) {
    lambda = 0.0;
    best = at_zero;
    boundary = true;
  }

  LmmFit fit;
  fit.beta = best.beta;
  fit.sigma_e2 = best.sigma_e2;
  fit.sigma_b2 = lambda * best.sigma_e2;
  fit.boundary = boundary;
  fit.reml = best.reml;
  fit.blups = VectorXd::Zero(n_subjects);
  if (lambda > 0.0) {
    VectorXd rsum = VectorXd::Zero(n_subjects);
    for (int r = 0; r < n; ++r) rsum(subject[r]) += y(r) - x.row(r).dot(fit.beta);
    for (int i = 0; i < n_subjects; ++i)
      if (cnt(i) > 0.0) fit.blups(i) = lambda * rsum(i) / (1.0 + lambda * cnt(i));
  }
  return fit;
}

struct NaiveOptions {
  std::vector<std::string> category_covariates;  // which covariates define subsets
  bool include_time = false;                     // add time to the fixed-effect design
  bool subtract_blup = true;                     // subtract predicted intercepts, not just X beta
  int min_complete = 3;
  int modality_a = 0;
  int modality_b = 1;
};

struct NaiveCell {
  MatrixXd cov, corr;
  int n_complete = 0;
  bool insufficient = false;
};

using NaiveResult = std::map<std::vector<double>, NaiveCell>;

// Per-variable random-intercept fits on all available cases, then residual
// cross-covariance between the two modality blocks over complete-case records
// within each category combination. Combinations with too few complete cases
// are flagged rather than estimated.
inline NaiveResult naive_cross_cov(const Dataset& ds, const NaiveOptions& opt) {
  const int p = ds.layout.total_dim();
  const int n_rec = ds.num_records();
  const int n_sub = ds.num_subjects();
  if (opt.modality_a == opt.modality_b || opt.modality_a >= ds.layout.num_modalities() ||
      opt.modality_b >= ds.layout.num_modalities())
    throw UsageError("invalid modality pair for the naive baseline");

  std::vector<int> cat_idx;
  for (const auto& name : opt.category_covariates) {
    auto it = std::find(ds.covariate_names.begin(), ds.covariate_names.end(), name);
    if (it == ds.covariate_names.end())
      throw UsageError("unknown covariate '" + name + "' for category grouping");
    cat_idx.push_back(static_cast<int>(it - ds.covariate_names.begin()));
  }
  if (cat_idx.empty()) throw UsageError("naive baseline needs at least one category covariate");

  // Residual matrix: NaN where a record does not observe the variable.
  MatrixXd resid = MatrixXd::Constant(n_rec, p, std::numeric_limits<double>::quiet_NaN());
  for (int k = 0; k < ds.layout.num_modalities(); ++k) {
    // Records observing modality k, with the position of the block inside y_obs.
    std::vector<int> recs, offs;
    for (int r = 0; r < n_rec; ++r) {
      const auto& mask = ds.records[r].mask;
      auto it = std::find(mask.begin(), mask.end(), k);
      if (it == mask.end()) continue;
      int off = 0;
      for (auto jt = mask.begin(); jt != it; ++jt) off += ds.layout.dim(*jt);
      recs.push_back(r);
      offs.push_back(off);
    }
    if (recs.empty()) continue;
    const int m = static_cast<int>(recs.size());
    MatrixXd xmat(m, 0);
    {
      const VectorXd probe = build_design(ds.records[recs[0]], opt.include_time);
      xmat.resize(m, probe.size());
      for (int r = 0; r < m; ++r)
        xmat.row(r) = build_design(ds.records[recs[r]], opt.include_time).transpose();
    }
    std::vector<int> subj(m);
    for (int r = 0; r < m; ++r) subj[r] = ds.record_subject[recs[r]];
    for (int j = 0; j < ds.layout.dim(k); ++j) {
      VectorXd yv(m);
      for (int r = 0; r < m; ++r) yv(r) = ds.records[recs[r]].y_obs(offs[r] + j);
      const LmmFit fit = fit_random_intercept_reml(yv, xmat, subj, n_sub);
      const int gvar = ds.layout.block_offset(k) + j;
      for (int r = 0; r < m; ++r) {
        double e = yv(r) - xmat.row(r).dot(fit.beta);
        if (opt.subtract_blup) e -= fit.blups(subj[r]);
        resid(recs[r], gvar) = e;
      }
    }
  }

  // Group complete-case records by category combination.
  std::map<std::vector<double>, std::vector<int>> groups;
  for (int r = 0; r < n_rec; ++r) {
    const auto& mask = ds.records[r].mask;
    const bool has_a = std::find(mask.begin(), mask.end(), opt.modality_a) != mask.end();
    const bool has_b = std::find(mask.begin(), mask.end(), opt.modality_b) != mask.end();
    if (!has_a || !has_b) continue;
    std::vector<double> key;
    for (int c : cat_idx) key.push_back(ds.records[r].covariates(c));
    groups[key].push_back(r);
  }

  const int pa = ds.layout.dim(opt.modality_a);
  const int pb = ds.layout.dim(opt.modality_b);
  const int oa = ds.layout.block_offset(opt.modality_a);
  const int ob = ds.layout.block_offset(opt.modality_b);

  NaiveResult out;
  for (const auto& [key, recs] : groups) {
    NaiveCell cell;
    cell.n_complete = static_cast<int>(recs.size());
    if (cell.n_complete < opt.min_complete) {
      cell.insufficient = true;
      out.emplace(key, std::move(cell));
      continue;
    }
    const int m = cell.n_complete;
    MatrixXd ea(m, pa), eb(m, pb);
    for (int r = 0; r < m; ++r) {
      ea.row(r) = resid.row(recs[r]).segment(oa, pa);
      eb.row(r) = resid.row(recs[r]).segment(ob, pb);
    }
    ea.rowwise() -= ea.colwise().mean();
    eb.rowwise() -= eb.colwise().mean();
    cell.cov = ea.transpose() * eb / static_cast<double>(m - 1);
    const VectorXd va = ea.colwise().squaredNorm().transpose() / static_cast<double>(m - 1);
    const VectorXd vb = eb.colwise().squaredNorm().transpose() / static_cast<double>(m - 1);
    MatrixXd corr =
        cell.cov.array() / (va.cwiseSqrt() * vb.cwiseSqrt().transpose()).array();
    cell.corr = corr.cwiseMin(1.0).cwiseMax(-1.0);
    out.emplace(key, std::move(cell));
  }
  return out;
}

}  // namespace asyncov
