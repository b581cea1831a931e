// Pairwise-complete covariance pooling and per-pattern whitening: estimator
// consistency, PSD repair, degenerate-pair handling, whitener identities,
// memoization, and the diagonalizing property under a spectral covariance.
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "asyncov/linalg.hpp"
#include "asyncov/rng.hpp"
#include "asyncov/types.hpp"
#include "asyncov/whitening.hpp"
#include "oracles.hpp"

using namespace asyncov;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ModalityLayout layout_pq(int p1, int p2) {
  ModalityLayout lay;
  lay.modality_names = {"m1", "m2"};
  lay.variable_names.resize(2);
  for (int j = 0; j < p1; ++j) lay.variable_names[0].push_back("m1v" + std::to_string(j + 1));
  for (int j = 0; j < p2; ++j) lay.variable_names[1].push_back("m2v" + std::to_string(j + 1));
  lay.check();
  return lay;
}

ObservationRecord make_record(const std::string& subj, int visit, const std::vector<int>& mask,
                              const VectorXd& y) {
  ObservationRecord rec;
  rec.subject_id = subj;
  rec.visit = visit;
  rec.time = 0.0;
  rec.covariates = VectorXd(0);
  rec.mask = mask;
  rec.y_obs = y;
  return rec;
}

// Gaussian records with a random mask mix over a 3+4 layout.
Dataset gaussian_dataset(const MatrixXd& root, int n, double sync, Rng& rng) {
  const int p = static_cast<int>(root.rows());
  Dataset ds;
  ds.layout = layout_pq(3, p - 3);
  ds.covariate_names = {};
  for (int i = 0; i < n; ++i) {
    VectorXd z(p);
    for (int l = 0; l < p; ++l) z(l) = rng.normal();
    const VectorXd y = root * z;
    std::vector<int> mask;
    const double u = rng.uniform();
    if (u < sync)
      mask = {0, 1};
    else if (rng.uniform() < 0.5)
      mask = {0};
    else
      mask = {1};
    VectorXd yo;
    if (mask.size() == 2)
      yo = y;
    else if (mask[0] == 0)
      yo = y.head(3);
    else
      yo = y.tail(p - 3);
    ds.records.push_back(make_record("s" + std::to_string(i), 1, mask, yo));
  }
  ds.reindex();
  ds.check();
  return ds;
}

}  // namespace

TEST(EmpiricalCov, SynchronousMatchesSampleCovariance) {
  Rng rng(1);
  const int p = 7, n = 40;
  MatrixXd draws(n, p);
  Dataset ds;
  ds.layout = layout_pq(3, 4);
  ds.covariate_names = {};
  for (int i = 0; i < n; ++i) {
    VectorXd y(p);
    for (int l = 0; l < p; ++l) y(l) = rng.normal() + 0.3 * l;
    draws.row(i) = y.transpose();
    ds.records.push_back(make_record("s" + std::to_string(i), 1, {0, 1}, y));
  }
  ds.reindex();
  const EmpiricalCov ec = empirical_covariance(ds);
  const MatrixXd ref = oracles::sample_cov(draws);
  EXPECT_LT(max_abs(ec.cov_raw - ref), 1e-10);
  EXPECT_LT(max_abs(ec.mean.transpose() - draws.colwise().mean()), 1e-12);
  EXPECT_FALSE(ec.repaired);
  EXPECT_LT(max_abs(ec.cov - ec.cov_raw), 1e-12);
  EXPECT_EQ(ec.n_pairs(0, 6), n);
}

TEST(EmpiricalCov, PairwiseCompleteRecoversIdentity) {
  Rng rng(2);
  const MatrixXd root = MatrixXd::Identity(7, 7);
  const Dataset ds = gaussian_dataset(root, 5000, 0.5, rng);
  const EmpiricalCov ec = empirical_covariance(ds);
  EXPECT_LT(max_abs(ec.cov - MatrixXd::Identity(7, 7)), 0.1);
}

TEST(EmpiricalCov, PairwiseCompleteRecoversDenseCovariance) {
  Rng rng(3);
  MatrixXd a(7, 7);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) a(i, j) = rng.normal() * 0.4;
  const MatrixXd sigma = a * a.transpose() + MatrixXd::Identity(7, 7);
  const MatrixXd root = sym_sqrt(sigma);
  const Dataset ds = gaussian_dataset(root, 20000, 0.6, rng);
  const EmpiricalCov ec = empirical_covariance(ds);
  EXPECT_LT(max_abs(ec.cov - sigma) / max_abs(sigma), 0.1);
}

TEST(EmpiricalCov, NeverObservedVariableNamed) {
  Dataset ds;
  ds.layout = layout_pq(3, 4);
  ds.covariate_names = {};
  Rng rng(4);
  for (int i = 0; i < 5; ++i) {
    VectorXd y(3);
    for (int l = 0; l < 3; ++l) y(l) = rng.normal();
    ds.records.push_back(make_record("s" + std::to_string(i), 1, {0}, y));
  }
  ds.reindex();
  try {
    empirical_covariance(ds);
    FAIL() << "expected never-observed error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("m2v1"), std::string::npos) << e.what();
  }
}

TEST(EmpiricalCov, SingleCoObservationGivesZeroEntry) {
  // Cross-block pairs observed exactly once -> covariance entry forced to 0.
  Dataset ds;
  ds.layout = layout_pq(3, 4);
  ds.covariate_names = {};
  Rng rng(5);
  auto draw = [&](int m) {
    VectorXd y(m);
    for (int l = 0; l < m; ++l) y(l) = rng.normal();
    return y;
  };
  for (int i = 0; i < 6; ++i) ds.records.push_back(make_record("a" + std::to_string(i), 1, {0}, draw(3)));
  for (int i = 0; i < 6; ++i) ds.records.push_back(make_record("b" + std::to_string(i), 1, {1}, draw(4)));
  ds.records.push_back(make_record("c", 1, {0, 1}, draw(7)));
  ds.reindex();
  const EmpiricalCov ec = empirical_covariance(ds);
  EXPECT_EQ(ec.n_pairs(0, 4), 1);
  EXPECT_EQ(ec.cov_raw(0, 4), 0.0);
  // Diagonal variances still come from their marginal samples.
  EXPECT_GT(ec.cov_raw(0, 0), 0.0);
}

TEST(EmpiricalCov, IndefinitePoolingGetsRepaired) {
  // Three single-variable modalities observed in disjoint pairs with
  // correlations +1, +1, -1: the pooled matrix has a guaranteed negative
  // eigenvalue along (1, -1, 1) and must be clipped.
  ModalityLayout lay;
  lay.modality_names = {"u", "v", "w"};
  lay.variable_names = {{"u1"}, {"v1"}, {"w1"}};
  Dataset ds;
  ds.layout = lay;
  ds.covariate_names = {};
  Rng rng(6);
  auto pair_rec = [&](const std::string& s, std::vector<int> mask, double a, double b) {
    VectorXd y(2);
    y << a, b;
    ds.records.push_back(make_record(s, 1, std::move(mask), y));
  };
  for (int i = 0; i < 10; ++i) {
    const double z1 = rng.normal(), z2 = rng.normal(), z3 = rng.normal();
    pair_rec("a" + std::to_string(i), {0, 1}, z1, z1);
    pair_rec("b" + std::to_string(i), {1, 2}, z2, z2);
    pair_rec("c" + std::to_string(i), {0, 2}, z3, -z3);
  }
  ds.reindex();
  const EmpiricalCov ec = empirical_covariance(ds);
  EXPECT_LT(ec.min_eig_raw, 0.0);
  EXPECT_TRUE(ec.repaired);
  const SymEig eig = sym_eig(ec.cov);
  EXPECT_GT(eig.values.minCoeff(), 0.0);
  // Repair clips at the relative floor of the largest eigenvalue.
  EXPECT_GE(eig.values.minCoeff(), 1e-6 * eig.values.maxCoeff() * (1 - 1e-9));
}

TEST(Whitening, WhitenerInvertsSubmatrix) {
  Rng rng(7);
  MatrixXd a(7, 7);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) a(i, j) = 0.3 * rng.normal();
  const MatrixXd sigma = a * a.transpose() + MatrixXd::Identity(7, 7);
  const WhiteningCache cache(layout_pq(3, 4), sigma);
  for (const auto& mask : std::vector<std::vector<int>>{{0}, {1}, {0, 1}}) {
    const PatternWhitener& pw = cache.get(mask);
    const int m = static_cast<int>(pw.var_idx.size());
    MatrixXd sub(m, m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) sub(r, c) = sigma(pw.var_idx[r], pw.var_idx[c]);
    EXPECT_LT(max_abs(pw.w * sub * pw.w - MatrixXd::Identity(m, m)), 1e-8);
  }
}

TEST(Whitening, DiagonalCovarianceGivesReciprocalRoots) {
  VectorXd d(7);
  d << 4, 9, 16, 1, 25, 36, 49;
  const WhiteningCache cache(layout_pq(3, 4), MatrixXd(d.asDiagonal()));
  const PatternWhitener& pw = cache.get({0});
  EXPECT_NEAR(pw.w(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(pw.w(1, 1), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(pw.w(2, 2), 0.25, 1e-12);
  const PatternWhitener& pw2 = cache.get({1});
  EXPECT_NEAR(pw2.w(3, 3), 1.0 / 7.0, 1e-12);
}

TEST(Whitening, CacheMemoizesPerPattern) {
  const WhiteningCache cache(layout_pq(3, 4), MatrixXd::Identity(7, 7));
  EXPECT_EQ(cache.compute_count(), 0);
  cache.get({0, 1});
  cache.get({0, 1});
  cache.get({0, 1});
  EXPECT_EQ(cache.compute_count(), 1);
  cache.get({0});
  EXPECT_EQ(cache.compute_count(), 2);
  cache.get({1});
  cache.get({0});
  EXPECT_EQ(cache.compute_count(), 3);
}

TEST(Whitening, WarmPrecomputesAllPatterns) {
  Rng rng(8);
  const Dataset ds = gaussian_dataset(MatrixXd::Identity(7, 7), 200, 0.5, rng);
  const EmpiricalCov ec = empirical_covariance(ds);
  const WhiteningCache cache(ds.layout, ec.cov);
  cache.warm(ds);
  const int warmed = cache.compute_count();
  EXPECT_EQ(warmed, 3);  // {0}, {1}, {0,1} all appear at n=200
  for (const auto& rec : ds.records) cache.get(rec.mask);
  EXPECT_EQ(cache.compute_count(), warmed);
}

TEST(Whitening, SpectralStructureDiagonalizes) {
  // When sigma has the latent frame among its eigenvectors, the whitened
  // frame inner product K^{-1} Gamma^T W Gamma is diagonal, and
  // W Gamma = Gamma Lambda^{-1/2}.
  Rng rng(9);
  const int p1 = 5, p2 = 5, d = 3, K = 2;
  const MatrixXd g1 = haar_frame(p1, d, rng);
  const MatrixXd g2 = haar_frame(p2, d, rng);
  MatrixXd gamma(p1 + p2, d);
  gamma.topRows(p1) = g1;
  gamma.bottomRows(p2) = g2;
  VectorXd lam(d);
  lam << 3.0, 1.2, 0.5;
  VectorXd lam_comp = VectorXd::Constant(p1 + p2 - d, 0.25);
  const MatrixXd sigma = oracles::spectral_sigma(gamma, K, lam, lam_comp);

  const WhiteningCache cache(layout_pq(p1, p2), sigma);
  const PatternWhitener& pw = cache.get({0, 1});
  const MatrixXd inner = gamma.transpose() * pw.w * gamma / static_cast<double>(K);
  // Off-diagonal part vanishes; diagonal equals lambda^{-1/2}.
  MatrixXd off = inner;
  off.diagonal().setZero();
  EXPECT_LT(max_abs(off), 1e-8);
  for (int l = 0; l < d; ++l) EXPECT_NEAR(inner(l, l), 1.0 / std::sqrt(lam(l)), 1e-8);
  EXPECT_LT(max_abs(pw.w * gamma - gamma * lam.cwiseSqrt().cwiseInverse().asDiagonal()),
            1e-8);
}
