#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "asyncov/csv.hpp"
#include "asyncov/linalg.hpp"
#include "asyncov/rng.hpp"
#include "asyncov/types.hpp"

namespace asyncov {

// Ground truth for the benchmark generator: a full-rank orthogonal basis and
// dense coefficient matrices, deliberately richer than any fitted low-rank
// model, over two blocks of ten variables.
struct SimTruth {
  MatrixXd gamma_star;  // 20x20 orthogonal
  MatrixXd a_true;      // 20x3
  MatrixXd b_true;      // 20x3
  double re_var = 0.1;
  ModalityLayout layout;
};

inline ModalityLayout sim_layout() {
  ModalityLayout layout;
  layout.modality_names = {"m1", "m2"};
  layout.variable_names.resize(2);
  for (int k = 0; k < 2; ++k)
    for (int j = 1; j <= 10; ++j)
      layout.variable_names[k].push_back(layout.modality_names[k] + "v" + std::to_string(j));
  layout.check();
  return layout;
}

inline SimTruth generate_truth(Rng& rng) {
  SimTruth t;
  t.layout = sim_layout();
  const int p = t.layout.total_dim();
  t.gamma_star = haar_frame(p, p, rng);
  t.a_true.resize(p, 3);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < 3; ++j) t.a_true(i, j) = rng.laplace(0.1);
  t.b_true.resize(p, 3);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < 3; ++j) t.b_true(i, j) = rng.laplace(0.1);
  t.re_var = 0.1;
  return t;
}

struct SimConfig {
  int n_subjects = 30;
  int visits = 5;
  double sync_pct = 0.5;
  int fitted_rank = 3;
  int reps = 30;
  std::uint64_t seed = 1;

  void check() const {
    if (n_subjects < 1) throw UsageError("n_subjects must be >= 1");
    if (visits < 1) throw UsageError("visits must be >= 1");
    if (sync_pct < 0.0 || sync_pct > 1.0) throw UsageError("sync_pct must lie in [0, 1]");
    if (fitted_rank < 1 || fitted_rank > 10)
      throw UsageError("fitted_rank must lie in [1, 10] for the 10+10 layout");
    if (reps < 1) throw UsageError("reps must be >= 1");
  }
};

// One response draw through a latent basis: y = gamma (a x + b + sqrt(w) z)
// with w = exp(b_coef x) and z standard normal. Shared by both generators so
// moment checks can sample through the exact production path.
inline VectorXd draw_response(const MatrixXd& gamma, const MatrixXd& a_coef,
                              const MatrixXd& b_coef, const VectorXd& x, const VectorXd& b,
                              Rng& rng) {
  const auto d = a_coef.rows();
  VectorXd z(d);
  for (Eigen::Index l = 0; l < d; ++l) z(l) = rng.normal();
  const VectorXd w_sqrt = (0.5 * (b_coef * x).array()).exp();
  return gamma * (a_coef * x + b + w_sqrt.cwiseProduct(z));
}

// Subject-level Bernoulli group, visit-level grid covariate (j-1)/4, latent
// random intercepts, Gaussian draw through the full-rank basis, then modality
// masking: full record with probability sync_pct, otherwise one of the two
// modalities with equal probability.
inline Dataset simulate_dataset(const SimTruth& truth, const SimConfig& cfg, Rng& rng) {
  cfg.check();
  const int p = truth.layout.total_dim();
  Dataset ds;
  ds.layout = truth.layout;
  ds.covariate_names = {"x1", "x2"};

  const double re_sd = std::sqrt(truth.re_var);
  for (int i = 0; i < cfg.n_subjects; ++i) {
    const double x1 = rng.bernoulli(0.5) ? 1.0 : 0.0;
    VectorXd b(p);
    for (int l = 0; l < p; ++l) b(l) = re_sd * rng.normal();
    for (int j = 0; j < cfg.visits; ++j) {
      const double x2 = static_cast<double>(j) / 4.0;
      VectorXd x(3);
      x << 1.0, x1, x2;
      const VectorXd y = draw_response(truth.gamma_star, truth.a_true, truth.b_true, x, b, rng);

      ObservationRecord rec;
      rec.subject_id = "S" + std::to_string(i + 1);
      rec.visit = j + 1;
      rec.time = x2;
      rec.covariates.resize(2);
      rec.covariates << x1, x2;
      if (rng.uniform() < cfg.sync_pct) {
        rec.mask = {0, 1};
        rec.y_obs = y;
      } else if (rng.uniform() < 0.5) {
        rec.mask = {0};
        rec.y_obs = y.head(truth.layout.dim(0));
      } else {
        rec.mask = {1};
        rec.y_obs = y.tail(truth.layout.dim(1));
      }
      ds.records.push_back(std::move(rec));
    }
  }
  ds.reindex();
  ds.check();
  return ds;
}

// The (x1, x2) combinations of the benchmark design: both groups crossed with
// the visit grid actually simulated, so losses are evaluated on the support.
inline std::vector<std::pair<double, double>> sim_covariate_combos(int visits = 5) {
  std::vector<std::pair<double, double>> out;
  for (double x1 : {0.0, 1.0})
    for (int j = 0; j < visits; ++j) out.emplace_back(x1, static_cast<double>(j) / 4.0);
  return out;
}

struct CrossTargets {
  MatrixXd cov;   // between-block covariance
  MatrixXd corr;  // normalized by the full covariance's diagonal
};

// Conditional-on-b covariance Gamma* diag(exp(B x)) Gamma*^T, cut to the
// between-block part.
inline CrossTargets true_cross_targets(const SimTruth& truth, double x1, double x2) {
  VectorXd x(3);
  x << 1.0, x1, x2;
  const VectorXd w = (truth.b_true * x).array().exp();
  const MatrixXd sigma = truth.gamma_star * w.asDiagonal() * truth.gamma_star.transpose();
  const int p1 = truth.layout.dim(0);
  const int p2 = truth.layout.dim(1);
  CrossTargets t;
  t.cov = sigma.block(0, p1, p1, p2);
  const VectorXd sd = sigma.diagonal().cwiseSqrt();
  t.corr = t.cov.array() / (sd.head(p1) * sd.segment(p1, p2).transpose()).array();
  return t;
}

enum class LossNorm { frobenius, max };

inline LossNorm parse_norm(const std::string& s) {
  if (s == "frobenius") return LossNorm::frobenius;
  if (s == "max") return LossNorm::max;
  throw UsageError("unknown norm '" + s + "' (frobenius|max)");
}

inline const char* norm_name(LossNorm n) {
  return n == LossNorm::frobenius ? "frobenius" : "max";
}

using ComboMap = std::map<std::pair<double, double>, MatrixXd>;

// Mean over covariate combinations of the chosen norm of the estimation
// error; every truth combination must be present in the estimates.
inline double evaluation_loss(const ComboMap& estimates, const ComboMap& truths, LossNorm norm) {
  if (truths.empty()) throw UsageError("no truth combinations");
  double sum = 0.0;
  for (const auto& [key, target] : truths) {
    auto it = estimates.find(key);
    if (it == estimates.end())
      throw UsageError("missing estimate for combination (x1=" + format_double(key.first) +
                       ", x2=" + format_double(key.second) + ")");
    const MatrixXd diff = it->second - target;
    sum += norm == LossNorm::frobenius ? frobenius(diff) : max_abs(diff);
  }
  return sum / static_cast<double>(truths.size());
}

// Working-model generator: data produced exactly from a rank-d latent
// structure (no orthogonal-complement noise), used to check that estimation
// recovers a truth the model can represent.
struct LowRankTruth {
  ModalityLayout layout;
  std::vector<MatrixXd> gammas;  // p_k x d, each orthonormal
  MatrixXd a;                    // d x 3, mean coefficients
  MatrixXd b_orig;               // d x 3, log-variance coefficients, original scale
  double re_var = 0.1;

  MatrixXd stacked() const {
    int p = 0;
    for (const auto& g : gammas) p += static_cast<int>(g.rows());
    MatrixXd out(p, gammas[0].cols());
    int at = 0;
    for (const auto& g : gammas) {
      out.middleRows(at, g.rows()) = g;
      at += static_cast<int>(g.rows());
    }
    return out;
  }
};

inline LowRankTruth generate_lowrank_truth(const ModalityLayout& layout, int rank, Rng& rng,
                                           double coef_scale = 0.1, double re_var = 0.1) {
  LowRankTruth t;
  t.layout = layout;
  for (int k = 0; k < layout.num_modalities(); ++k)
    t.gammas.push_back(haar_frame(layout.dim(k), rank, rng));
  t.a.resize(rank, 3);
  t.b_orig.resize(rank, 3);
  for (int l = 0; l < rank; ++l)
    for (int c = 0; c < 3; ++c) {
      t.a(l, c) = rng.laplace(coef_scale);
      t.b_orig(l, c) = rng.laplace(coef_scale);
    }
  t.re_var = re_var;
  return t;
}

// Isotropic measurement noise keeps the empirical working covariance
// nonsingular: exactly low-rank responses would make its repaired inverse
// square root amplify the unexcited directions, opening a degenerate
// interpolation mode for the whitened likelihood. Isotropic noise only adds
// to the diagonal, so between-block covariance targets are unaffected.
inline Dataset simulate_lowrank(const LowRankTruth& truth, int n_subjects, int visits,
                                double sync_pct, Rng& rng, double noise_sd = 0.2) {
  const int d = static_cast<int>(truth.a.rows());
  Dataset ds;
  ds.layout = truth.layout;
  ds.covariate_names = {"x1", "x2"};
  const MatrixXd gamma = truth.stacked();
  const double re_sd = std::sqrt(truth.re_var);
  for (int i = 0; i < n_subjects; ++i) {
    const double x1 = rng.bernoulli(0.5) ? 1.0 : 0.0;
    VectorXd b(d);
    for (int l = 0; l < d; ++l) b(l) = re_sd * rng.normal();
    for (int j = 0; j < visits; ++j) {
      const double x2 = visits > 1 ? static_cast<double>(j) / (visits - 1.0) : 0.0;
      VectorXd x(3);
      x << 1.0, x1, x2;
      VectorXd y = draw_response(gamma, truth.a, truth.b_orig, x, b, rng);
      for (Eigen::Index l = 0; l < y.size(); ++l) y(l) += noise_sd * rng.normal();

      ObservationRecord rec;
      rec.subject_id = "S" + std::to_string(i + 1);
      rec.visit = j + 1;
      rec.time = x2;
      rec.covariates.resize(2);
      rec.covariates << x1, x2;
      if (rng.uniform() < sync_pct) {
        rec.mask.resize(truth.layout.num_modalities());
        for (int k = 0; k < truth.layout.num_modalities(); ++k) rec.mask[k] = k;
        rec.y_obs = y;
      } else if (rng.uniform() < 0.5) {
        rec.mask = {0};
        rec.y_obs = y.head(truth.layout.dim(0));
      } else {
        rec.mask = {truth.layout.num_modalities() - 1};
        rec.y_obs = y.tail(truth.layout.dim(truth.layout.num_modalities() - 1));
      }
      ds.records.push_back(std::move(rec));
    }
  }
  ds.reindex();
  ds.check();
  return ds;
}

// Between-block covariance and correlation implied by a low-rank truth at one
// covariate point (modalities 0 and 1).
inline CrossTargets lowrank_cross_targets(const LowRankTruth& truth, double x1, double x2) {
  VectorXd x(3);
  x << 1.0, x1, x2;
  const VectorXd w = (truth.b_orig * x).array().exp();
  CrossTargets t;
  t.cov = truth.gammas[0] * w.asDiagonal() * truth.gammas[1].transpose();
  const VectorXd va = (truth.gammas[0].array().square().matrix() * w).cwiseSqrt();
  const VectorXd vb = (truth.gammas[1].array().square().matrix() * w).cwiseSqrt();
  t.corr = t.cov.array() / (va * vb.transpose()).array();
  return t;
}

}  // namespace asyncov
