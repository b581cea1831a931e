#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "asyncov/linalg.hpp"
#include "asyncov/types.hpp"

namespace asyncov {

struct ModelConfig {
  ModalityLayout layout;
  int rank = 1;         // d, latent dimension
  int design_dim = 1;   // q, length of (1, t, covariates...)
  int num_subjects = 0; // N
  bool include_time = true;

  static ModelConfig from_dataset(const Dataset& ds, int rank, bool include_time = true) {
    ModelConfig cfg;
    cfg.layout = ds.layout;
    cfg.rank = rank;
    cfg.include_time = include_time;
    cfg.design_dim = 1 + (include_time ? 1 : 0) + static_cast<int>(ds.covariate_names.size());
    cfg.num_subjects = ds.num_subjects();
    return cfg;
  }

  void check() const {
    layout.check();
    if (rank < 1) throw UsageError("rank must be >= 1");
    if (design_dim < 1) throw UsageError("design dimension must be >= 1");
    if (num_subjects < 1) throw UsageError("need at least one subject");
    for (int k = 0; k < layout.num_modalities(); ++k)
      if (layout.dim(k) < rank)
        throw UsageError("modality '" + layout.modality_names[k] + "' has " +
                         std::to_string(layout.dim(k)) + " variables; rank " +
                         std::to_string(rank) + " needs at least that many per modality");
  }
};

// Flat parameter vector layout:
//   [ X^(1) .. X^(K) | A free entries | Btilde | b_std | log omega_b ]
// X blocks and Btilde are row-major; A keeps only its upper-triangular free
// entries (l, c), c >= l, row-major, with diagonal entries stored on log
// scale; omega_b holds log variances. Random intercepts are stored
// non-centered: the b_std block (subjects x rank, row-major) holds
// standardized effects, and the materialized intercept is
// b = omega_b^{1/2} * b_std, which keeps the sampling geometry benign when
// intercepts are only weakly identified per subject.
struct ParamLayout {
  int K = 0, d = 0, q = 0, N = 0;
  std::vector<int> p;
  std::vector<int> x_off;
  int a_off = 0, a_len = 0;
  int bt_off = 0, bt_len = 0;
  int b_off = 0, b_len = 0;
  int lw_off = 0, lw_len = 0;
  int total = 0;

  static ParamLayout make(const ModelConfig& cfg) {
    ParamLayout lay;
    lay.K = cfg.layout.num_modalities();
    lay.d = cfg.rank;
    lay.q = cfg.design_dim;
    lay.N = cfg.num_subjects;
    int at = 0;
    for (int k = 0; k < lay.K; ++k) {
      lay.p.push_back(cfg.layout.dim(k));
      lay.x_off.push_back(at);
      at += lay.p[k] * lay.d;
    }
    lay.a_off = at;
    lay.a_len = 0;
    for (int l = 0; l < std::min(lay.d, lay.q); ++l) lay.a_len += lay.q - l;
    at += lay.a_len;
    lay.bt_off = at;
    lay.bt_len = lay.d * lay.q;
    at += lay.bt_len;
    lay.b_off = at;
    lay.b_len = lay.N * lay.d;
    at += lay.b_len;
    lay.lw_off = at;
    lay.lw_len = lay.d;
    at += lay.lw_len;
    lay.total = at;
    return lay;
  }

  int x_index(int k, int row, int col) const { return x_off[k] + row * d + col; }
  int bt_index(int row, int col) const { return bt_off + row * q + col; }
  int b_index(int subject, int col) const { return b_off + subject * d + col; }

  // Visit the free entries of A in storage order: f(flat_index, row, col, is_diag).
  template <class F>
  void for_each_a(F&& f) const {
    int at = a_off;
    for (int l = 0; l < std::min(d, q); ++l)
      for (int c = l; c < q; ++c) f(at++, l, c, c == l);
  }
};

// Materialized parameters. Gamma blocks are the polar factors of the raw X
// blocks; the polar caches are kept for gradient pullback.
struct ModelParams {
  std::vector<MatrixXd> x;
  std::vector<PolarResult> polar;
  std::vector<MatrixXd> gamma;   // p_k x d, orthonormal columns
  MatrixXd a;                    // d x q, upper triangular, positive diagonal
  MatrixXd btilde;               // d x q
  MatrixXd b;                    // N x d
  VectorXd log_wb;               // d
  VectorXd wb;                   // d, exp(log_wb)

  MatrixXd stacked_gamma() const {
    int p = 0;
    for (const auto& g : gamma) p += static_cast<int>(g.rows());
    MatrixXd out(p, gamma.empty() ? 0 : gamma[0].cols());
    int at = 0;
    for (const auto& g : gamma) {
      out.middleRows(at, g.rows()) = g;
      at += static_cast<int>(g.rows());
    }
    return out;
  }
};

inline ModelParams to_model(const VectorXd& theta, const ModelConfig& cfg) {
  const ParamLayout lay = ParamLayout::make(cfg);
  if (theta.size() != lay.total)
    throw UsageError("parameter vector has length " + std::to_string(theta.size()) +
                     ", expected " + std::to_string(lay.total));
  ModelParams mp;
  for (int k = 0; k < lay.K; ++k) {
    MatrixXd x(lay.p[k], lay.d);
    for (int i = 0; i < lay.p[k]; ++i)
      for (int j = 0; j < lay.d; ++j) x(i, j) = theta(lay.x_index(k, i, j));
    mp.polar.push_back(orthonormalize_polar(x));
    mp.gamma.push_back(mp.polar.back().q);
    mp.x.push_back(std::move(x));
  }
  mp.a = MatrixXd::Zero(lay.d, lay.q);
  lay.for_each_a([&](int at, int l, int c, bool diag) {
    mp.a(l, c) = diag ? std::exp(theta(at)) : theta(at);
  });
  mp.btilde = MatrixXd(lay.d, lay.q);
  for (int l = 0; l < lay.d; ++l)
    for (int c = 0; c < lay.q; ++c) mp.btilde(l, c) = theta(lay.bt_index(l, c));
  mp.log_wb = theta.segment(lay.lw_off, lay.lw_len);
  mp.wb = mp.log_wb.array().exp();
  const VectorXd root_wb = (0.5 * mp.log_wb.array()).exp();
  mp.b = MatrixXd(lay.N, lay.d);
  for (int i = 0; i < lay.N; ++i)
    for (int l = 0; l < lay.d; ++l) mp.b(i, l) = root_wb(l) * theta(lay.b_index(i, l));
  return mp;
}

// Inverse of to_model for parameters that satisfy the constraints (orthonormal
// gamma blocks are re-embedded as-is, so to_model(from_model(mp)) == mp).
inline VectorXd from_model(const ModelParams& mp, const ModelConfig& cfg) {
  const ParamLayout lay = ParamLayout::make(cfg);
  VectorXd theta = VectorXd::Zero(lay.total);
  for (int k = 0; k < lay.K; ++k)
    for (int i = 0; i < lay.p[k]; ++i)
      for (int j = 0; j < lay.d; ++j) theta(lay.x_index(k, i, j)) = mp.gamma[k](i, j);
  lay.for_each_a([&](int at, int l, int c, bool diag) {
    theta(at) = diag ? std::log(mp.a(l, c)) : mp.a(l, c);
  });
  for (int l = 0; l < lay.d; ++l)
    for (int c = 0; c < lay.q; ++c) theta(lay.bt_index(l, c)) = mp.btilde(l, c);
  for (int i = 0; i < lay.N; ++i)
    for (int l = 0; l < lay.d; ++l)
      theta(lay.b_index(i, l)) = mp.b(i, l) * std::exp(-0.5 * mp.log_wb(l));
  theta.segment(lay.lw_off, lay.lw_len) = mp.log_wb;
  return theta;
}

// Radial stiffness of the frame-block prior below. Any value gives the same
// model; larger values concentrate the singular values of the raw blocks
// more tightly around 1 (sd ~ 1/sqrt(2 kappa)).
inline constexpr double kFrameRadialStiffness = 50.0;

// Log prior density of theta up to an additive constant.
//
// Frame blocks: the density -(kappa/4) ||X^T X - I||_F^2 depends on X only
// through X^T X, and every such density leaves the polar factor of X exactly
// uniform on the Stiefel manifold (Lebesgue measure factorizes into a Haar
// part and a radial part under left-orthogonal invariance). The quartic well
// merely pins the singular values of the raw block near 1, which keeps the
// polar pullback well-conditioned and the sampler's stability region
// position-independent; the implied prior on the orthonormal frames is the
// uniform one regardless of the stiffness.
//
// A and Btilde entries are N(0, 3) with a +raw Jacobian term for the
// log-scale diagonal of A; standardized random intercepts are standard normal
// (the materialized intercepts are then N(0, omega_b) elementwise); the
// omega_b variances are half-normal(0, 1) with a +u Jacobian for the log
// parameterization. Computable for any finite theta.
inline double log_prior(const VectorXd& theta, const ModelConfig& cfg) {
  const ParamLayout lay = ParamLayout::make(cfg);
  double lp = 0.0;
  for (int k = 0; k < lay.K; ++k) {
    MatrixXd x(lay.p[k], lay.d);
    for (int i = 0; i < lay.p[k]; ++i)
      for (int j = 0; j < lay.d; ++j) x(i, j) = theta(lay.x_index(k, i, j));
    const MatrixXd m = x.transpose() * x - MatrixXd::Identity(lay.d, lay.d);
    lp += -0.25 * kFrameRadialStiffness * m.squaredNorm();
  }
  lay.for_each_a([&](int at, int, int, bool diag) {
    const double r = theta(at);
    if (diag) {
      const double a = std::exp(r);
      lp += -a * a / 6.0 + r;
    } else {
      lp += -r * r / 6.0;
    }
  });
  lp += -theta.segment(lay.bt_off, lay.bt_len).squaredNorm() / 6.0;
  lp += -0.5 * theta.segment(lay.b_off, lay.b_len).squaredNorm();
  for (int l = 0; l < lay.d; ++l) {
    const double u = theta(lay.lw_off + l);
    lp += -0.5 * std::exp(2.0 * u) + u;
  }
  return lp;
}

// Adds d log_prior / d theta into grad (which must be presized to lay.total).
inline void add_log_prior_grad(const VectorXd& theta, const ModelConfig& cfg, VectorXd& grad) {
  const ParamLayout lay = ParamLayout::make(cfg);
  for (int k = 0; k < lay.K; ++k) {
    MatrixXd x(lay.p[k], lay.d);
    for (int i = 0; i < lay.p[k]; ++i)
      for (int j = 0; j < lay.d; ++j) x(i, j) = theta(lay.x_index(k, i, j));
    const MatrixXd gx =
        -kFrameRadialStiffness * x * (x.transpose() * x - MatrixXd::Identity(lay.d, lay.d));
    for (int i = 0; i < lay.p[k]; ++i)
      for (int j = 0; j < lay.d; ++j) grad(lay.x_index(k, i, j)) += gx(i, j);
  }
  lay.for_each_a([&](int at, int, int, bool diag) {
    const double r = theta(at);
    if (diag) {
      const double a2 = std::exp(2.0 * r);
      grad(at) += -a2 / 3.0 + 1.0;
    } else {
      grad(at) += -r / 3.0;
    }
  });
  grad.segment(lay.bt_off, lay.bt_len) -= theta.segment(lay.bt_off, lay.bt_len) / 3.0;
  grad.segment(lay.b_off, lay.b_len) -= theta.segment(lay.b_off, lay.b_len);
  for (int l = 0; l < lay.d; ++l) {
    const double u = theta(lay.lw_off + l);
    grad(lay.lw_off + l) += -std::exp(2.0 * u) + 1.0;
  }
}

}  // namespace asyncov
