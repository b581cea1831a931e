#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "asyncov/errors.hpp"

namespace asyncov {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SymEig {
  VectorXd values;   // ascending
  MatrixXd vectors;  // columns
};

inline SymEig sym_eig(const MatrixXd& m, const std::string& what = "matrix") {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success)
    throw NumericalError("eigendecomposition failed for " + what);
  return {es.eigenvalues(), es.eigenvectors()};
}

inline void check_symmetric(const MatrixXd& m, double tol, const std::string& what) {
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > tol)
    throw NumericalError(what + " is not symmetric (max asymmetry " + std::to_string(asym) + ")");
}

// Clip eigenvalues below floor_rel * max(lambda) up to that floor. Returns the
// repaired matrix; reports the smallest eigenvalue seen if asked.
inline MatrixXd clip_to_psd(const MatrixXd& m, double floor_rel = 1e-6,
                            double* min_eig_seen = nullptr) {
  const SymEig eig = sym_eig(m, "covariance");
  const double lmax = eig.values.maxCoeff();
  if (min_eig_seen) *min_eig_seen = eig.values.minCoeff();
  if (lmax <= 0.0)
    throw NumericalError("matrix has no positive eigenvalue; cannot repair to PSD");
  const double floor = floor_rel * lmax;
  VectorXd clipped = eig.values.cwiseMax(floor);
  return eig.vectors * clipped.asDiagonal() * eig.vectors.transpose();
}

// Symmetric inverse square root via eigendecomposition, with eigenvalues
// floored at floor_rel * max(lambda) before inversion.
inline MatrixXd sym_inv_sqrt(const MatrixXd& m, double floor_rel = 1e-6,
                             const std::string& what = "matrix") {
  check_symmetric(m, 1e-8 * std::max(1.0, m.cwiseAbs().maxCoeff()), what);
  const SymEig eig = sym_eig(m, what);
  const double lmax = eig.values.maxCoeff();
  if (lmax <= 0.0) throw NumericalError(what + " has no positive eigenvalue");
  const double floor = floor_rel * lmax;
  VectorXd inv_sqrt = eig.values.cwiseMax(floor).cwiseSqrt().cwiseInverse();
  return eig.vectors * inv_sqrt.asDiagonal() * eig.vectors.transpose();
}

inline MatrixXd sym_sqrt(const MatrixXd& m, const std::string& what = "matrix") {
  const SymEig eig = sym_eig(m, what);
  if (eig.values.minCoeff() < -1e-10 * std::max(1.0, eig.values.cwiseAbs().maxCoeff()))
    throw NumericalError(what + " is not PSD; cannot take square root");
  VectorXd s = eig.values.cwiseMax(0.0).cwiseSqrt();
  return eig.vectors * s.asDiagonal() * eig.vectors.transpose();
}

// Cached pieces of the polar decomposition X = Q (X^T X)^{1/2}, kept for the
// pullback of gradients through Q.
struct PolarResult {
  MatrixXd q;       // p x d, orthonormal columns
  MatrixXd u;       // d x d eigenvectors of X^T X
  VectorXd s;       // d, eigenvalues^{-1/2} of X^T X (i.e. singular values^{-1} of X)
  MatrixXd sinv;    // d x d, U diag(s) U^T = (X^T X)^{-1/2}
};

// Orthonormalize the columns of X via the polar factor Q = X (X^T X)^{-1/2}.
// Requires X to have full column rank (eigenvalues of X^T X bounded away from
// zero relative to the largest).
inline PolarResult orthonormalize_polar(const MatrixXd& x, double rank_tol = 1e-12) {
  PolarResult out;
  const MatrixXd c = x.transpose() * x;
  const SymEig eig = sym_eig(c, "X^T X");
  const double lmax = eig.values.maxCoeff();
  if (lmax <= 0.0 || eig.values.minCoeff() <= rank_tol * lmax)
    throw NumericalError("polar orthonormalization: rank-deficient input");
  out.u = eig.vectors;
  out.s = eig.values.cwiseSqrt().cwiseInverse();  // D^{-1/2}
  out.sinv = out.u * out.s.asDiagonal() * out.u.transpose();
  out.q = x * out.sinv;
  return out;
}

// Pullback of a gradient G = df/dQ through Q = X (X^T X)^{-1/2}:
//
//   df/dX = G S + X (Phi + Phi^T),   S = (X^T X)^{-1/2} = U diag(s) U^T,
//   Phi = U PhiT U^T,  PhiT_ab = -(s_a^2 s_b^2 / (s_a + s_b)) * (U^T G^T X U)_ab
//
// where s are the inverse singular values stored in PolarResult.
inline MatrixXd polar_backprop(const MatrixXd& x, const PolarResult& pol, const MatrixXd& g) {
  const Eigen::Index d = x.cols();
  const MatrixXd mt = pol.u.transpose() * (g.transpose() * x) * pol.u;
  MatrixXd phit(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) {
      const double sa = pol.s(a), sb = pol.s(b);
      phit(a, b) = -(sa * sa * sb * sb / (sa + sb)) * mt(a, b);
    }
  const MatrixXd phi = pol.u * phit * pol.u.transpose();
  return g * pol.sinv + x * (phi + phi.transpose());
}

// Haar-distributed orthonormal p x d frame from iid N(0,1) entries: thin QR
// with the sign of diag(R) folded into Q's columns.
template <class RngT>
MatrixXd haar_frame(int p, int d, RngT& rng) {
  MatrixXd g(p, d);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(p, d);
  MatrixXd r = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

inline double max_abs(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

inline double frobenius(const MatrixXd& m) { return m.norm(); }

}  // namespace asyncov
