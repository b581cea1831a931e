// Shared independent oracles for the test suite: finite differences, dense
// Gaussian log-densities, classical distribution functions, and small helpers
// kept deliberately naive so they cannot share bugs with the library code.
#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/special_functions/beta.hpp>

namespace oracles {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Central finite-difference gradient of a scalar function.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                            double h = 1e-5) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double fd_partial(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                         Eigen::Index i, double h = 1e-5) {
  VectorXd xp = x;
  xp(i) = x(i) + h;
  const double fp = f(xp);
  xp(i) = x(i) - h;
  const double fm = f(xp);
  return (fp - fm) / (2.0 * h);
}

// Full multivariate normal log-density, constants included.
inline double mvn_logpdf(const VectorXd& y, const VectorXd& mu, const MatrixXd& sigma) {
  const Eigen::LLT<MatrixXd> llt(sigma);
  const VectorXd r = y - mu;
  const VectorXd s = llt.solve(r);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < sigma.rows(); ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (r.dot(s) + logdet +
                 static_cast<double>(y.size()) * std::log(2.0 * M_PI));
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov distance between a sample and a reference CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double c = cdf(xs[i]);
    d = std::max(d, std::abs(c - static_cast<double>(i + 1) / n));
    d = std::max(d, std::abs(c - static_cast<double>(i) / n));
  }
  return d;
}

// CDF of one coordinate of a uniform point on the unit sphere in R^p.
inline double sphere_coord_cdf(double t, int p) {
  if (t <= -1.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double a = (p - 1) / 2.0;
  return boost::math::ibeta(a, a, (t + 1.0) / 2.0);
}

// Exact two-sided binomial test p-value (doubled smaller tail).
inline double binom_two_sided_p(int k, int n, double p) {
  const boost::math::binomial_distribution<double> dist(n, p);
  const double lo = boost::math::cdf(dist, k);
  const double hi = 1.0 - (k > 0 ? boost::math::cdf(dist, k - 1) : 0.0);
  return std::min(1.0, 2.0 * std::min(lo, hi));
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Covariance of a stacked sample matrix (rows = draws), n-1 divisor.
inline MatrixXd sample_cov(const MatrixXd& draws) {
  MatrixXd c = draws;
  c.rowwise() -= draws.colwise().mean();
  return c.transpose() * c / static_cast<double>(draws.rows() - 1);
}

// Spectral covariance with a prescribed eigenbasis: the columns of
// gamma_stacked / sqrt(K) become eigenvectors with eigenvalues `lam`, and an
// orthonormal complement carries the eigenvalues `lam_comp`.
inline MatrixXd spectral_sigma(const MatrixXd& gamma_stacked, int num_blocks,
                               const VectorXd& lam, const VectorXd& lam_comp) {
  const Eigen::Index p = gamma_stacked.rows();
  const Eigen::Index d = gamma_stacked.cols();
  const MatrixXd u = gamma_stacked / std::sqrt(static_cast<double>(num_blocks));
  Eigen::HouseholderQR<MatrixXd> qr(u);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(p, p);
  const MatrixXd comp = q.rightCols(p - d);
  return u * lam.asDiagonal() * u.transpose() +
         comp * lam_comp.asDiagonal() * comp.transpose();
}

// Orthonormal complement of gamma_stacked / sqrt(K).
inline MatrixXd orth_complement(const MatrixXd& gamma_stacked, int num_blocks) {
  const Eigen::Index p = gamma_stacked.rows();
  const Eigen::Index d = gamma_stacked.cols();
  const MatrixXd u = gamma_stacked / std::sqrt(static_cast<double>(num_blocks));
  Eigen::HouseholderQR<MatrixXd> qr(u);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(p, p);
  return q.rightCols(p - d);
}

// Scratch directory that cleans up after itself.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("asyncov_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace oracles
