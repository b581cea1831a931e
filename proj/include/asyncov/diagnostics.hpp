#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "asyncov/errors.hpp"

namespace asyncov {

using Eigen::VectorXd;

// Splits each chain into halves (dropping the middle draw of odd-length
// chains) so within-chain drift shows up as between-chain variance.
inline std::vector<VectorXd> split_halves(const std::vector<VectorXd>& chains) {
  std::vector<VectorXd> halves;
  for (const auto& c : chains) {
    const Eigen::Index n = c.size() / 2;
    if (n == 0) throw UsageError("chain too short to split");
    halves.push_back(c.head(n));
    halves.push_back(c.tail(n));
  }
  return halves;
}

// Potential scale reduction on split chains: sqrt(var_plus / W) with
// var_plus = (n-1)/n W + B/n. Chains that are each constant but disagree get
// a 1e10 sentinel; chains that all sit at the same constant get 1.0.
inline double split_rhat(const std::vector<VectorXd>& chains) {
  const auto halves = split_halves(chains);
  const int m = static_cast<int>(halves.size());
  if (m < 2) throw UsageError("need at least one chain of length >= 2");
  Eigen::Index n = halves[0].size();
  for (const auto& h : halves) n = std::min(n, h.size());
  if (n < 2) throw UsageError("need at least 4 draws per chain");

  VectorXd means(m), vars(m);
  for (int j = 0; j < m; ++j) {
    const auto h = halves[j].head(n);
    means(j) = h.mean();
    vars(j) = (h.array() - means(j)).square().sum() / static_cast<double>(n - 1);
  }
  const double w = vars.mean();
  const double grand = means.mean();
  const double b = static_cast<double>(n) * (means.array() - grand).square().sum() /
                   static_cast<double>(m - 1);
  if (w == 0.0) return b > 0.0 ? 1e10 : 1.0;
  const double var_plus = (static_cast<double>(n - 1) / n) * w + b / static_cast<double>(n);
  return std::sqrt(var_plus / w);
}

namespace detail {
// Autocovariance at one lag, denominator n, of a mean-centered series.
inline double acov_lag(const VectorXd& centered, Eigen::Index lag) {
  const Eigen::Index n = centered.size();
  double s = 0.0;
  for (Eigen::Index i = 0; i + lag < n; ++i) s += centered(i) * centered(i + lag);
  return s / static_cast<double>(n);
}
}  // namespace detail

// Effective sample size from the initial positive, monotone sequence of
// paired autocorrelations, with cross-chain pooling through
// rho_t = 1 - (W - mean_j acov_{t,j}) / var_plus.
inline double ess(const std::vector<VectorXd>& chains) {
  const int m = static_cast<int>(chains.size());
  if (m < 1) throw UsageError("ess needs at least one chain");
  Eigen::Index n = chains[0].size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) throw UsageError("ess needs at least 4 draws per chain");

  std::vector<VectorXd> centered;
  VectorXd means(m), acov0(m);
  for (int j = 0; j < m; ++j) {
    VectorXd c = chains[j].head(n);
    means(j) = c.mean();
    c.array() -= means(j);
    acov0(j) = detail::acov_lag(c, 0);
    centered.push_back(std::move(c));
  }
  const double mean_var = acov0.mean() * static_cast<double>(n) / static_cast<double>(n - 1);
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) {
    const double grand = means.mean();
    var_plus += (means.array() - grand).square().sum() / static_cast<double>(m - 1);
  }
  if (var_plus <= 0.0) return std::numeric_limits<double>::quiet_NaN();

  auto rho = [&](Eigen::Index t) {
    double acov_t = 0.0;
    for (int j = 0; j < m; ++j) acov_t += detail::acov_lag(centered[j], t);
    acov_t /= m;
    return 1.0 - (mean_var - acov_t) / var_plus;
  };

  double pair_sum = 1.0 + rho(1);  // rho_0 taken as exactly 1
  double prev = pair_sum;
  double total = pair_sum;
  for (Eigen::Index t = 2; t + 1 < n; t += 2) {
    double p = rho(t) + rho(t + 1);
    if (p <= 0.0) break;
    p = std::min(p, prev);
    total += p;
    prev = p;
  }
  const double tau = std::max(-1.0 + 2.0 * total, 1e-8);
  return static_cast<double>(m) * static_cast<double>(n) / tau;
}

inline double split_ess(const std::vector<VectorXd>& chains) { return ess(split_halves(chains)); }

}  // namespace asyncov
