#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "asyncov/errors.hpp"
#include "asyncov/rng.hpp"

namespace asyncov {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Log density with gradient: fills grad, returns log p(q). May return -inf
// (with arbitrary grad) for points outside the support.
using LogDensity = std::function<double(const VectorXd&, VectorXd&)>;

struct SamplerSettings {
  int chains = 2;
  int warmup = 1000;
  int draws = 1000;  // retained per chain
  int max_depth = 10;
  double target_accept = 0.8;
  double init_step = 0.0;  // <= 0: pick by the doubling heuristic
  double divergence_threshold = 1000.0;
  std::uint64_t seed = 1;
  int init_buffer = 75;
  int term_buffer = 50;
  int base_window = 25;
};

struct ChainResult {
  MatrixXd draws;  // draws x dim
  VectorXd logp;
  std::vector<int> depth;
  std::vector<std::uint8_t> divergent;
  double step_size = 0.0;
  VectorXd inv_mass;
  int post_divergences = 0;
  double mean_accept = 0.0;
};

struct SampleResult {
  std::vector<ChainResult> chains;
  int dim = 0;
  double divergence_rate = 0.0;
  bool reliable = true;
};

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct PhasePoint {
  VectorXd q, p, grad;
  double logp = 0.0;
};

inline double kinetic(const VectorXd& p, const VectorXd& inv_mass) {
  return 0.5 * p.cwiseProduct(inv_mass).dot(p);
}

inline PhasePoint leapfrog(const LogDensity& target, const PhasePoint& from, double eps,
                           const VectorXd& inv_mass) {
  PhasePoint pt;
  pt.p = from.p + 0.5 * eps * from.grad;
  pt.q = from.q + eps * inv_mass.cwiseProduct(pt.p);
  pt.grad.resize(pt.q.size());
  pt.logp = target(pt.q, pt.grad);
  pt.p += 0.5 * eps * pt.grad;
  return pt;
}

// No U-turn when the span between endpoints still projects positively on the
// velocity at both ends.
inline bool no_uturn(const PhasePoint& minus, const PhasePoint& plus, const VectorXd& inv_mass) {
  const VectorXd span = plus.q - minus.q;
  return span.dot(inv_mass.cwiseProduct(minus.p)) > 0.0 &&
         span.dot(inv_mass.cwiseProduct(plus.p)) > 0.0;
}

struct Subtree {
  PhasePoint minus, plus;
  PhasePoint proposal;
  double lsw = -std::numeric_limits<double>::infinity();  // log sum exp(h0 - H)
  double sum_metro = 0.0;
  int n_leapfrog = 0;
  bool divergent = false;
  bool ok = true;
};

struct NutsWorker {
  const LogDensity& target;
  const VectorXd& inv_mass;
  Rng& rng;
  double eps;
  double h0;
  double div_threshold;

  Subtree leaf(const PhasePoint& from, int dir) {
    Subtree t;
    PhasePoint pt = leapfrog(target, from, dir * eps, inv_mass);
    double h = std::isfinite(pt.logp) ? -pt.logp + kinetic(pt.p, inv_mass)
                                      : std::numeric_limits<double>::infinity();
    t.n_leapfrog = 1;
    if (!std::isfinite(h) || h - h0 > div_threshold) {
      t.divergent = true;
      t.ok = false;
      t.minus = t.plus = t.proposal = pt;
      return t;
    }
    t.lsw = h0 - h;
    t.sum_metro = std::min(1.0, std::exp(h0 - h));
    t.minus = t.plus = pt;
    t.proposal = pt;
    return t;
  }

  Subtree build(int depth, const PhasePoint& from, int dir) {
    if (depth == 0) return leaf(from, dir);
    Subtree first = build(depth - 1, from, dir);
    if (!first.ok) return first;
    Subtree second = build(depth - 1, dir > 0 ? first.plus : first.minus, dir);
    first.n_leapfrog += second.n_leapfrog;
    first.sum_metro += second.sum_metro;
    first.divergent = first.divergent || second.divergent;
    if (!second.ok) {
      first.ok = false;
      return first;
    }
    const double total = log_add(first.lsw, second.lsw);
    if (std::log(rng.uniform()) < second.lsw - total) first.proposal = second.proposal;
    first.lsw = total;
    if (dir > 0)
      first.plus = second.plus;
    else
      first.minus = second.minus;
    first.ok = no_uturn(first.minus, first.plus, inv_mass);
    return first;
  }
};

struct DualAverage {
  double target = 0.8;
  double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  double mu = 0.0, log_eps = 0.0, log_eps_bar = 0.0, h_bar = 0.0;
  int m = 0;

  void restart(double eps) {
    mu = std::log(10.0 * eps);
    log_eps = std::log(eps);
    log_eps_bar = 0.0;
    h_bar = 0.0;
    m = 0;
  }
  void update(double accept) {
    accept = std::clamp(accept, 0.0, 1.0);
    ++m;
    const double eta = 1.0 / (m + t0);
    h_bar = (1.0 - eta) * h_bar + eta * (target - accept);
    log_eps = mu - std::sqrt(static_cast<double>(m)) / gamma * h_bar;
    const double w = std::pow(static_cast<double>(m), -kappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
  }
  double eps() const { return std::exp(log_eps); }
  double eps_final() const { return std::exp(log_eps_bar); }
};

struct Welford {
  int n = 0;
  VectorXd mean, m2;
  void reset(int dim) {
    n = 0;
    mean = VectorXd::Zero(dim);
    m2 = VectorXd::Zero(dim);
  }
  void add(const VectorXd& x) {
    ++n;
    const VectorXd delta = x - mean;
    mean += delta / n;
    m2 += delta.cwiseProduct(x - mean);
  }
  VectorXd variance() const {
    if (n < 2) return VectorXd::Ones(mean.size());
    return m2 / (n - 1);
  }
};

// Mass-window schedule: a step-size-only opening buffer, doubling variance
// windows, and a closing step-size-only buffer. Short warmups scale the
// buffers down; very short warmups adapt step size only.
inline std::vector<int> mass_window_ends(int warmup, int& init_buffer, int term_buffer,
                                         int base_window) {
  std::vector<int> ends;
  if (warmup < 20) {
    init_buffer = warmup;
    return ends;
  }
  int init_b = init_buffer, term_b = term_buffer, base = base_window;
  if (init_b + term_b + base > warmup) {
    init_b = static_cast<int>(0.15 * warmup);
    term_b = static_cast<int>(0.10 * warmup);
    base = warmup - init_b - term_b;
  }
  int start = init_b;
  int w = base;
  const int last = warmup - term_b;
  while (start < last) {
    int end = start + w;
    if (end + 2 * w > last) end = last;
    ends.push_back(end);
    start = end;
    w *= 2;
  }
  init_buffer = init_b;
  return ends;
}

}  // namespace detail

// Step size for which one leapfrog step has acceptance probability near 1/2,
// found by doubling / halving from eps = 1.
inline double find_reasonable_epsilon(const LogDensity& target, const VectorXd& q0,
                                      const VectorXd& inv_mass, Rng& rng) {
  using namespace detail;
  PhasePoint start;
  start.q = q0;
  start.grad.resize(q0.size());
  start.logp = target(start.q, start.grad);
  if (!std::isfinite(start.logp))
    throw NumericalError("cannot tune step size: initial point has zero density");
  start.p.resize(q0.size());
  for (Eigen::Index i = 0; i < q0.size(); ++i)
    start.p(i) = rng.normal() / std::sqrt(inv_mass(i));
  const double h0 = -start.logp + kinetic(start.p, inv_mass);

  double eps = 1.0;
  auto log_ratio = [&](double e) {
    PhasePoint pt = leapfrog(target, start, e, inv_mass);
    if (!std::isfinite(pt.logp)) return -std::numeric_limits<double>::infinity();
    return h0 - (-pt.logp + kinetic(pt.p, inv_mass));
  };
  double lr = log_ratio(eps);
  const double dir = lr > std::log(0.5) ? 1.0 : -1.0;
  for (int it = 0; it < 100; ++it) {
    if (dir * lr <= -dir * std::log(2.0)) break;
    eps *= dir > 0 ? 2.0 : 0.5;
    if (eps < 1e-10 || eps > 1e7) break;
    lr = log_ratio(eps);
  }
  return eps;
}

inline ChainResult run_chain(const LogDensity& target, const VectorXd& q0,
                             const SamplerSettings& s, std::uint64_t chain_seed) {
  using namespace detail;
  const int dim = static_cast<int>(q0.size());
  Rng rng(chain_seed);

  ChainResult out;
  out.inv_mass = VectorXd::Ones(dim);
  out.draws.resize(s.draws, dim);
  out.logp.resize(s.draws);

  PhasePoint cur;
  cur.q = q0;
  cur.p = VectorXd::Zero(dim);
  cur.grad.resize(dim);
  cur.logp = target(cur.q, cur.grad);
  if (!std::isfinite(cur.logp)) throw NumericalError("initial point has zero density");

  double eps = s.init_step > 0.0 ? s.init_step
                                 : find_reasonable_epsilon(target, cur.q, out.inv_mass, rng);
  DualAverage da;
  da.target = s.target_accept;
  da.restart(eps);

  int init_buffer = s.init_buffer;
  const std::vector<int> window_ends =
      detail::mass_window_ends(s.warmup, init_buffer, s.term_buffer, s.base_window);
  std::size_t next_window = 0;
  Welford acc;
  acc.reset(dim);
  const int collect_from = init_buffer;
  const int collect_until = window_ends.empty() ? 0 : window_ends.back();

  double accept_sum = 0.0;
  int accept_n = 0;

  const int total = s.warmup + s.draws;
  for (int iter = 0; iter < total; ++iter) {
    const bool warm = iter < s.warmup;

    PhasePoint minus = cur, plus = cur;
    for (int i = 0; i < dim; ++i) minus.p(i) = rng.normal() / std::sqrt(out.inv_mass(i));
    plus.p = minus.p;
    const double h0 = -cur.logp + kinetic(minus.p, out.inv_mass);

    NutsWorker worker{target, out.inv_mass, rng, eps, h0, s.divergence_threshold};
    PhasePoint proposal = cur;
    double lsw_total = 0.0;  // weight 1 for the initial point
    double sum_metro = 0.0;
    int n_leap = 0;
    bool divergent_iter = false;
    int depth = 0;
    while (depth < s.max_depth) {
      const int dir = rng.uniform() < 0.5 ? -1 : 1;
      Subtree sub = worker.build(depth, dir > 0 ? plus : minus, dir);
      sum_metro += sub.sum_metro;
      n_leap += sub.n_leapfrog;
      divergent_iter = divergent_iter || sub.divergent;
      if (!sub.ok) break;
      if (std::log(rng.uniform()) < sub.lsw - lsw_total) proposal = sub.proposal;
      lsw_total = log_add(lsw_total, sub.lsw);
      if (dir > 0)
        plus = sub.plus;
      else
        minus = sub.minus;
      ++depth;
      if (!no_uturn(minus, plus, out.inv_mass)) break;
    }
    cur.q = proposal.q;
    cur.grad = proposal.grad;
    cur.logp = proposal.logp;
    const double accept_stat = n_leap > 0 ? sum_metro / n_leap : 0.0;

    if (warm) {
      da.update(accept_stat);
      eps = da.eps();
      if (iter >= collect_from && iter < collect_until) acc.add(cur.q);
      if (next_window < window_ends.size() && iter + 1 == window_ends[next_window]) {
        const double n = static_cast<double>(acc.n);
        out.inv_mass = (n / (n + 5.0)) * acc.variance().array() + 1e-3 * (5.0 / (n + 5.0));
        acc.reset(dim);
        ++next_window;
        eps = find_reasonable_epsilon(target, cur.q, out.inv_mass, rng);
        da.restart(eps);
      }
      if (iter + 1 == s.warmup && s.warmup > 0) eps = da.eps_final();
    } else {
      const int j = iter - s.warmup;
      out.draws.row(j) = cur.q.transpose();
      out.logp(j) = cur.logp;
      out.depth.push_back(depth);
      out.divergent.push_back(divergent_iter ? 1 : 0);
      if (divergent_iter) ++out.post_divergences;
      accept_sum += accept_stat;
      ++accept_n;
    }
  }
  out.step_size = eps;
  out.mean_accept = accept_n > 0 ? accept_sum / accept_n : 0.0;
  return out;
}

// Runs `chains` independent chains with per-chain derived seeds. `init` maps
// (chain index, chain rng) to a starting point; it is retried a few times if
// the density there is zero.
inline SampleResult run_sampler(const LogDensity& target, const SamplerSettings& s,
                                const std::function<VectorXd(int, Rng&)>& init) {
  SampleResult res;
  long total_draws = 0, total_div = 0;
  for (int c = 0; c < s.chains; ++c) {
    const std::uint64_t chain_seed = derive_seed(s.seed, static_cast<std::uint64_t>(c));
    Rng init_rng(derive_seed(chain_seed, 0x1717));
    VectorXd q0;
    double lp = -std::numeric_limits<double>::infinity();
    VectorXd g;
    for (int attempt = 0; attempt < 20 && !std::isfinite(lp); ++attempt) {
      q0 = init(c, init_rng);
      g.resize(q0.size());
      lp = target(q0, g);
    }
    if (!std::isfinite(lp))
      throw NumericalError("could not find an initial point with positive density");
    res.chains.push_back(run_chain(target, q0, s, chain_seed));
    res.dim = static_cast<int>(q0.size());
    total_draws += res.chains.back().draws.rows();
    total_div += res.chains.back().post_divergences;
  }
  res.divergence_rate = total_draws > 0 ? static_cast<double>(total_div) / total_draws : 0.0;
  res.reliable = res.divergence_rate <= 0.10;
  return res;
}

}  // namespace asyncov
