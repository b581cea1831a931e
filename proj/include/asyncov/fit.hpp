#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "asyncov/diagnostics.hpp"
#include "asyncov/estimands.hpp"
#include "asyncov/likelihood.hpp"
#include "asyncov/sampler.hpp"
#include "asyncov/simulation.hpp"
#include "asyncov/whitening.hpp"

namespace asyncov {

// Deterministic starting point: expansion blocks seeded with the top-d
// eigenvectors of each modality's working-covariance block plus small jitter,
// unit A diagonal, small coefficients, zero intercepts, moderate intercept
// variances.
inline VectorXd init_theta(const ModelConfig& cfg, const MatrixXd& sigma_bar, Rng& rng) {
  const ParamLayout lay = ParamLayout::make(cfg);
  VectorXd theta = VectorXd::Zero(lay.total);
  for (int k = 0; k < lay.K; ++k) {
    const int off = cfg.layout.block_offset(k);
    const MatrixXd block = sigma_bar.block(off, off, lay.p[k], lay.p[k]);
    const SymEig eig = sym_eig(block, "modality covariance block");
    for (int j = 0; j < lay.d; ++j) {
      // eigenvalues ascending; take leading directions from the back
      const VectorXd v = eig.vectors.col(lay.p[k] - 1 - j);
      for (int i = 0; i < lay.p[k]; ++i)
        theta(lay.x_index(k, i, j)) = v(i) + 0.01 * rng.normal();
    }
  }
  lay.for_each_a([&](int at, int, int, bool diag) { theta(at) = diag ? 0.0 : 0.1 * rng.normal(); });
  for (int i = 0; i < lay.bt_len; ++i) theta(lay.bt_off + i) = 0.1 * rng.normal();
  // b stays zero
  for (int l = 0; l < lay.lw_len; ++l) theta(lay.lw_off + l) = -1.0;
  return theta;
}

struct FitResult {
  ModelConfig cfg;
  EmpiricalCov cov;
  SampleResult sample;

  int total_draws() const {
    int n = 0;
    for (const auto& c : sample.chains) n += static_cast<int>(c.draws.rows());
    return n;
  }
};

inline FitResult fit_model(const Dataset& ds, int rank, const SamplerSettings& settings,
                           bool include_time = true) {
  FitResult fr;
  fr.cfg = ModelConfig::from_dataset(ds, rank, include_time);
  fr.cfg.check();
  fr.cov = empirical_covariance(ds);
  WhiteningCache cache(ds.layout, fr.cov.cov);
  cache.warm(ds);
  PosteriorEval eval(PreparedData::build(ds, fr.cfg, cache));

  const LogDensity target = [&eval](const VectorXd& q, VectorXd& grad) {
    return eval.value_and_grad(q, grad);
  };
  const MatrixXd sigma = fr.cov.cov;
  const ModelConfig cfg = fr.cfg;
  fr.sample = run_sampler(target, settings, [&cfg, &sigma](int, Rng& rng) {
    return init_theta(cfg, sigma, rng);
  });
  return fr;
}

// Applies f to every retained draw of every chain, in chain-major order.
inline void for_each_draw(const FitResult& fr,
                          const std::function<void(const ModelParams&, const VectorXd&)>& f) {
  for (const auto& chain : fr.sample.chains)
    for (Eigen::Index r = 0; r < chain.draws.rows(); ++r) {
      const VectorXd theta = chain.draws.row(r).transpose();
      f(to_model(theta, fr.cfg), theta);
    }
}

// Parameters of the single retained draw with the highest joint density;
// deterministic representative used for calibration reporting.
inline ModelParams best_draw_params(const FitResult& fr) {
  const ChainResult* best_chain = nullptr;
  Eigen::Index best_row = -1;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& chain : fr.sample.chains)
    for (Eigen::Index r = 0; r < chain.logp.size(); ++r)
      if (chain.logp(r) > best) {
        best = chain.logp(r);
        best_chain = &chain;
        best_row = r;
      }
  if (best_chain == nullptr) throw UsageError("no retained draws");
  return to_model(best_chain->draws.row(best_row).transpose(), fr.cfg);
}

struct PairSummaries {
  CrossSummary cov;
  CrossSummary corr;
};

// Posterior summaries of the cross-covariance and cross-correlation between
// two modalities at a set of design points.
inline std::vector<PairSummaries> summarize_pair(const FitResult& fr,
                                                 const std::vector<VectorXd>& designs, int ka,
                                                 int kb, ShiftMode mode, double level = 0.05) {
  const InterceptAdjuster adj(fr.cov.cov, fr.cfg.layout.num_modalities());
  std::vector<MatrixDrawStack> cov_stacks(designs.size()), corr_stacks(designs.size());
  const auto var_names_a = fr.cfg.layout.variable_names[ka];
  const auto var_names_b = fr.cfg.layout.variable_names[kb];
  for_each_draw(fr, [&](const ModelParams& mp, const VectorXd&) {
    const MatrixXd b = adj.adjust(mp.btilde, mp.stacked_gamma(), mode);
    for (std::size_t qi = 0; qi < designs.size(); ++qi) {
      const VectorXd w = latent_scales(b, designs[qi]);
      cov_stacks[qi].add(cross_cov(mp.gamma[ka], mp.gamma[kb], w));
      corr_stacks[qi].add(cross_corr(mp.gamma[ka], mp.gamma[kb], w, var_names_a, var_names_b));
    }
  });
  std::vector<PairSummaries> out;
  for (std::size_t qi = 0; qi < designs.size(); ++qi)
    out.push_back({cov_stacks[qi].summarize(level), corr_stacks[qi].summarize(level)});
  return out;
}

struct ComboEstimates {
  ComboMap cov_median, corr_median;
};

// Median cross-covariance/correlation between the first two modalities at the
// benchmark's covariate combinations (design (1, x1, x2)).
inline ComboEstimates estimate_sim_combos(const FitResult& fr,
                                          ShiftMode mode = ShiftMode::calibrated,
                                          int visits = 5) {
  const auto combos = sim_covariate_combos(visits);
  std::vector<VectorXd> designs;
  for (const auto& [x1, x2] : combos) {
    VectorXd x(3);
    x << 1.0, x1, x2;
    designs.push_back(x);
  }
  const auto sums = summarize_pair(fr, designs, 0, 1, mode);
  ComboEstimates est;
  for (std::size_t i = 0; i < combos.size(); ++i) {
    est.cov_median.emplace(combos[i], sums[i].cov.median);
    est.corr_median.emplace(combos[i], sums[i].corr.median);
  }
  return est;
}

// Split R-hat over scalar traces of identifiable quantities: the log
// posterior and a spread of cross-covariance entries at a reference design.
// Raw coordinates are not used because latent directions can relabel across
// chains without changing the model.
inline std::vector<double> estimand_rhats(const FitResult& fr, const VectorXd& x_design) {
  if (fr.sample.chains.size() < 2) throw UsageError("R-hat needs at least 2 chains");
  const InterceptAdjuster adj(fr.cov.cov, fr.cfg.layout.num_modalities());
  const int ka = 0, kb = fr.cfg.layout.num_modalities() > 1 ? 1 : 0;
  const int pa = fr.cfg.layout.dim(ka), pb = fr.cfg.layout.dim(kb);
  std::vector<std::pair<int, int>> cells;
  for (int i = 0; i < std::min(pa, 3); ++i)
    for (int j = 0; j < std::min(pb, 3); ++j) cells.emplace_back(i, j);

  std::vector<std::vector<VectorXd>> traces(cells.size() + 1);
  for (auto& t : traces) t.resize(fr.sample.chains.size());
  for (std::size_t c = 0; c < fr.sample.chains.size(); ++c) {
    const auto& chain = fr.sample.chains[c];
    const Eigen::Index n = chain.draws.rows();
    for (auto& t : traces) t[c].resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const VectorXd theta = chain.draws.row(r).transpose();
      const ModelParams mp = to_model(theta, fr.cfg);
      const MatrixXd b = adj.adjust(mp.btilde, mp.stacked_gamma(), ShiftMode::calibrated);
      const VectorXd w = latent_scales(b, x_design);
      const MatrixXd cc = cross_cov(mp.gamma[ka], mp.gamma[kb], w);
      for (std::size_t ci = 0; ci < cells.size(); ++ci)
        traces[ci][c](r) = cc(cells[ci].first, cells[ci].second);
      traces[cells.size()][c](r) = chain.logp(r);
    }
  }
  std::vector<double> rhats;
  for (const auto& t : traces) rhats.push_back(split_rhat(t));
  return rhats;
}

}  // namespace asyncov
