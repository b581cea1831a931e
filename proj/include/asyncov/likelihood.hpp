#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "asyncov/model.hpp"
#include "asyncov/whitening.hpp"

namespace asyncov {

// Log-scale values are clamped to +-kLogScaleCap before exponentiation; the
// clamp also zeroes the corresponding gradient entries.
inline constexpr double kLogScaleCap = 30.0;

inline VectorXd scale_log_values(const MatrixXd& btilde, const VectorXd& x_design) {
  VectorXd v = btilde * x_design;
  for (Eigen::Index l = 0; l < v.size(); ++l)
    v(l) = std::clamp(v(l), -kLogScaleCap, kLogScaleCap);
  return v;
}

// Whitened low-rank projection of one record's residual:
//   z = (1/m) Gamma_M^T W (y - Gamma_M (A x + b_i)),  W = inv sqrt of the
// working covariance on the observed block, m = number of observed modalities.
inline VectorXd project_residual(const ModelParams& mp, const ModalityLayout& layout,
                                 const PatternWhitener& pw, const VectorXd& y,
                                 const VectorXd& x_design, int subject) {
  const int d = static_cast<int>(mp.gamma[0].cols());
  MatrixXd gamma_m(static_cast<int>(pw.var_idx.size()), d);
  int at = 0;
  for (int k : pw.mask) {
    gamma_m.middleRows(at, layout.dim(k)) = mp.gamma[k];
    at += layout.dim(k);
  }
  const VectorXd h = mp.a * x_design + mp.b.row(subject).transpose();
  const VectorXd resid = y - gamma_m * h;
  return (gamma_m.transpose() * (pw.w * resid)) / static_cast<double>(pw.mask.size());
}

// Gaussian log density of z under N(0, diag(exp(v))), constants dropped.
inline double record_loglik(const VectorXd& z, const VectorXd& v) {
  double ll = 0.0;
  for (Eigen::Index l = 0; l < z.size(); ++l)
    ll += -0.5 * v(l) - 0.5 * z(l) * z(l) * std::exp(-v(l));
  return ll;
}

// Reference likelihood: straight loop over records. Quadratic in block size
// per record; used as an oracle for the factored evaluator.
inline double log_likelihood(const ModelParams& mp, const ModelConfig& cfg, const Dataset& ds,
                             const WhiteningCache& cache) {
  double ll = 0.0;
  for (std::size_t r = 0; r < ds.records.size(); ++r) {
    const auto& rec = ds.records[r];
    const auto& pw = cache.get(rec.mask);
    const VectorXd x = build_design(rec, cfg.include_time);
    const VectorXd z = project_residual(mp, cfg.layout, pw, rec.y_obs, x, ds.record_subject[r]);
    const VectorXd v = scale_log_values(mp.btilde, x);
    ll += record_loglik(z, v);
  }
  return ll;
}

inline double log_likelihood(const VectorXd& theta, const ModelConfig& cfg, const Dataset& ds,
                             const WhiteningCache& cache) {
  return log_likelihood(to_model(theta, cfg), cfg, ds, cache);
}

inline double log_posterior(const VectorXd& theta, const ModelConfig& cfg, const Dataset& ds,
                            const WhiteningCache& cache) {
  return log_prior(theta, cfg) + log_likelihood(theta, cfg, ds, cache);
}

// Records grouped by missingness pattern with whitened observations cached, so
// repeated posterior evaluations only pay O(p_M d) per pattern plus O(d) per
// record.
struct PatternGroup {
  std::vector<int> mask;
  std::vector<int> var_idx;                  // global variable indices
  std::vector<std::pair<int, int>> var_src;  // (modality, row within block)
  MatrixXd w;                                // whitener for this pattern
  double inv_m = 1.0;                        // 1 / #observed modalities
  std::vector<int> subj;                     // per record
  std::vector<int> design;                   // per record, index into designs
  MatrixXd wy;                               // p_M x n_M, columns W * y
};

struct PreparedData {
  ModelConfig cfg;
  ParamLayout lay;
  std::vector<PatternGroup> groups;
  std::vector<VectorXd> designs;  // unique design vectors
  int num_records = 0;

  static PreparedData build(const Dataset& ds, const ModelConfig& cfg,
                            const WhiteningCache& cache) {
    PreparedData prep;
    prep.cfg = cfg;
    prep.cfg.check();
    prep.lay = ParamLayout::make(cfg);
    prep.num_records = ds.num_records();

    std::map<std::uint64_t, int> group_of;
    std::map<std::vector<double>, int> design_of;
    std::vector<std::vector<int>> members;  // record indices per group

    for (std::size_t r = 0; r < ds.records.size(); ++r) {
      const auto& rec = ds.records[r];
      const auto key = mask_key(rec.mask);
      auto [it, fresh] = group_of.emplace(key, static_cast<int>(prep.groups.size()));
      if (fresh) {
        PatternGroup g;
        g.mask = rec.mask;
        const auto& pw = cache.get(rec.mask);
        g.var_idx = pw.var_idx;
        for (int k : rec.mask)
          for (int j = 0; j < cfg.layout.dim(k); ++j) g.var_src.emplace_back(k, j);
        g.w = pw.w;
        g.inv_m = 1.0 / static_cast<double>(rec.mask.size());
        prep.groups.push_back(std::move(g));
        members.emplace_back();
      }
      members[it->second].push_back(static_cast<int>(r));
    }

    for (std::size_t gi = 0; gi < prep.groups.size(); ++gi) {
      auto& g = prep.groups[gi];
      const int n = static_cast<int>(members[gi].size());
      g.wy.resize(static_cast<int>(g.var_idx.size()), n);
      for (int j = 0; j < n; ++j) {
        const int r = members[gi][j];
        const auto& rec = ds.records[r];
        g.wy.col(j) = g.w * rec.y_obs;
        g.subj.push_back(ds.record_subject[r]);
        const VectorXd x = build_design(rec, cfg.include_time);
        std::vector<double> dk(x.data(), x.data() + x.size());
        auto [dit, dfresh] = design_of.emplace(std::move(dk), static_cast<int>(prep.designs.size()));
        if (dfresh) prep.designs.push_back(x);
        g.design.push_back(dit->second);
      }
    }
    return prep;
  }
};

// Fast log posterior with analytic gradient. Per evaluation: one polar
// orthonormalization per modality, one whitened-projection matrix product per
// pattern, O(d) per record, and one gradient pullback per modality.
class PosteriorEval {
 public:
  explicit PosteriorEval(PreparedData prep) : prep_(std::move(prep)) {}

  int dim() const { return prep_.lay.total; }
  const PreparedData& prepared() const { return prep_; }

  double value(const VectorXd& theta) const { return eval(theta, nullptr); }

  // Returns the log posterior and fills grad. On numerical failure (rank
  // collapse, non-finite values) returns -inf with a zero gradient so samplers
  // can treat the point as divergent.
  double value_and_grad(const VectorXd& theta, VectorXd& grad) const {
    grad = VectorXd::Zero(prep_.lay.total);
    return eval(theta, &grad);
  }

 private:
  double eval(const VectorXd& theta, VectorXd* grad) const {
    try {
      return eval_inner(theta, grad);
    } catch (const NumericalError&) {
      if (grad) grad->setZero();
      return -std::numeric_limits<double>::infinity();
    }
  }

  double eval_inner(const VectorXd& theta, VectorXd* grad) const {
    const ParamLayout& lay = prep_.lay;
    const int d = lay.d;
    const ModelParams mp = to_model(theta, prep_.cfg);

    // Per-design caches.
    const int n_des = static_cast<int>(prep_.designs.size());
    MatrixXd ax(d, n_des), v(d, n_des), ev(d, n_des);
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> clamped(d, n_des);
    for (int j = 0; j < n_des; ++j) {
      ax.col(j) = mp.a * prep_.designs[j];
      VectorXd vraw = mp.btilde * prep_.designs[j];
      for (int l = 0; l < d; ++l) {
        clamped(l, j) = std::abs(vraw(l)) > kLogScaleCap;
        v(l, j) = std::clamp(vraw(l), -kLogScaleCap, kLogScaleCap);
        ev(l, j) = std::exp(-v(l, j));
      }
    }

    double ll = 0.0;
    MatrixXd sum_gh, sum_gv, a_grad, bt_grad, b_grad;
    std::vector<MatrixXd> g_gamma;
    if (grad) {
      sum_gh = MatrixXd::Zero(d, n_des);
      sum_gv = MatrixXd::Zero(d, n_des);
      b_grad = MatrixXd::Zero(lay.N, d);
      for (int k = 0; k < lay.K; ++k) g_gamma.emplace_back(MatrixXd::Zero(lay.p[k], d));
    }

    for (const auto& g : prep_.groups) {
      const int pm = static_cast<int>(g.var_idx.size());
      const int n = static_cast<int>(g.subj.size());
      MatrixXd gamma_m(pm, d);
      for (int a = 0; a < pm; ++a)
        gamma_m.row(a) = mp.gamma[g.var_src[a].first].row(g.var_src[a].second);
      const MatrixXd wgamma = g.w * gamma_m;
      const MatrixXd mm = gamma_m.transpose() * wgamma;   // d x d
      const MatrixXd t = gamma_m.transpose() * g.wy;      // d x n

      MatrixXd gz_all, h_all;
      if (grad) {
        gz_all.resize(d, n);
        h_all.resize(d, n);
      }
      for (int j = 0; j < n; ++j) {
        const int dj = g.design[j];
        const VectorXd h = ax.col(dj) + mp.b.row(g.subj[j]).transpose();
        const VectorXd z = g.inv_m * (t.col(j) - mm * h);
        for (int l = 0; l < d; ++l) {
          const double zl = z(l);
          ll += -0.5 * v(l, dj) - 0.5 * zl * zl * ev(l, dj);
        }
        if (grad) {
          VectorXd gz(d), gv(d);
          for (int l = 0; l < d; ++l) {
            gz(l) = -z(l) * ev(l, dj);
            gv(l) = -0.5 + 0.5 * z(l) * z(l) * ev(l, dj);
          }
          const VectorXd gh = -g.inv_m * (mm * gz);
          sum_gh.col(dj) += gh;
          sum_gv.col(dj) += gv;
          b_grad.row(g.subj[j]) += gh.transpose();
          gz_all.col(j) = gz;
          h_all.col(j) = h;
        }
      }
      if (grad && n > 0) {
        // d ll / d Gamma_M = (1/m) [ W_Y G_Z^T - (W Gamma)(H G_Z^T + G_Z H^T) ]
        const MatrixXd p_acc = g.wy * gz_all.transpose();
        const MatrixXd q_acc = h_all * gz_all.transpose() + gz_all * h_all.transpose();
        const MatrixXd gg = g.inv_m * (p_acc - wgamma * q_acc);
        for (int a = 0; a < pm; ++a)
          g_gamma[g.var_src[a].first].row(g.var_src[a].second) += gg.row(a);
      }
    }

    if (!std::isfinite(ll)) throw NumericalError("non-finite likelihood");

    const double lp = log_prior(theta, prep_.cfg);
    if (!std::isfinite(lp)) throw NumericalError("non-finite prior");

    if (grad) {
      a_grad = MatrixXd::Zero(d, lay.q);
      bt_grad = MatrixXd::Zero(d, lay.q);
      for (int j = 0; j < n_des; ++j) {
        a_grad += sum_gh.col(j) * prep_.designs[j].transpose();
        VectorXd gvj = sum_gv.col(j);
        for (int l = 0; l < d; ++l)
          if (clamped(l, j)) gvj(l) = 0.0;
        bt_grad += gvj * prep_.designs[j].transpose();
      }
      VectorXd& gr = *grad;
      for (int k = 0; k < lay.K; ++k) {
        const MatrixXd gx = polar_backprop(mp.x[k], mp.polar[k], g_gamma[k]);
        for (int i = 0; i < lay.p[k]; ++i)
          for (int j = 0; j < d; ++j) gr(lay.x_index(k, i, j)) += gx(i, j);
      }
      lay.for_each_a([&](int at, int l, int c, bool diag) {
        gr(at) += diag ? a_grad(l, c) * mp.a(l, c) : a_grad(l, c);
      });
      for (int l = 0; l < d; ++l)
        for (int c = 0; c < lay.q; ++c) gr(lay.bt_index(l, c)) += bt_grad(l, c);
      // b_grad holds d ll / d b for the materialized intercepts
      // b = omega^{1/2} b_std; pull back to the stored standardized block and
      // to the log variances through the shared scale.
      const VectorXd root_wb = (0.5 * mp.log_wb.array()).exp();
      for (int i = 0; i < lay.N; ++i)
        for (int l = 0; l < d; ++l) {
          const double gb = b_grad(i, l);
          gr(lay.b_index(i, l)) += gb * root_wb(l);
          gr(lay.lw_off + l) += 0.5 * gb * mp.b(i, l);
        }
      add_log_prior_grad(theta, prep_.cfg, gr);
      if (!gr.allFinite()) throw NumericalError("non-finite gradient");
    }
    return ll + lp;
  }

  PreparedData prep_;
};

}  // namespace asyncov
