#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "asyncov/fit.hpp"
#include "asyncov/lmm.hpp"
#include "asyncov/simulation.hpp"

namespace asyncov {

struct BenchGrid {
  std::vector<int> ranks{1, 3, 5};
  std::vector<double> sync_pcts{0.25, 0.5, 1.0};
  std::vector<int> subject_counts{30, 60};
  int visits = 5;
  int reps = 30;
  std::uint64_t seed = 1;
  int workers = 0;  // 0 → available parallelism

  // sampler budget per replication fit
  int chains = 2;
  int warmup = 500;
  int draws = 500;
  int max_depth = 10;
  double target_accept = 0.8;
  ShiftMode shift = ShiftMode::calibrated;

  void check() const {
    if (ranks.empty() || sync_pcts.empty() || subject_counts.empty())
      throw UsageError("benchmark grid: empty axis");
    for (int r : ranks)
      if (r < 1 || r > 10) throw UsageError("benchmark grid: rank must be in [1, 10]");
    for (double s : sync_pcts)
      if (s < 0.0 || s > 1.0) throw UsageError("benchmark grid: sync_pct must be in [0, 1]");
    for (int n : subject_counts)
      if (n < 2) throw UsageError("benchmark grid: need at least 2 subjects");
    if (visits < 1) throw UsageError("benchmark grid: visits must be positive");
    if (reps < 1) throw UsageError("benchmark grid: reps must be positive");
  }
};

struct BenchRow {
  int n_subjects = 0;
  int n_i = 0;
  double sync_pct = 0.0;
  int rank = 0;
  int rep = 0;
  std::string method;         // proposed | naive
  std::string metric_target;  // cov | corr
  std::string norm;           // frobenius | max
  double loss = std::numeric_limits<double>::quiet_NaN();
  std::string status;         // ok | failed
};

// Per-replication spread of the generating coefficients across latent
// directions (one value per design column), kept as metadata alongside the
// losses.
struct BenchMetaRow {
  int n_subjects = 0;
  int n_i = 0;
  double sync_pct = 0.0;
  int rank = 0;
  int rep = 0;
  double b_spread_intercept = 0.0;
  double b_spread_x1 = 0.0;
  double b_spread_x2 = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<BenchMetaRow> meta;
};

namespace detail {

inline double column_sd(const MatrixXd& m, int col) {
  const VectorXd v = m.col(col);
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

struct BenchJob {
  int n_subjects;
  double sync_pct;
  int rank;
  int rep;
  std::uint64_t seed;
};

inline void push_loss_rows(std::vector<BenchRow>& out, const BenchJob& job, int visits,
                           const std::string& method, const ComboMap* cov_est,
                           const ComboMap* corr_est, const ComboMap& cov_truth,
                           const ComboMap& corr_truth) {
  for (const std::string& target : {std::string("cov"), std::string("corr")}) {
    const ComboMap* est = target == "cov" ? cov_est : corr_est;
    const ComboMap& truth = target == "cov" ? cov_truth : corr_truth;
    for (LossNorm norm : {LossNorm::frobenius, LossNorm::max}) {
      BenchRow row;
      row.n_subjects = job.n_subjects;
      row.n_i = visits;
      row.sync_pct = job.sync_pct;
      row.rank = job.rank;
      row.rep = job.rep;
      row.method = method;
      row.metric_target = target;
      row.norm = norm_name(norm);
      if (est != nullptr) {
        try {
          row.loss = evaluation_loss(*est, truth, norm);
          row.status = "ok";
        } catch (const std::exception&) {
          row.status = "failed";
        }
      } else {
        row.status = "failed";
      }
      out.push_back(row);
    }
  }
}

}  // namespace detail

// Runs every (N, sync_pct, rank, rep) combination: simulate, fit the proposed
// model at the cell's rank, fit the naive comparator, and record all four
// losses per method. Failed fits keep their rows with status "failed". Jobs
// run on a worker pool with per-job derived seeds; output order is
// deterministic regardless of scheduling.
inline BenchResult run_benchmark(const BenchGrid& grid,
                                 const std::function<void(const std::string&)>& progress = {}) {
  grid.check();
  std::vector<detail::BenchJob> jobs;
  std::uint64_t ji = 0;
  for (int n : grid.subject_counts)
    for (double sync : grid.sync_pcts)
      for (int rank : grid.ranks)
        for (int rep = 1; rep <= grid.reps; ++rep)
          jobs.push_back({n, sync, rank, rep, derive_seed(grid.seed, ++ji)});

  std::vector<std::vector<BenchRow>> job_rows(jobs.size());
  std::vector<BenchMetaRow> job_meta(jobs.size());
  std::mutex progress_mutex;

  auto run_job = [&](std::size_t idx) {
    const detail::BenchJob& job = jobs[idx];
    Rng rng(job.seed);
    const SimTruth truth = generate_truth(rng);

    SimConfig cfg;
    cfg.n_subjects = job.n_subjects;
    cfg.visits = grid.visits;
    cfg.sync_pct = job.sync_pct;
    cfg.fitted_rank = job.rank;
    cfg.seed = job.seed;
    const Dataset ds = simulate_dataset(truth, cfg, rng);

    ComboMap cov_truth, corr_truth;
    for (const auto& [x1, x2] : sim_covariate_combos(grid.visits)) {
      const CrossTargets t = true_cross_targets(truth, x1, x2);
      cov_truth.emplace(std::make_pair(x1, x2), t.cov);
      corr_truth.emplace(std::make_pair(x1, x2), t.corr);
    }

    BenchMetaRow meta;
    meta.n_subjects = job.n_subjects;
    meta.n_i = grid.visits;
    meta.sync_pct = job.sync_pct;
    meta.rank = job.rank;
    meta.rep = job.rep;
    meta.b_spread_intercept = detail::column_sd(truth.b_true, 0);
    meta.b_spread_x1 = detail::column_sd(truth.b_true, 1);
    meta.b_spread_x2 = detail::column_sd(truth.b_true, 2);
    job_meta[idx] = meta;

    std::vector<BenchRow>& rows = job_rows[idx];

    ComboEstimates proposed;
    bool proposed_ok = false;
    try {
      SamplerSettings settings;
      settings.chains = grid.chains;
      settings.warmup = grid.warmup;
      settings.draws = grid.draws;
      settings.max_depth = grid.max_depth;
      settings.target_accept = grid.target_accept;
      settings.seed = derive_seed(job.seed, 0xF17);
      const FitResult fr = fit_model(ds, job.rank, settings, /*include_time=*/false);
      proposed = estimate_sim_combos(fr, grid.shift, grid.visits);
      proposed_ok = true;
    } catch (const std::exception&) {
      proposed_ok = false;
    }
    detail::push_loss_rows(rows, job, grid.visits, "proposed",
                           proposed_ok ? &proposed.cov_median : nullptr,
                           proposed_ok ? &proposed.corr_median : nullptr, cov_truth, corr_truth);

    ComboMap naive_cov, naive_corr;
    bool naive_ok = false;
    try {
      NaiveOptions opt;
      opt.category_covariates = {"x1", "x2"};
      const NaiveResult nr = naive_cross_cov(ds, opt);
      for (const auto& [key, cell] : nr) {
        if (cell.insufficient) continue;
        naive_cov.emplace(std::make_pair(key[0], key[1]), cell.cov);
        naive_corr.emplace(std::make_pair(key[0], key[1]), cell.corr);
      }
      naive_ok = true;
    } catch (const std::exception&) {
      naive_ok = false;
    }
    detail::push_loss_rows(rows, job, grid.visits, "naive", naive_ok ? &naive_cov : nullptr,
                           naive_ok ? &naive_corr : nullptr, cov_truth, corr_truth);

    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress("cell N=" + std::to_string(job.n_subjects) + " sync=" + format_double(job.sync_pct) +
               " rank=" + std::to_string(job.rank) + " rep=" + std::to_string(job.rep) + " done");
    }
  };

  int workers = grid.workers > 0 ? grid.workers
                                 : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= jobs.size()) return;
          run_job(i);
        }
      });
    for (auto& t : pool) t.join();
  }

  BenchResult result;
  result.meta = std::move(job_meta);
  for (auto& rows : job_rows)
    result.rows.insert(result.rows.end(), rows.begin(), rows.end());
  return result;
}

inline void write_bench_csv(const BenchResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "N,n_i,sync_pct,rank,rep,method,metric_target,norm,loss,status\n";
  for (const auto& r : result.rows) {
    out << r.n_subjects << ',' << r.n_i << ',' << format_double(r.sync_pct) << ',' << r.rank << ','
        << r.rep << ',' << r.method << ',' << r.metric_target << ',' << r.norm << ','
        << (std::isfinite(r.loss) ? format_double(r.loss) : std::string()) << ',' << r.status
        << '\n';
  }
}

inline void write_bench_meta_csv(const BenchResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "N,n_i,sync_pct,rank,rep,b_spread_intercept,b_spread_x1,b_spread_x2\n";
  for (const auto& m : result.meta) {
    out << m.n_subjects << ',' << m.n_i << ',' << format_double(m.sync_pct) << ',' << m.rank << ','
        << m.rep << ',' << format_double(m.b_spread_intercept) << ','
        << format_double(m.b_spread_x1) << ',' << format_double(m.b_spread_x2) << '\n';
  }
}

}  // namespace asyncov
