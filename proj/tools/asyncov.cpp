#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "asyncov/artifacts.hpp"
#include "asyncov/benchmark.hpp"
#include "asyncov/dataset_io.hpp"
#include "asyncov/fit.hpp"
#include "asyncov/manifest.hpp"
#include "asyncov/version.hpp"

namespace fs = std::filesystem;
using namespace asyncov;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

KeyValueFile load_config(const std::string& path) {
  if (path.empty()) return KeyValueFile::parse_text("", "<no config>");
  return KeyValueFile::parse_file(path);
}

// flags win over config values, which win over defaults
template <typename T, typename F>
T resolve(const CLI::Option* opt, const T& flag_value, F&& from_config) {
  return (opt != nullptr && opt->count() > 0) ? flag_value : from_config();
}

std::vector<std::pair<std::string, double>> parse_assignments(const std::string& text) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& item : split_list(text)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw UsageError("expected name=value in covariate query, got '" + item + "'");
    out.emplace_back(trim(item.substr(0, eq)),
                     parse_double(trim(item.substr(eq + 1)), "covariate query"));
  }
  return out;
}

int parse_modality_ref(const std::string& token, const ModalityLayout& layout) {
  for (int k = 0; k < layout.num_modalities(); ++k)
    if (layout.modality_names[k] == token) return k;
  try {
    const int k = std::stoi(token);
    if (k >= 1 && k <= layout.num_modalities()) return k - 1;
  } catch (...) {
  }
  std::string known;
  for (const auto& n : layout.modality_names) known += (known.empty() ? "" : ", ") + n;
  throw UsageError("unknown modality '" + token + "'; use a 1-based index or one of: " + known);
}

std::vector<double> config_double_list(const KeyValueFile& kv, const std::string& key,
                                       const std::vector<double>& fallback) {
  if (!kv.has(key)) return fallback;
  return kv.get_double_list(key);
}

std::vector<int> to_int_list(const std::vector<double>& v, const std::string& what) {
  std::vector<int> out;
  for (double x : v) {
    const int i = static_cast<int>(x);
    if (static_cast<double>(i) != x) throw UsageError(what + " must be integers");
    out.push_back(i);
  }
  return out;
}

Json sampler_json(const SamplerSettings& s) {
  return Json{{"chains", s.chains},         {"warmup", s.warmup},
              {"draws_per_chain", s.draws}, {"max_depth", s.max_depth},
              {"target_accept", s.target_accept}, {"init_step", s.init_step}};
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const std::string& config_path, const CLI::Option* o_subjects, int f_subjects,
                 const CLI::Option* o_visits, int f_visits, const CLI::Option* o_sync,
                 double f_sync, const CLI::Option* o_seed, std::uint64_t f_seed,
                 const std::string& out_dir) {
  Timer timer;
  const KeyValueFile kv = load_config(config_path);
  SimConfig sc;
  sc.n_subjects = resolve(o_subjects, f_subjects,
                          [&] { return static_cast<int>(kv.get_int_or("subjects", 30)); });
  sc.visits = resolve(o_visits, f_visits,
                      [&] { return static_cast<int>(kv.get_int_or("visits", 5)); });
  sc.sync_pct = resolve(o_sync, f_sync, [&] { return kv.get_double_or("sync_pct", 0.5); });
  sc.seed = resolve(o_seed, f_seed, [&] {
    return static_cast<std::uint64_t>(kv.get_int_or("seed", 1));
  });
  sc.check();

  Rng rng(sc.seed);
  const SimTruth truth = generate_truth(rng);
  const Dataset ds = simulate_dataset(truth, sc, rng);

  fs::create_directories(out_dir);
  IngestSpec spec;
  spec.covariate_cols = {"x1", "x2"};
  spec.include_time = false;  // the generating design is (1, x1, x2)
  spec.layout = truth.layout;
  write_dataset_csv((fs::path(out_dir) / "dataset.csv").string(), ds, spec);
  {
    std::ofstream out((fs::path(out_dir) / "ingest.cfg").string(), std::ios::binary);
    out << spec.to_config_text();
  }
  const auto vars = truth.layout.flat_variable_names();
  std::vector<std::string> factor_names, coef_names = {"intercept", "x1", "x2"};
  for (int j = 1; j <= truth.gamma_star.cols(); ++j)
    factor_names.push_back("f" + std::to_string(j));
  write_matrix_csv((fs::path(out_dir) / "truth_gamma.csv").string(), truth.gamma_star, vars,
                   factor_names);
  write_matrix_csv((fs::path(out_dir) / "truth_a.csv").string(), truth.a_true, vars, coef_names);
  write_matrix_csv((fs::path(out_dir) / "truth_b.csv").string(), truth.b_true, vars, coef_names);

  RunManifest man;
  man.command = "simulate";
  man.seed = sc.seed;
  man.config = Json{{"subjects", sc.n_subjects},
                    {"visits", sc.visits},
                    {"sync_pct", sc.sync_pct},
                    {"records", ds.num_records()},
                    {"out", out_dir}};
  man.wall_seconds = timer.seconds();
  man.write((fs::path(out_dir) / "manifest.json").string());
  std::cout << "simulate: wrote " << ds.num_records() << " records for " << sc.n_subjects
            << " subjects to " << out_dir << "/dataset.csv\n";
  return 0;
}

// --------------------------------------------------------------------- fit

int cmd_fit(const std::string& config_path, const CLI::Option* o_data, std::string data_path,
            const CLI::Option* o_rank, int f_rank, const CLI::Option* o_chains, int f_chains,
            const CLI::Option* o_warmup, int f_warmup, const CLI::Option* o_draws, int f_draws,
            const CLI::Option* o_seed, std::uint64_t f_seed, const CLI::Option* o_accept,
            double f_accept, const CLI::Option* o_depth, int f_depth, const std::string& out_dir) {
  Timer timer;
  const KeyValueFile kv = load_config(config_path);
  data_path = resolve(o_data, data_path, [&] { return kv.get("data"); });
  const IngestSpec spec = IngestSpec::from_config(kv);
  const Dataset ds = ingest_csv(data_path, spec);

  const int rank = resolve(o_rank, f_rank,
                           [&] { return static_cast<int>(kv.get_int_or("rank", 3)); });
  SamplerSettings settings;
  settings.chains = resolve(o_chains, f_chains,
                            [&] { return static_cast<int>(kv.get_int_or("chains", 4)); });
  settings.warmup = resolve(o_warmup, f_warmup,
                            [&] { return static_cast<int>(kv.get_int_or("warmup", 1000)); });
  settings.draws = resolve(o_draws, f_draws,
                           [&] { return static_cast<int>(kv.get_int_or("draws", 500)); });
  settings.seed = resolve(o_seed, f_seed, [&] {
    return static_cast<std::uint64_t>(kv.get_int_or("seed", 1));
  });
  settings.target_accept =
      resolve(o_accept, f_accept, [&] { return kv.get_double_or("target_accept", 0.8); });
  settings.max_depth = resolve(o_depth, f_depth,
                               [&] { return static_cast<int>(kv.get_int_or("max_depth", 10)); });
  settings.init_step = kv.get_double_or("init_step", 0.0);

  const FitResult fr = fit_model(ds, rank, settings, spec.include_time);

  fs::create_directories(out_dir);
  write_fit_artifacts(out_dir, fr, ds.covariate_names);
  const auto diag = coordinate_diagnostics(fr);
  write_diagnostics_csv((fs::path(out_dir) / "diagnostics.csv").string(), diag);

  Json dj;
  dj["divergence_rate"] = fr.sample.divergence_rate;
  dj["reliable"] = fr.sample.reliable;
  Json chains = Json::array();
  for (const auto& c : fr.sample.chains)
    chains.push_back(Json{{"step_size", c.step_size},
                          {"post_divergences", c.post_divergences},
                          {"mean_accept", c.mean_accept}});
  dj["chains"] = chains;
  double max_rhat = 0.0, min_ess = std::numeric_limits<double>::infinity();
  bool have_rhat = settings.chains >= 2;
  for (const auto& d : diag) {
    if (std::isfinite(d.rhat)) max_rhat = std::max(max_rhat, d.rhat);
    if (std::isfinite(d.ess)) min_ess = std::min(min_ess, d.ess);
  }
  if (have_rhat) {
    dj["max_coordinate_split_rhat"] = max_rhat;
    VectorXd x0 = VectorXd::Zero(fr.cfg.design_dim);
    x0(0) = 1.0;
    Json er = Json::array();
    for (double r : estimand_rhats(fr, x0)) er.push_back(r);
    dj["estimand_split_rhat"] = er;
  } else {
    dj["rhat_notice"] = "single chain: R-hat omitted";
  }
  dj["min_ess"] = min_ess;

  RunManifest man;
  man.command = "fit";
  man.seed = settings.seed;
  man.config = Json{{"data", data_path},   {"rank", rank},
                    {"include_time", spec.include_time},
                    {"subjects", ds.num_subjects()},
                    {"records", ds.num_records()},
                    {"sampler", sampler_json(settings)},
                    {"out", out_dir}};
  man.diagnostics = dj;
  const InterceptAdjuster adj(fr.cov.cov, fr.cfg.layout.num_modalities());
  man.calibration = calibration_report(adj, best_draw_params(fr).stacked_gamma());
  man.wall_seconds = timer.seconds();
  man.write((fs::path(out_dir) / "manifest.json").string());

  std::cout << "fit: " << fr.total_draws() << " retained draws over " << settings.chains
            << " chain(s); divergence rate " << format_double(fr.sample.divergence_rate)
            << (fr.sample.reliable ? "" : " (UNRELIABLE: high divergence rate)") << "\n";
  if (have_rhat)
    std::cout << "fit: max coordinate split R-hat " << format_double(max_rhat) << "\n";
  else
    std::cout << "fit: single chain; R-hat omitted\n";
  std::cout << "fit: diagnostics table written to " << out_dir << "/diagnostics.csv\n";
  return 0;
}

// --------------------------------------------------------------- summarize

int cmd_summarize(const std::string& fit_dir, const std::string& at, const std::string& pair,
                  double level, const std::string& shift, const std::string& out_dir) {
  Timer timer;
  const FitArtifacts art = load_fit_artifacts(fit_dir);
  const FitResult& fr = art.fit;
  const VectorXd x = query_design(parse_assignments(at), art.covariate_names,
                                  fr.cfg.include_time);
  const auto pair_tokens = split_list(pair);
  if (pair_tokens.size() != 2) throw UsageError("--pair expects two modalities, e.g. 1,2");
  const int ka = parse_modality_ref(pair_tokens[0], fr.cfg.layout);
  const int kb = parse_modality_ref(pair_tokens[1], fr.cfg.layout);
  const ShiftMode mode = parse_shift_mode(shift);

  const auto sums = summarize_pair(fr, {x}, ka, kb, mode, level);
  const PairSummaries& s = sums[0];

  fs::create_directories(out_dir);
  const auto& rows = fr.cfg.layout.variable_names[ka];
  const auto& cols = fr.cfg.layout.variable_names[kb];
  auto write_summary = [&](const std::string& stem, const CrossSummary& cs) {
    write_matrix_csv((fs::path(out_dir) / (stem + "_median.csv")).string(), cs.median, rows, cols);
    write_matrix_csv((fs::path(out_dir) / (stem + "_lower.csv")).string(), cs.lower, rows, cols);
    write_matrix_csv((fs::path(out_dir) / (stem + "_upper.csv")).string(), cs.upper, rows, cols);
    write_matrix_csv((fs::path(out_dir) / (stem + "_flags.csv")).string(),
                     cs.flags.cast<double>(), rows, cols);
  };
  write_summary("cross_cov", s.cov);
  write_summary("cross_corr", s.corr);
  {
    Json sj;
    sj["at"] = at;
    sj["design"] = vector_json(x);
    sj["pair"] = Json::array(
        {fr.cfg.layout.modality_names[ka], fr.cfg.layout.modality_names[kb]});
    sj["level"] = level;
    for (const auto& [stem, cs] :
         {std::make_pair(std::string("cross_cov"), &s.cov),
          std::make_pair(std::string("cross_corr"), &s.corr)}) {
      sj[stem] = Json{{"median", matrix_json(cs->median)},
                      {"lower", matrix_json(cs->lower)},
                      {"upper", matrix_json(cs->upper)},
                      {"flags", matrix_json(cs->flags.cast<double>())}};
    }
    std::ofstream out((fs::path(out_dir) / "summary.json").string(), std::ios::binary);
    if (!out) throw DataError("cannot open summary.json for writing");
    out << sj.dump(2) << '\n';
  }

  RunManifest man;
  man.command = "summarize";
  man.config = Json{{"fit", fit_dir},
                    {"at", at},
                    {"design", vector_json(x)},
                    {"pair", Json::array({fr.cfg.layout.modality_names[ka],
                                          fr.cfg.layout.modality_names[kb]})},
                    {"level", level},
                    {"shift", shift_mode_name(mode)},
                    {"draws", static_cast<int>(fr.total_draws())},
                    {"out", out_dir}};
  const InterceptAdjuster adj(fr.cov.cov, fr.cfg.layout.num_modalities());
  man.calibration = calibration_report(adj, best_draw_params(fr).stacked_gamma());
  man.wall_seconds = timer.seconds();
  man.write((fs::path(out_dir) / "manifest.json").string());

  std::cout << "summarize: " << (1.0 - level) * 100 << "% intervals from " << fr.total_draws()
            << " draws written to " << out_dir << "\n";
  return 0;
}

// --------------------------------------------------------------- benchmark

int cmd_benchmark(const std::string& config_path, const CLI::Option* o_reps, int f_reps,
                  const CLI::Option* o_seed, std::uint64_t f_seed, const CLI::Option* o_workers,
                  int f_workers, const CLI::Option* o_ranks, std::string f_ranks,
                  const CLI::Option* o_sync, std::string f_sync, const CLI::Option* o_subjects,
                  std::string f_subjects, const CLI::Option* o_chains, int f_chains,
                  const CLI::Option* o_warmup, int f_warmup, const CLI::Option* o_draws,
                  int f_draws, bool quiet, const std::string& out_dir) {
  Timer timer;
  const KeyValueFile kv = load_config(config_path);
  BenchGrid grid;
  if (o_ranks != nullptr && o_ranks->count() > 0) {
    std::vector<double> v;
    for (const auto& s : split_list(f_ranks)) v.push_back(parse_double(s, "--ranks"));
    grid.ranks = to_int_list(v, "ranks");
  } else {
    grid.ranks = to_int_list(config_double_list(kv, "ranks", {1, 3, 5}), "ranks");
  }
  if (o_sync != nullptr && o_sync->count() > 0) {
    grid.sync_pcts.clear();
    for (const auto& s : split_list(f_sync)) grid.sync_pcts.push_back(parse_double(s, "--sync"));
  } else {
    grid.sync_pcts = config_double_list(kv, "sync_pcts", {0.25, 0.5, 1.0});
  }
  if (o_subjects != nullptr && o_subjects->count() > 0) {
    std::vector<double> v;
    for (const auto& s : split_list(f_subjects)) v.push_back(parse_double(s, "--subjects"));
    grid.subject_counts = to_int_list(v, "subjects");
  } else {
    grid.subject_counts =
        to_int_list(config_double_list(kv, "subject_counts", {30, 60}), "subject_counts");
  }
  grid.visits = static_cast<int>(kv.get_int_or("visits", 5));
  grid.reps = resolve(o_reps, f_reps,
                      [&] { return static_cast<int>(kv.get_int_or("reps", 30)); });
  grid.seed = resolve(o_seed, f_seed, [&] {
    return static_cast<std::uint64_t>(kv.get_int_or("seed", 1));
  });
  grid.workers = resolve(o_workers, f_workers,
                         [&] { return static_cast<int>(kv.get_int_or("workers", 0)); });
  grid.chains = resolve(o_chains, f_chains,
                        [&] { return static_cast<int>(kv.get_int_or("chains", 2)); });
  grid.warmup = resolve(o_warmup, f_warmup,
                        [&] { return static_cast<int>(kv.get_int_or("warmup", 500)); });
  grid.draws = resolve(o_draws, f_draws,
                       [&] { return static_cast<int>(kv.get_int_or("draws", 500)); });
  grid.max_depth = static_cast<int>(kv.get_int_or("max_depth", 10));
  grid.target_accept = kv.get_double_or("target_accept", 0.8);
  grid.shift = parse_shift_mode(kv.get_or("shift", "calibrated"));

  const auto progress = quiet ? std::function<void(const std::string&)>{}
                              : std::function<void(const std::string&)>(
                                    [](const std::string& msg) { std::cerr << msg << "\n"; });
  const BenchResult result = run_benchmark(grid, progress);

  fs::create_directories(out_dir);
  write_bench_csv(result, (fs::path(out_dir) / "results.csv").string());
  write_bench_meta_csv(result, (fs::path(out_dir) / "spread_meta.csv").string());

  int ok_rows = 0, failed_rows = 0;
  for (const auto& r : result.rows) (r.status == "ok" ? ok_rows : failed_rows)++;

  RunManifest man;
  man.command = "benchmark";
  man.seed = grid.seed;
  Json ranks = Json::array(), syncs = Json::array(), subjects = Json::array();
  for (int r : grid.ranks) ranks.push_back(r);
  for (double s : grid.sync_pcts) syncs.push_back(s);
  for (int n : grid.subject_counts) subjects.push_back(n);
  man.config = Json{{"ranks", ranks},
                    {"sync_pcts", syncs},
                    {"subjects", subjects},
                    {"visits", grid.visits},
                    {"reps", grid.reps},
                    {"workers", grid.workers},
                    {"sampler", Json{{"chains", grid.chains},
                                     {"warmup", grid.warmup},
                                     {"draws_per_chain", grid.draws},
                                     {"max_depth", grid.max_depth},
                                     {"target_accept", grid.target_accept}}},
                    {"shift", shift_mode_name(grid.shift)},
                    {"out", out_dir}};
  man.diagnostics = Json{{"rows", static_cast<int>(result.rows.size())},
                         {"ok_rows", ok_rows},
                         {"failed_rows", failed_rows}};
  man.wall_seconds = timer.seconds();
  man.write((fs::path(out_dir) / "manifest.json").string());

  std::cout << "benchmark: " << result.rows.size() << " rows (" << ok_rows << " ok, "
            << failed_rows << " failed) written to " << out_dir << "/results.csv\n";
  if (ok_rows == 0) throw NumericalError("benchmark: every cell failed");
  return 0;
}

// ---------------------------------------------------------------- validate

int cmd_validate(const std::string& config_path, const CLI::Option* o_data, std::string data_path,
                 const std::string& out_dir) {
  Timer timer;
  const KeyValueFile kv = load_config(config_path);
  data_path = resolve(o_data, data_path, [&] { return kv.get("data"); });
  const IngestSpec spec = IngestSpec::from_config(kv);
  const Dataset ds = ingest_csv(data_path, spec);
  const ValidationReport rep = validate(ds);
  const std::string text = rep.to_text(ds.layout);
  std::cout << text;

  fs::create_directories(out_dir);
  {
    std::ofstream out((fs::path(out_dir) / "report.txt").string(), std::ios::binary);
    if (!out) throw DataError("cannot open report.txt for writing");
    out << text;
  }
  RunManifest man;
  man.command = "validate";
  man.config = Json{{"data", data_path},
                    {"records", rep.num_records},
                    {"subjects", rep.num_subjects},
                    {"synchrony_pct", rep.synchrony_pct},
                    {"out", out_dir}};
  man.wall_seconds = timer.seconds();
  man.write((fs::path(out_dir) / "manifest.json").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariate-dependent cross-covariance estimation for asynchronous "
               "multimodal longitudinal data"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic asynchronous dataset");
  std::string sim_config, sim_out;
  int sim_subjects = 30, sim_visits = 5;
  double sim_sync = 0.5;
  std::uint64_t sim_seed = 1;
  sim->add_option("--config", sim_config, "key=value config file");
  auto* o_sim_subjects = sim->add_option("--subjects", sim_subjects, "number of subjects");
  auto* o_sim_visits = sim->add_option("--visits", sim_visits, "visits per subject");
  auto* o_sim_sync = sim->add_option("--sync", sim_sync, "synchronous-record probability");
  auto* o_sim_seed = sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--out", sim_out, "output directory")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "Sample the posterior on a dataset");
  std::string fit_config, fit_data, fit_out;
  int fit_rank = 3, fit_chains = 4, fit_warmup = 1000, fit_draws = 500, fit_depth = 10;
  double fit_accept = 0.8;
  std::uint64_t fit_seed = 1;
  fit->add_option("--config", fit_config, "ingest + sampler config file");
  auto* o_fit_data = fit->add_option("--data", fit_data, "dataset CSV");
  auto* o_fit_rank = fit->add_option("--rank", fit_rank, "latent dimension");
  auto* o_fit_chains = fit->add_option("--chains", fit_chains, "number of chains");
  auto* o_fit_warmup = fit->add_option("--warmup", fit_warmup, "warmup iterations per chain");
  auto* o_fit_draws = fit->add_option("--draws", fit_draws, "retained draws per chain");
  auto* o_fit_seed = fit->add_option("--seed", fit_seed, "RNG seed");
  auto* o_fit_accept = fit->add_option("--target-accept", fit_accept, "dual-averaging target");
  auto* o_fit_depth = fit->add_option("--max-depth", fit_depth, "maximum tree depth");
  fit->add_option("--out", fit_out, "output directory")->required();

  // summarize
  auto* sum = app.add_subcommand("summarize", "Posterior cross-covariance summaries");
  std::string sum_fit, sum_at, sum_pair = "1,2", sum_shift = "calibrated", sum_out;
  double sum_level = 0.05;
  sum->add_option("--fit", sum_fit, "fit output directory")->required();
  sum->add_option("--at", sum_at, "covariate query, e.g. x1=1,x2=0.5");
  sum->add_option("--pair", sum_pair, "modality pair (names or 1-based indices)");
  sum->add_option("--level", sum_level, "interval tail mass (0.05 = 95% interval)");
  sum->add_option("--shift", sum_shift, "intercept shift mode: calibrated|precision");
  sum->add_option("--out", sum_out, "output directory")->required();

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Simulation grid: proposed vs naive");
  std::string bench_config, bench_ranks, bench_sync, bench_subjects, bench_out;
  int bench_reps = 30, bench_workers = 0, bench_chains = 2, bench_warmup = 500, bench_draws = 500;
  std::uint64_t bench_seed = 1;
  bool bench_quiet = false;
  bench->add_option("--config", bench_config, "grid config file");
  auto* o_bench_reps = bench->add_option("--reps", bench_reps, "replications per cell");
  auto* o_bench_seed = bench->add_option("--seed", bench_seed, "RNG seed");
  auto* o_bench_workers = bench->add_option("--workers", bench_workers, "worker threads (0 = auto)");
  auto* o_bench_ranks = bench->add_option("--ranks", bench_ranks, "comma list of fitted ranks");
  auto* o_bench_sync = bench->add_option("--sync", bench_sync, "comma list of synchrony levels");
  auto* o_bench_subjects =
      bench->add_option("--subjects", bench_subjects, "comma list of subject counts");
  auto* o_bench_chains = bench->add_option("--chains", bench_chains, "chains per fit");
  auto* o_bench_warmup = bench->add_option("--warmup", bench_warmup, "warmup per fit");
  auto* o_bench_draws = bench->add_option("--draws", bench_draws, "retained draws per chain");
  bench->add_flag("--quiet", bench_quiet, "suppress per-cell progress");
  bench->add_option("--out", bench_out, "output directory")->required();

  // validate
  auto* val = app.add_subcommand("validate", "Ingest a dataset and report its structure");
  std::string val_config, val_data, val_out;
  val->add_option("--config", val_config, "ingest config file");
  auto* o_val_data = val->add_option("--data", val_data, "dataset CSV");
  val->add_option("--out", val_out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (sim->parsed())
      return cmd_simulate(sim_config, o_sim_subjects, sim_subjects, o_sim_visits, sim_visits,
                          o_sim_sync, sim_sync, o_sim_seed, sim_seed, sim_out);
    if (fit->parsed())
      return cmd_fit(fit_config, o_fit_data, fit_data, o_fit_rank, fit_rank, o_fit_chains,
                     fit_chains, o_fit_warmup, fit_warmup, o_fit_draws, fit_draws, o_fit_seed,
                     fit_seed, o_fit_accept, fit_accept, o_fit_depth, fit_depth, fit_out);
    if (sum->parsed())
      return cmd_summarize(sum_fit, sum_at, sum_pair, sum_level, sum_shift, sum_out);
    if (bench->parsed())
      return cmd_benchmark(bench_config, o_bench_reps, bench_reps, o_bench_seed, bench_seed,
                           o_bench_workers, bench_workers, o_bench_ranks, bench_ranks,
                           o_bench_sync, bench_sync, o_bench_subjects, bench_subjects,
                           o_bench_chains, bench_chains, o_bench_warmup, bench_warmup,
                           o_bench_draws, bench_draws, bench_quiet, bench_out);
    if (val->parsed()) return cmd_validate(val_config, o_val_data, val_data, val_out);
    std::cerr << "no subcommand selected\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
