// gicc: fit / simulate / sweep / oracle front end for the GICC estimator.
//
// Exit codes: 0 success (fit: converged), 1 bad input or bad flags,
// 2 the fit ran but did not converge. Outputs are deterministic for a given
// seed, independent of --threads.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "gicc/ingest.hpp"
#include "gicc/mcem.hpp"
#include "gicc/model.hpp"
#include "gicc/oracle.hpp"
#include "gicc/simulate.hpp"

namespace {

using nlohmann::ordered_json;

void apply_thread_cap(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

gicc::RawFormat pick_format(const std::string& format, const std::string& path) {
  if (format == "csv") return gicc::RawFormat::long_csv;
  if (format == "json") return gicc::RawFormat::matrix_json;
  // auto: by extension, CSV otherwise
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0)
    return gicc::RawFormat::matrix_json;
  return gicc::RawFormat::long_csv;
}

void write_text(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::fputs(content.c_str(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

ordered_json vec_to_json(const arma::vec& v) {
  ordered_json arr = ordered_json::array();
  for (arma::uword i = 0; i < v.n_elem; ++i) arr.push_back(v(i));
  return arr;
}

ordered_json mat_to_json(const arma::mat& m) {
  ordered_json rows = ordered_json::array();
  for (arma::uword i = 0; i < m.n_rows; ++i) {
    ordered_json row = ordered_json::array();
    for (arma::uword j = 0; j < m.n_cols; ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

ordered_json fit_to_json(const gicc::FitResult& res, bool full_info) {
  // mu standard errors from the inverse Louis information diagonal; left
  // null when the information is singular or indefinite
  arma::mat cov;
  const bool have_cov = res.mu_info_psd && arma::inv_sympd(cov, res.mu_info);

  ordered_json j;
  j["schema"] = 1;
  j["converged"] = res.converged;
  j["iterations"] = res.n_iterations;
  j["gicc"] = res.gicc;
  j["mu"] = vec_to_json(res.params.mu);
  if (have_cov) {
    ordered_json se = ordered_json::array();
    for (arma::uword k = 0; k < cov.n_rows; ++k)
      se.push_back(cov(k, k) >= 0.0 ? ordered_json(std::sqrt(cov(k, k))) : ordered_json(nullptr));
    j["mu_se"] = se;
  } else {
    j["mu_se"] = ordered_json::array();
    for (arma::uword k = 0; k < res.params.mu.n_elem; ++k) j["mu_se"].push_back(nullptr);
  }
  j["mu_info_psd"] = res.mu_info_psd;
  j["sigma_x"] = mat_to_json(res.params.sigma_x);
  ordered_json clamped = ordered_json::array();
  for (arma::uword d = 0; d < res.clamped_edges.n_elem; ++d)
    if (res.clamped_edges(d)) clamped.push_back(d + 1);  // 1-based edge slots
  j["clamped_edges"] = clamped;
  if (full_info) {
    j["mu_info"] = mat_to_json(res.mu_info);
    j["mu_cov"] = have_cov ? mat_to_json(cov) : ordered_json(nullptr);
  }
  return j;
}

struct FitFlags {
  std::uint64_t seed = 0;
  int burn = 200;
  int samples = 500;
  int max_iter = 100;
  double tol = 1e-3;
  double ridge = 1e-8;
  int threads = 0;

  gicc::FitConfig to_config() const {
    gicc::FitConfig cfg;
    cfg.gibbs.burn_in = burn;
    cfg.gibbs.n_samples = samples;
    cfg.max_iter = max_iter;
    cfg.tol = tol;
    cfg.ridge = ridge;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--seed", f.seed, "Master RNG seed")->capture_default_str();
  cmd->add_option("--burn", f.burn, "Gibbs burn-in sweeps per chain (T)")->capture_default_str();
  cmd->add_option("--samples", f.samples, "Retained Gibbs sweeps per chain (B)")
      ->capture_default_str();
  cmd->add_option("--max-iter", f.max_iter, "Maximum EM iterations")->capture_default_str();
  cmd->add_option("--tol", f.tol, "EM parameter-change tolerance")->capture_default_str();
  cmd->add_option("--ridge", f.ridge, "Ridge added to Sigma_x each M-step")
      ->capture_default_str();
  cmd->add_option("--threads", f.threads, "Worker thread cap (0 = all cores)")
      ->envname("GICC_THREADS")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
}

int run_fit(const std::string& input, const std::string& output, const FitFlags& flags,
            bool has_threshold, double threshold, const std::string& format, bool full_info,
            bool verbose) {
  const gicc::FitConfig cfg = flags.to_config();
  apply_thread_cap(flags.threads);

  gicc::BinaryGraphDataset data =
      has_threshold
          ? gicc::dichotomize(gicc::load_raw(input, pick_format(format, input)), threshold)
          : gicc::load_binary_csv(input);

  const gicc::FitResult res = gicc::fit(data, cfg);
  if (verbose) {
    for (std::size_t t = 0; t < res.trajectory.size(); ++t) {
      const auto& rec = res.trajectory[t];
      std::fprintf(stderr, "iter %3zu  dmu %.3e  dsigma %.3e  gicc %.6f\n", t + 1,
                   rec.mu_delta, rec.sigma_delta, rec.gicc);
    }
    std::fprintf(stderr, "%s after %d iterations, gicc %.6f\n",
                 res.converged ? "converged" : "no convergence", res.n_iterations, res.gicc);
  }
  write_text(output, fit_to_json(res, full_info).dump(2) + "\n");
  return res.converged ? 0 : 2;
}

int run_simulate(const std::string& output, gicc::SimSettings settings, const FitFlags& flags,
                 bool verbose) {
  settings.seed = flags.seed;
  settings.validate();
  const gicc::FitConfig cfg = flags.to_config();
  apply_thread_cap(flags.threads);

  const std::vector<gicc::StudySummary> summaries = gicc::run_study({settings}, cfg);
  write_text(output + ".csv", gicc::study_to_csv(summaries));
  write_text(output + ".json", gicc::study_to_json(summaries));
  if (verbose)
    for (const auto& s : summaries)
      std::fprintf(stderr, "I=%d J=%d r=%g: %d/%d converged, mean gicc %.4f\n",
                   s.settings.n_subjects, s.settings.n_visits, s.settings.r, s.replicates_used,
                   s.settings.replicates, s.gicc_mean);
  return 0;
}

int run_sweep(const std::string& input, const std::string& output, const FitFlags& flags,
              const std::string& format, double t_min, double t_max, double t_step,
              bool verbose) {
  const gicc::FitConfig cfg = flags.to_config();
  apply_thread_cap(flags.threads);

  const gicc::RawGraphDataset raw = gicc::load_raw(input, pick_format(format, input));
  const gicc::SweepResult res = gicc::threshold_sweep(raw, t_min, t_max, t_step, cfg);
  write_text(output + ".csv", gicc::sweep_to_csv(res));
  write_text(output + ".json", gicc::sweep_to_json(res));
  if (verbose) {
    if (res.has_best)
      std::fprintf(stderr, "best threshold %.4f, gicc %.4f (%llu thresholds)\n",
                   res.best_threshold, res.best_gicc,
                   static_cast<unsigned long long>(res.thresholds.n_elem));
    else
      std::fprintf(stderr, "no threshold converged\n");
  }
  return res.has_best ? 0 : 2;
}

int run_oracle(const std::string& input, const std::string& output, bool verbose) {
  const gicc::BinaryGraphDataset data = gicc::load_binary_csv(input);
  if (data.shape.n_edges != 1)
    throw std::invalid_argument("oracle needs a single-edge (two-node) dataset, got D = " +
                                std::to_string(data.shape.n_edges));
  std::vector<arma::uvec> rows;
  rows.reserve(data.obs.size());
  for (const auto& o : data.obs) rows.push_back(o.col(0));

  const gicc::Mle1d m = gicc::mle_1d(rows);
  if (verbose)
    std::fprintf(stderr, "quadrature MLE: mu %.6f sigma2 %.6f icc %.6f%s\n", m.mu, m.sigma2,
                 m.icc, m.boundary ? " (boundary)" : "");
  ordered_json j;
  j["schema"] = 1;
  j["mu"] = m.mu;
  j["sigma2"] = m.sigma2;
  j["icc"] = m.icc;
  j["loglik"] = m.loglik;
  j["boundary"] = m.boundary;
  write_text(output, j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GICC: reliability of repeated binary graphs via MCEM"};
  app.require_subcommand(1);
  app.fallthrough();  // lets -v sit after the subcommand as well
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Progress and diagnostics on stderr");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Estimate mu, Sigma_x and GICC from one dataset");
  std::string fit_input, fit_output, fit_format = "auto";
  double fit_threshold = 0.0;
  bool fit_full_info = false;
  FitFlags fit_flags;
  fit_cmd->add_option("--input", fit_input, "Binary long CSV, or raw data with --threshold")
      ->required();
  fit_cmd->add_option("--output", fit_output, "Output JSON path (default: stdout)");
  auto* thr_opt = fit_cmd->add_option("--threshold", fit_threshold,
                                      "Dichotomize raw input at this value (strict >)");
  fit_cmd->add_option("--format", fit_format, "Raw input format")
      ->check(CLI::IsMember({"auto", "csv", "json"}))
      ->capture_default_str();
  fit_cmd->add_flag("--full-info", fit_full_info,
                    "Include the full Louis information and mu covariance");
  add_fit_flags(fit_cmd, fit_flags);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Replicated generate+fit simulation study");
  std::string sim_output = "study";
  gicc::SimSettings sim_settings;
  FitFlags sim_flags;
  sim_cmd->add_option("--output", sim_output, "Output path prefix (.csv and .json)")
      ->capture_default_str();
  sim_cmd->add_option("--subjects", sim_settings.n_subjects, "Subjects per replicate (I)")
      ->capture_default_str();
  sim_cmd->add_option("--visits", sim_settings.n_visits, "Visits per subject (J)")
      ->capture_default_str();
  sim_cmd->add_option("--nodes", sim_settings.n_nodes, "Graph nodes (N; D = N(N-1)/2)")
      ->capture_default_str();
  sim_cmd->add_option("--mu", sim_settings.mu_value, "Probit mean, broadcast across edges")
      ->capture_default_str();
  sim_cmd->add_option("--r", sim_settings.r, "Random-effect variance scale")
      ->capture_default_str();
  sim_cmd->add_option("--rho", sim_settings.rho, "AR(1) correlation across edges")
      ->capture_default_str();
  sim_cmd->add_option("--replicates", sim_settings.replicates, "Replicates per setting")
      ->capture_default_str();
  add_fit_flags(sim_cmd, sim_flags);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "GICC across a dichotomization threshold grid");
  std::string sweep_input, sweep_output = "sweep", sweep_format = "auto";
  double t_min = 0.1, t_max = 0.8, t_step = 0.01;
  FitFlags sweep_flags;
  sweep_cmd->add_option("--input", sweep_input, "Raw (weighted) graph data")->required();
  sweep_cmd->add_option("--output", sweep_output, "Output path prefix (.csv and .json)")
      ->capture_default_str();
  sweep_cmd->add_option("--format", sweep_format, "Raw input format")
      ->check(CLI::IsMember({"auto", "csv", "json"}))
      ->capture_default_str();
  sweep_cmd->add_option("--t-min", t_min, "Lowest threshold")->capture_default_str();
  sweep_cmd->add_option("--t-max", t_max, "Highest threshold")->capture_default_str();
  sweep_cmd->add_option("--t-step", t_step, "Threshold grid step")->capture_default_str();
  add_fit_flags(sweep_cmd, sweep_flags);

  // oracle
  auto* oracle_cmd =
      app.add_subcommand("oracle", "Quadrature MLE for a single-edge (D = 1) dataset");
  std::string oracle_input, oracle_output;
  oracle_cmd->add_option("--input", oracle_input, "Binary long CSV with two nodes")->required();
  oracle_cmd->add_option("--output", oracle_output, "Output JSON path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit 0, every parse error is 1
  }

  try {
    if (*fit_cmd)
      return run_fit(fit_input, fit_output, fit_flags, thr_opt->count() > 0, fit_threshold,
                     fit_format, fit_full_info, verbose);
    if (*sim_cmd) return run_simulate(sim_output, sim_settings, sim_flags, verbose);
    if (*sweep_cmd)
      return run_sweep(sweep_input, sweep_output, sweep_flags, sweep_format, t_min, t_max,
                       t_step, verbose);
    if (*oracle_cmd) return run_oracle(oracle_input, oracle_output, verbose);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
