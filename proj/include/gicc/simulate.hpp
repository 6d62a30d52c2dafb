#ifndef GICC_SIMULATE_HPP
#define GICC_SIMULATE_HPP

#include <armadillo>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gicc/mcem.hpp"
#include "gicc/model.hpp"

namespace gicc {

// One simulation-study setting: I subjects, J visits, N-node graphs, mu
// broadcast to every edge, AR(1)-style covariance r * rho^|i-j|.
struct SimSettings {
  int n_subjects = 100;
  int n_visits = 2;
  int n_nodes = 5;
  double mu_value = 0.5;
  double r = 2.0;
  double rho = 0.8;
  int replicates = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

// Aggregate over the converged replicates of one setting.
struct StudySummary {
  SimSettings settings;
  int replicates_used = 0;  // converged replicates entering the aggregates
  int n_excluded = 0;       // non-converged, reported but excluded
  arma::vec diag_mean;      // mean of each diagonal sigma_x entry
  arma::vec diag_sd;
  double gicc_mean = 0.0;
  double gicc_sd = 0.0;
};

// Sigma_x[i,j] = r * rho^|i-j|; positive definite for r > 0, |rho| < 1
arma::mat ar1_covariance(double r, double rho, int d);

// Threshold-model draw: x_i ~ N(0, Sigma_x) by Cholesky coloring,
// u_ij ~ N(0, I), y = mu + x + u, o = 1(y > 0). One substream per subject,
// so the dataset is bit-reproducible for a given seed. Latents are returned
// for test assertions.
std::pair<BinaryGraphDataset, LatentState> generate_dataset(const SimSettings& settings);

// Runs settings.replicates generate+fit rounds per setting (concurrently,
// one derived substream per replicate), aggregating diag(Sigma_x^) and GICC
// over the converged replicates in replicate order with compensated sums.
std::vector<StudySummary> run_study(const std::vector<SimSettings>& settings,
                                    const FitConfig& fit_config);

// Study-table emission: one CSV row / JSON object per setting; sd fields
// empty (CSV) or null (JSON) when fewer than 2 replicates converged.
std::string study_to_csv(const std::vector<StudySummary>& summaries);
std::string study_to_json(const std::vector<StudySummary>& summaries);

}  // namespace gicc

#endif
