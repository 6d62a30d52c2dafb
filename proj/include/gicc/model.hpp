#ifndef GICC_MODEL_HPP
#define GICC_MODEL_HPP

#include <armadillo>
#include <utility>
#include <vector>

#include "gicc/normal.hpp"

namespace gicc {

// eigenvalue tolerance for positive-semidefiniteness checks
inline constexpr double eps_psd = 1e-10;

// Node count N and the D = N(N-1)/2 edge slots of the simple undirected
// graph on N nodes. Edge slot d (1-based) walks the upper triangle row by
// row: (1,2),(1,3),...,(1,N),(2,3),...,(N-1,N).
struct GraphShape {
  int n_nodes;
  int n_edges;

  explicit GraphShape(int n);
};

int edge_index(int a, int b, const GraphShape& shape);
std::pair<int, int> edge_pair(int d, const GraphShape& shape);

// adjacency must be symmetric, zero-diagonal, entries in {0,1}
arma::uvec vectorize_graph(const arma::mat& adjacency, const GraphShape& shape);
arma::mat devectorize_graph(const arma::uvec& edges, const GraphShape& shape);

// Probit-scale edge means mu (length D) and random-effect covariance
// sigma_x (D x D). The residual covariance is the identity and is not a
// parameter. sigma_x is symmetrized exactly on construction and must be
// PSD within eps_psd.
struct ModelParams {
  arma::vec mu;
  arma::mat sigma_x;

  ModelParams(arma::vec mu_in, arma::mat sigma_in);
  int dim() const { return static_cast<int>(mu.n_elem); }
};

// Binary observations o_{ij}(d), one J_i x D matrix of {0,1} per subject.
// Visit counts may differ across subjects.
struct BinaryGraphDataset {
  GraphShape shape;
  std::vector<arma::umat> obs;

  BinaryGraphDataset(GraphShape shape_in, std::vector<arma::umat> obs_in);
  int n_subjects() const { return static_cast<int>(obs.size()); }
  int visits(int i) const { return static_cast<int>(obs[i].n_rows); }
  int total_visits() const;
};

// Latent Gaussians of the threshold model: per-subject random effects x
// (I x D) and per-visit y (J_i x D each), with o = 1 iff y > 0.
struct LatentState {
  arma::mat x;
  std::vector<arma::mat> y;
};

// tr(Sigma_x) / (tr(Sigma_x) + D)
double gicc(const arma::mat& sigma_x);

// Phi(mu_d + x_d)
double probit_prob(double mu_d, double x_d);

// log joint density of {x_i} and {y_ij} under the threshold model,
// normalizing constants included
double complete_loglik(const ModelParams& params, const LatentState& state);

} // namespace gicc

#endif
