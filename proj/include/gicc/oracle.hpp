#ifndef GICC_ORACLE_HPP
#define GICC_ORACLE_HPP

#include <armadillo>
#include <vector>

#include "gicc/model.hpp"

namespace gicc {

// Brute-force likelihood machinery for D=1 (plus D=2 spot checks) used to
// validate the Monte Carlo path. Everything here is deterministic
// quadrature; no sampling.
struct QuadratureSpec {
  int n_nodes_gh = 64;          // Gauss-Hermite order
  double grid_halfwidth = 8.0;  // in marginal standard deviations
  int grid_points = 2001;       // trapezoid fallback resolution

  void validate() const;
};

// sum_i log integral prod_j Phi(mu+x)^o (1-Phi(mu+x))^(1-o) dN(0,sigma2)(x),
// Gauss-Hermite in log space; data is one 0/1 visit vector per subject
double observed_loglik_1d(double mu, double sigma2, const std::vector<arma::uvec>& data,
                          const QuadratureSpec& spec = {});

// same integral on a plain trapezoid grid; cross-check for the GH path
double observed_loglik_1d_grid(double mu, double sigma2, const std::vector<arma::uvec>& data,
                               const QuadratureSpec& spec = {});

struct Mle1d {
  double mu = 0.0;
  double sigma2 = 1.0;
  double icc = 0.0;  // sigma2 / (sigma2 + 1)
  bool boundary = false;
  double loglik = 0.0;
};

// derivative-free maximizer of observed_loglik_1d: coordinate sweeps of
// golden-section over mu in [-5,5] and log sigma2 in [-10,5]; hitting either
// box edge raises the boundary flag
Mle1d mle_1d(const std::vector<arma::uvec>& data, const QuadratureSpec& spec = {});

struct BruteMoments {
  arma::mat e_y;           // J x D, E[y_ij | o]
  arma::vec e_ysum;        // E[y_i. | o]
  arma::mat e_ysum_outer;  // E[y_i. y_i.' | o]
  arma::vec e_x;           // E[x | o]
  arma::mat e_xx;          // E[x x' | o]
};

// Dense-grid posterior moments for one subject pattern with J*D <= 4 and
// D <= 2: y moments integrate the truncated MVN of y|o (x marginalized into
// the covariance) over a product Gauss-Legendre grid; x moments integrate
// N(0,Sigma) times the probit likelihood over its own grid, so the two
// routes are independent. Two resolutions are compared and disagreement
// beyond 1e-4 refuses with a diagnostic.
BruteMoments brute_moments_2d(const arma::umat& o, const ModelParams& params,
                              const QuadratureSpec& spec = {});

}  // namespace gicc

#endif
