#ifndef GICC_SAMPLER_HPP
#define GICC_SAMPLER_HPP

#include <armadillo>
#include <cstdint>
#include <utility>

#include "gicc/model.hpp"
#include "gicc/rng.hpp"

namespace gicc {

enum class TruncSide { positive, nonpositive };

struct GibbsConfig {
  int burn_in = 200;
  int n_samples = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

// Monte Carlo conditional expectations for one subject's chain: per-visit
// means E[y_ij|o], the visit sum E[y_i.|o] and its second moment
// E[y_i. y_i.^T|o], all averaged over the same retained draws.
struct SubjectMoments {
  arma::mat e_y;
  arma::vec e_ysum;
  arma::mat e_ysum_outer;
};

// One draw from N(mean, sd^2) restricted to (0,inf) or (-inf,0].
// Complementary inverse-CDF up to a standardized bound of 4, Robert-style
// exponential rejection beyond.
double sample_truncated_normal(double mean, double sd, TruncSide side, RngStream& rng);

// Mean (J_i I + Sigma_x^-1)^-1 (y_sum - J_i mu) and covariance
// (J_i I + Sigma_x^-1)^-1 of x | y, via the SPD solve
// Sigma_x (J_i Sigma_x + I)^-1 rather than nested inverses.
std::pair<arma::vec, arma::mat> posterior_x_moments(const arma::vec& y_sum, int n_visits,
                                                    const ModelParams& params);

// Data-augmented Gibbs chain for one subject: y | x,o are independent
// univariate truncated normals (mean mu+x, unit sd, side fixed by o), and
// x | y is an exact multivariate normal draw. Discards burn_in sweeps,
// averages the next n_samples. When y_trace is non-null it receives every
// retained y draw (n_visits x D x n_samples), without changing the stream.
SubjectMoments subject_conditional_moments(const arma::umat& o_i, const ModelParams& params,
                                           const GibbsConfig& config, RngStream& rng,
                                           arma::cube* y_trace = nullptr);

} // namespace gicc

#endif
