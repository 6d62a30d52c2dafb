#include "gicc/sampler.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gicc {

void GibbsConfig::validate() const {
  if (burn_in < 0) throw std::invalid_argument("GibbsConfig: burn_in must be >= 0");
  if (n_samples < 1) throw std::invalid_argument("GibbsConfig: n_samples must be >= 1");
}

namespace {

// standard normal restricted to (alpha, inf)
double sample_lower_truncated_std(double alpha, RngStream& rng) {
  if (alpha <= 4.0) {
    // u * sf(alpha) lands in the upper tail; quantile of the complement
    // keeps full accuracy however close sf(alpha) is to 0 or 1
    return -norm_quantile(rng.uniform() * norm_sf(alpha));
  }
  const double lambda = 0.5 * (alpha + std::sqrt(alpha * alpha + 4.0));
  for (;;) {
    const double z = alpha + rng.exponential() / lambda;
    const double d = z - lambda;
    if (std::log(rng.uniform()) <= -0.5 * d * d) return z;
  }
}

arma::mat posterior_x_cov(int n_visits, const ModelParams& params) {
  const int d = params.dim();
  arma::mat chol_sigma;
  if (!arma::chol(chol_sigma, params.sigma_x)) {
    std::ostringstream msg;
    msg << "posterior_x_moments: sigma_x not positive definite (rcond="
        << arma::rcond(params.sigma_x) << ")";
    throw std::runtime_error(msg.str());
  }
  const arma::mat b = static_cast<double>(n_visits) * params.sigma_x +
                      arma::eye(d, d);
  arma::mat a;
  if (!arma::solve(a, b, params.sigma_x, arma::solve_opts::likely_sympd)) {
    std::ostringstream msg;
    msg << "posterior_x_moments: solve failed (rcond=" << arma::rcond(b) << ")";
    throw std::runtime_error(msg.str());
  }
  return 0.5 * (a + a.t());
}

} // namespace

double sample_truncated_normal(double mean, double sd, TruncSide side, RngStream& rng) {
  if (!(sd > 0.0) || !std::isfinite(sd) || !std::isfinite(mean))
    throw std::domain_error("sample_truncated_normal: need finite mean and sd > 0");
  if (side == TruncSide::positive)
    return mean + sd * sample_lower_truncated_std(-mean / sd, rng);
  return -(-mean + sd * sample_lower_truncated_std(mean / sd, rng));
}

std::pair<arma::vec, arma::mat> posterior_x_moments(const arma::vec& y_sum, int n_visits,
                                                    const ModelParams& params) {
  if (y_sum.n_elem != static_cast<arma::uword>(params.dim()))
    throw std::invalid_argument("posterior_x_moments: y_sum dimension mismatch");
  if (n_visits < 1) throw std::invalid_argument("posterior_x_moments: n_visits must be >= 1");
  arma::mat cov = posterior_x_cov(n_visits, params);
  arma::vec mean = cov * (y_sum - static_cast<double>(n_visits) * params.mu);
  return {std::move(mean), std::move(cov)};
}

SubjectMoments subject_conditional_moments(const arma::umat& o_i, const ModelParams& params,
                                           const GibbsConfig& config, RngStream& rng,
                                           arma::cube* y_trace) {
  config.validate();
  const int n_visits = static_cast<int>(o_i.n_rows);
  const int d = params.dim();
  if (o_i.n_cols != static_cast<arma::uword>(d))
    throw std::invalid_argument("subject_conditional_moments: observation width != D");
  if (n_visits < 1)
    throw std::invalid_argument("subject_conditional_moments: subject has no visits");

  const arma::mat cov = posterior_x_cov(n_visits, params);
  arma::mat chol_cov;
  if (!arma::chol(chol_cov, cov, "lower"))
    throw std::runtime_error("subject_conditional_moments: posterior covariance not PD");
  const arma::vec j_mu = static_cast<double>(n_visits) * params.mu;

  arma::vec x(d, arma::fill::zeros);
  arma::mat y(n_visits, d);
  for (int j = 0; j < n_visits; ++j)
    for (int k = 0; k < d; ++k) {
      const double mag = std::max(std::fabs(params.mu(k)), 0.5);
      y(j, k) = o_i(j, k) ? mag : -mag;
    }

  SubjectMoments m;
  m.e_y.zeros(n_visits, d);
  m.e_ysum.zeros(d);
  m.e_ysum_outer.zeros(d, d);
  if (y_trace) y_trace->set_size(n_visits, d, config.n_samples);

  arma::vec y_sum(d);
  arma::vec z(d);
  const int total = config.burn_in + config.n_samples;
  for (int sweep = 0; sweep < total; ++sweep) {
    for (int j = 0; j < n_visits; ++j)
      for (int k = 0; k < d; ++k) {
        const double mean = params.mu(k) + x(k);
        const TruncSide side = o_i(j, k) ? TruncSide::positive : TruncSide::nonpositive;
        y(j, k) = sample_truncated_normal(mean, 1.0, side, rng);
      }
    y_sum = arma::sum(y, 0).t();
    for (int k = 0; k < d; ++k) z(k) = rng.normal();
    x = cov * (y_sum - j_mu) + chol_cov * z;

    if (sweep >= config.burn_in) {
      m.e_y += y;
      m.e_ysum += y_sum;
      m.e_ysum_outer += y_sum * y_sum.t();
      if (y_trace) y_trace->slice(sweep - config.burn_in) = y;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(config.n_samples);
  m.e_y *= inv_b;
  m.e_ysum *= inv_b;
  m.e_ysum_outer *= inv_b;
  return m;
}

} // namespace gicc
