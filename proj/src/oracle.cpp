#include "gicc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "gicc/normal.hpp"

namespace gicc {

void QuadratureSpec::validate() const {
  if (n_nodes_gh < 16) throw std::invalid_argument("QuadratureSpec: n_nodes_gh must be >= 16");
  if (!(grid_halfwidth > 0.0)) throw std::invalid_argument("QuadratureSpec: grid_halfwidth must be > 0");
  if (grid_points < 3) throw std::invalid_argument("QuadratureSpec: grid_points must be >= 3");
}

namespace {

// Golub-Welsch: nodes are eigenvalues of the symmetric tridiagonal recurrence
// matrix, weights are mu0 times the squared first eigenvector components.
void golub_welsch(const arma::vec& offdiag, double mu0, arma::vec& nodes, arma::vec& weights) {
  const int n = static_cast<int>(offdiag.n_elem) + 1;
  arma::mat jac(n, n, arma::fill::zeros);
  for (int k = 0; k < n - 1; ++k) {
    jac(k, k + 1) = offdiag(k);
    jac(k + 1, k) = offdiag(k);
  }
  arma::vec eigval;
  arma::mat eigvec;
  if (!arma::eig_sym(eigval, eigvec, jac))
    throw std::runtime_error("golub_welsch: eigendecomposition failed");
  nodes = eigval;
  weights = mu0 * arma::square(eigvec.row(0).t());
}

// physicists' Hermite: integral f(t) exp(-t^2) dt = sum w_k f(t_k)
void gauss_hermite(int n, arma::vec& nodes, arma::vec& weights) {
  arma::vec off(n - 1);
  for (int k = 1; k < n; ++k) off(k - 1) = std::sqrt(0.5 * k);
  golub_welsch(off, std::sqrt(arma::datum::pi), nodes, weights);
}

// Legendre on [-1,1]: integral f = sum w_k f(t_k)
void gauss_legendre(int n, arma::vec& nodes, arma::vec& weights) {
  arma::vec off(n - 1);
  for (int k = 1; k < n; ++k) off(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
  golub_welsch(off, 2.0, nodes, weights);
}

double logsumexp(const arma::vec& v) {
  const double m = v.max();
  if (!std::isfinite(m)) return m;
  return m + std::log(arma::accu(arma::exp(v - m)));
}

// collapse subjects into (ones, visits) pattern counts; D=1 likelihood only
// depends on those
std::map<std::pair<int, int>, int> pattern_counts(const std::vector<arma::uvec>& data) {
  std::map<std::pair<int, int>, int> counts;
  for (const arma::uvec& o : data) {
    if (o.n_elem == 0) throw std::invalid_argument("observed_loglik_1d: subject with no visits");
    for (arma::uword j = 0; j < o.n_elem; ++j)
      if (o(j) > 1) throw std::invalid_argument("observed_loglik_1d: outcomes must be 0/1");
    ++counts[{static_cast<int>(arma::accu(o)), static_cast<int>(o.n_elem)}];
  }
  return counts;
}

// log-space quadrature of the random-intercept probit likelihood given
// abscissae x_k and log-weights representing N(0, sigma2)
double loglik_from_nodes(double mu, const arma::vec& x, const arma::vec& logw,
                         const std::vector<arma::uvec>& data) {
  const auto counts = pattern_counts(data);
  const int n = static_cast<int>(x.n_elem);
  arma::vec logp(n), logq(n);
  for (int k = 0; k < n; ++k) {
    logp(k) = norm_logcdf(mu + x(k));
    logq(k) = norm_logcdf(-(mu + x(k)));
  }
  double total = 0.0;
  for (const auto& [pattern, mult] : counts) {
    const auto [n1, nj] = pattern;
    total += mult * logsumexp(logw + n1 * logp + (nj - n1) * logq);
  }
  return total;
}

double golden_max(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d; d = c; fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// recursive product-grid accumulation helpers for brute_moments_2d

struct YGridResult {
  double z = 0.0;
  arma::vec ey;         // stacked visit-major
  arma::mat eysum_outer;
};

// walks the product grid over stacked y, accumulating the unnormalized
// density exp(-(y-m)' Winv (y-m)/2) and moments of y and of the visit sum
void y_grid_recurse(int axis, int dims, arma::vec& y, double wprod,
                    const std::vector<arma::vec>& nodes, const std::vector<arma::vec>& weights,
                    const arma::vec& mean, const arma::mat& winv, int n_visits, int d,
                    YGridResult& acc) {
  if (axis == dims) {
    const arma::vec c = y - mean;
    const double dens = wprod * std::exp(-0.5 * arma::dot(c, winv * c));
    acc.z += dens;
    acc.ey += dens * y;
    arma::vec ysum(d, arma::fill::zeros);
    for (int j = 0; j < n_visits; ++j)
      for (int k = 0; k < d; ++k) ysum(k) += y(j * d + k);
    acc.eysum_outer += dens * ysum * ysum.t();
    return;
  }
  for (arma::uword g = 0; g < nodes[axis].n_elem; ++g) {
    y(axis) = nodes[axis](g);
    y_grid_recurse(axis + 1, dims, y, wprod * weights[axis](g), nodes, weights, mean, winv,
                   n_visits, d, acc);
  }
}

struct XGridResult {
  double z = 0.0;
  arma::vec ex;
  arma::mat exx;
};

void x_grid_recurse(int axis, int d, arma::vec& x, double wprod,
                    const std::vector<arma::vec>& nodes, const std::vector<arma::vec>& weights,
                    const arma::mat& sig_inv, const arma::umat& o, const arma::vec& mu,
                    XGridResult& acc) {
  if (axis == d) {
    double logdens = -0.5 * arma::dot(x, sig_inv * x);
    for (arma::uword j = 0; j < o.n_rows; ++j)
      for (int k = 0; k < d; ++k) {
        const double m = mu(k) + x(k);
        logdens += norm_logcdf(o(j, k) ? m : -m);
      }
    const double dens = wprod * std::exp(logdens);
    acc.z += dens;
    acc.ex += dens * x;
    acc.exx += dens * x * x.t();
    return;
  }
  for (arma::uword g = 0; g < nodes[axis].n_elem; ++g) {
    x(axis) = nodes[axis](g);
    x_grid_recurse(axis + 1, d, x, wprod * weights[axis](g), nodes, weights, sig_inv, o, mu, acc);
  }
}

BruteMoments brute_pass(const arma::umat& o, const ModelParams& params, double halfwidth,
                        int n_y_axis, int n_x_axis) {
  const int n_visits = static_cast<int>(o.n_rows);
  const int d = params.dim();
  const int dims = n_visits * d;

  // y | o marginal: stack visit-major; covariance I + 1 1' (x) Sigma
  arma::vec mean(dims);
  arma::mat w(dims, dims, arma::fill::eye);
  for (int j = 0; j < n_visits; ++j)
    for (int k = 0; k < d; ++k) {
      mean(j * d + k) = params.mu(k);
      for (int j2 = 0; j2 < n_visits; ++j2)
        for (int k2 = 0; k2 < d; ++k2) w(j * d + k, j2 * d + k2) += params.sigma_x(k, k2);
    }
  const arma::mat winv = arma::inv_sympd(w);

  arma::vec gl_nodes, gl_weights;
  gauss_legendre(n_y_axis, gl_nodes, gl_weights);
  std::vector<arma::vec> ynodes(dims), yweights(dims);
  for (int j = 0; j < n_visits; ++j)
    for (int k = 0; k < d; ++k) {
      const int axis = j * d + k;
      const double sd = std::sqrt(w(axis, axis));
      double lo, hi;
      if (o(j, k)) {
        lo = 0.0;
        hi = std::max(params.mu(k) + halfwidth * sd, 0.5);
      } else {
        lo = std::min(params.mu(k) - halfwidth * sd, -0.5);
        hi = 0.0;
      }
      ynodes[axis] = 0.5 * (hi - lo) * gl_nodes + 0.5 * (hi + lo);
      yweights[axis] = 0.5 * (hi - lo) * gl_weights;
    }

  YGridResult yacc;
  yacc.ey.zeros(dims);
  yacc.eysum_outer.zeros(d, d);
  arma::vec ybuf(dims);
  y_grid_recurse(0, dims, ybuf, 1.0, ynodes, yweights, mean, winv, n_visits, d, yacc);
  if (!(yacc.z > 0.0))
    throw std::runtime_error("brute_moments_2d: y-grid mass underflow; pattern too improbable");

  // x | o posterior on its own grid: N(0, Sigma) times the probit likelihood
  const arma::mat sig_inv = arma::inv_sympd(params.sigma_x);
  arma::vec xn, xw;
  gauss_legendre(n_x_axis, xn, xw);
  std::vector<arma::vec> xnodes(d), xweights(d);
  for (int k = 0; k < d; ++k) {
    const double sd = std::sqrt(params.sigma_x(k, k));
    xnodes[k] = halfwidth * sd * xn;
    xweights[k] = halfwidth * sd * xw;
  }
  XGridResult xacc;
  xacc.ex.zeros(d);
  xacc.exx.zeros(d, d);
  arma::vec xbuf(d);
  x_grid_recurse(0, d, xbuf, 1.0, xnodes, xweights, sig_inv, o, params.mu, xacc);
  if (!(xacc.z > 0.0))
    throw std::runtime_error("brute_moments_2d: x-grid mass underflow; pattern too improbable");

  BruteMoments out;
  out.e_y.set_size(n_visits, d);
  for (int j = 0; j < n_visits; ++j)
    for (int k = 0; k < d; ++k) out.e_y(j, k) = yacc.ey(j * d + k) / yacc.z;
  out.e_ysum = arma::sum(out.e_y, 0).t();
  out.e_ysum_outer = yacc.eysum_outer / yacc.z;
  out.e_x = xacc.ex / xacc.z;
  out.e_xx = xacc.exx / xacc.z;
  return out;
}

double rel_gap(double a, double b) { return std::fabs(a - b) / std::max(1.0, std::fabs(b)); }

double moments_gap(const BruteMoments& a, const BruteMoments& b) {
  double gap = 0.0;
  for (arma::uword i = 0; i < a.e_y.n_elem; ++i) gap = std::max(gap, rel_gap(a.e_y(i), b.e_y(i)));
  for (arma::uword i = 0; i < a.e_ysum_outer.n_elem; ++i)
    gap = std::max(gap, rel_gap(a.e_ysum_outer(i), b.e_ysum_outer(i)));
  for (arma::uword i = 0; i < a.e_x.n_elem; ++i) gap = std::max(gap, rel_gap(a.e_x(i), b.e_x(i)));
  for (arma::uword i = 0; i < a.e_xx.n_elem; ++i) gap = std::max(gap, rel_gap(a.e_xx(i), b.e_xx(i)));
  return gap;
}

}  // namespace

double observed_loglik_1d(double mu, double sigma2, const std::vector<arma::uvec>& data,
                          const QuadratureSpec& spec) {
  spec.validate();
  if (!(sigma2 > 0.0)) throw std::invalid_argument("observed_loglik_1d: sigma2 must be > 0");
  arma::vec t, w;
  gauss_hermite(spec.n_nodes_gh, t, w);
  // x = sqrt(2 sigma2) t absorbs the Gaussian kernel; weights sum to sqrt(pi)
  const arma::vec x = std::sqrt(2.0 * sigma2) * t;
  const arma::vec logw = arma::log(w) - 0.5 * std::log(arma::datum::pi);
  return loglik_from_nodes(mu, x, logw, data);
}

double observed_loglik_1d_grid(double mu, double sigma2, const std::vector<arma::uvec>& data,
                               const QuadratureSpec& spec) {
  spec.validate();
  if (!(sigma2 > 0.0)) throw std::invalid_argument("observed_loglik_1d_grid: sigma2 must be > 0");
  const double sd = std::sqrt(sigma2);
  const int n = spec.grid_points;
  const arma::vec x = arma::linspace(-spec.grid_halfwidth * sd, spec.grid_halfwidth * sd, n);
  const double step = x(1) - x(0);
  arma::vec logw(n);
  for (int k = 0; k < n; ++k) {
    const double z = x(k) / sd;
    logw(k) = -0.5 * z * z - 0.5 * log_2pi - std::log(sd) + std::log(step);
  }
  logw(0) -= std::log(2.0);
  logw(n - 1) -= std::log(2.0);
  return loglik_from_nodes(mu, x, logw, data);
}

Mle1d mle_1d(const std::vector<arma::uvec>& data, const QuadratureSpec& spec) {
  spec.validate();
  bool any0 = false, any1 = false;
  for (const arma::uvec& o : data) {
    any1 = any1 || arma::accu(o) > 0;
    any0 = any0 || arma::accu(o) < o.n_elem;
  }
  const double mu_lo = -5.0, mu_hi = 5.0, ls_lo = -10.0, ls_hi = 5.0;

  Mle1d res;
  if (!any0 || !any1) res.boundary = true;  // likelihood maximized in a limit

  double mu = 0.0, ls = 0.0;
  for (int sweep = 0; sweep < 40; ++sweep) {
    const double mu_new = golden_max(
        [&](double m) { return observed_loglik_1d(m, std::exp(ls), data, spec); }, mu_lo, mu_hi,
        1e-7);
    const double ls_new = golden_max(
        [&](double s) { return observed_loglik_1d(mu_new, std::exp(s), data, spec); }, ls_lo,
        ls_hi, 1e-7);
    const bool settled = std::fabs(mu_new - mu) < 1e-7 && std::fabs(ls_new - ls) < 1e-7;
    mu = mu_new;
    ls = ls_new;
    if (settled) break;
  }
  res.mu = mu;
  res.sigma2 = std::exp(ls);
  res.icc = res.sigma2 / (res.sigma2 + 1.0);
  res.loglik = observed_loglik_1d(mu, res.sigma2, data, spec);
  if (std::min(mu - mu_lo, mu_hi - mu) < 1e-3 || std::min(ls - ls_lo, ls_hi - ls) < 1e-3)
    res.boundary = true;
  return res;
}

BruteMoments brute_moments_2d(const arma::umat& o, const ModelParams& params,
                              const QuadratureSpec& spec) {
  spec.validate();
  const int n_visits = static_cast<int>(o.n_rows);
  const int d = params.dim();
  if (d > 2 || n_visits > 2 || n_visits < 1 || o.n_cols != static_cast<arma::uword>(d))
    throw std::invalid_argument("brute_moments_2d: requires D <= 2, 1 <= J <= 2");
  for (arma::uword i = 0; i < o.n_elem; ++i)
    if (o(i) > 1) throw std::invalid_argument("brute_moments_2d: pattern must be 0/1");

  const int dims = n_visits * d;
  const int n_y = dims <= 2 ? 160 : 48;
  const int n_x = 128;
  const BruteMoments coarse = brute_pass(o, params, spec.grid_halfwidth, n_y, n_x);
  const BruteMoments fine =
      brute_pass(o, params, spec.grid_halfwidth, (n_y * 3) / 2, (n_x * 3) / 2);
  const double gap = moments_gap(coarse, fine);
  if (gap > 1e-4) {
    std::ostringstream msg;
    msg << "brute_moments_2d: grid refinement still moves moments by " << gap
        << " (> 1e-4); refusing";
    throw std::runtime_error(msg.str());
  }
  return fine;
}

}  // namespace gicc
