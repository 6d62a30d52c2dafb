#include "gicc/model.hpp"

#include <sstream>
#include <stdexcept>

namespace gicc {

GraphShape::GraphShape(int n) : n_nodes(n), n_edges(n * (n - 1) / 2) {
  if (n < 2) throw std::domain_error("GraphShape: need at least 2 nodes");
}

int edge_index(int a, int b, const GraphShape& shape) {
  const int n = shape.n_nodes;
  if (a < 1 || b < 1 || a >= b || b > n)
    throw std::domain_error("edge_index: need 1 <= a < b <= n_nodes");
  return (a - 1) * n - a * (a - 1) / 2 + (b - a);
}

std::pair<int, int> edge_pair(int d, const GraphShape& shape) {
  if (d < 1 || d > shape.n_edges)
    throw std::domain_error("edge_pair: slot out of range");
  int a = 1;
  int rem = d;
  while (rem > shape.n_nodes - a) {
    rem -= shape.n_nodes - a;
    ++a;
  }
  return {a, a + rem};
}

arma::uvec vectorize_graph(const arma::mat& adjacency, const GraphShape& shape) {
  const auto n = static_cast<arma::uword>(shape.n_nodes);
  if (adjacency.n_rows != n || adjacency.n_cols != n)
    throw std::invalid_argument("vectorize_graph: adjacency size mismatch");
  for (arma::uword i = 0; i < n; ++i) {
    if (adjacency(i, i) != 0.0)
      throw std::invalid_argument("vectorize_graph: nonzero diagonal (self-loop)");
    for (arma::uword j = i + 1; j < n; ++j) {
      const double v = adjacency(i, j);
      if (v != adjacency(j, i))
        throw std::invalid_argument("vectorize_graph: adjacency not symmetric");
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("vectorize_graph: entries must be 0 or 1");
    }
  }
  arma::uvec out(static_cast<arma::uword>(shape.n_edges));
  arma::uword d = 0;
  for (arma::uword i = 0; i < n; ++i)
    for (arma::uword j = i + 1; j < n; ++j)
      out(d++) = adjacency(i, j) != 0.0 ? 1u : 0u;
  return out;
}

arma::mat devectorize_graph(const arma::uvec& edges, const GraphShape& shape) {
  if (edges.n_elem != static_cast<arma::uword>(shape.n_edges))
    throw std::invalid_argument("devectorize_graph: edge vector length mismatch");
  arma::mat adj(shape.n_nodes, shape.n_nodes, arma::fill::zeros);
  arma::uword d = 0;
  for (int i = 0; i < shape.n_nodes; ++i)
    for (int j = i + 1; j < shape.n_nodes; ++j) {
      adj(i, j) = adj(j, i) = edges(d++) ? 1.0 : 0.0;
    }
  return adj;
}

namespace {

void check_psd(const arma::mat& m, const char* who) {
  if (m.n_rows != m.n_cols) throw std::domain_error(std::string(who) + ": matrix not square");
  const double asym = arma::abs(m - m.t()).max();
  if (asym > eps_psd) throw std::domain_error(std::string(who) + ": matrix not symmetric");
  arma::vec ev;
  if (!arma::eig_sym(ev, arma::symmatu(m)))
    throw std::runtime_error(std::string(who) + ": eigenvalue computation failed");
  if (ev.min() < -eps_psd)
    throw std::domain_error(std::string(who) + ": matrix not positive semidefinite");
}

} // namespace

ModelParams::ModelParams(arma::vec mu_in, arma::mat sigma_in)
    : mu(std::move(mu_in)), sigma_x(std::move(sigma_in)) {
  if (sigma_x.n_rows != mu.n_elem || sigma_x.n_cols != mu.n_elem)
    throw std::invalid_argument("ModelParams: mu/sigma_x dimension mismatch");
  if (!mu.is_finite() || !sigma_x.is_finite())
    throw std::domain_error("ModelParams: non-finite entries");
  sigma_x = 0.5 * (sigma_x + sigma_x.t());
  check_psd(sigma_x, "ModelParams");
}

BinaryGraphDataset::BinaryGraphDataset(GraphShape shape_in, std::vector<arma::umat> obs_in)
    : shape(shape_in), obs(std::move(obs_in)) {
  if (obs.empty()) throw std::invalid_argument("BinaryGraphDataset: no subjects");
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i].n_rows < 1)
      throw std::invalid_argument("BinaryGraphDataset: subject " + std::to_string(i + 1) +
                                  " has no visits");
    if (obs[i].n_cols != static_cast<arma::uword>(shape.n_edges))
      throw std::invalid_argument("BinaryGraphDataset: subject " + std::to_string(i + 1) +
                                  " has wrong edge count");
    if (obs[i].max() > 1u)
      throw std::invalid_argument("BinaryGraphDataset: observations must be 0 or 1");
  }
}

int BinaryGraphDataset::total_visits() const {
  int t = 0;
  for (const auto& m : obs) t += static_cast<int>(m.n_rows);
  return t;
}

double gicc(const arma::mat& sigma_x) {
  check_psd(sigma_x, "gicc");
  const double tr = arma::trace(sigma_x);
  const double d = static_cast<double>(sigma_x.n_rows);
  return tr / (tr + d);
}

double probit_prob(double mu_d, double x_d) {
  if (!std::isfinite(mu_d) || !std::isfinite(x_d))
    throw std::domain_error("probit_prob: non-finite input");
  return norm_cdf(mu_d + x_d);
}

double complete_loglik(const ModelParams& params, const LatentState& state) {
  const int d = params.dim();
  const auto n_subj = state.x.n_rows;
  if (state.y.size() != n_subj || state.x.n_cols != static_cast<arma::uword>(d))
    throw std::invalid_argument("complete_loglik: state/params shape mismatch");

  arma::mat chol_l;
  if (!arma::chol(chol_l, params.sigma_x, "lower")) {
    std::ostringstream msg;
    msg << "complete_loglik: sigma_x not positive definite (rcond="
        << arma::rcond(params.sigma_x) << ")";
    throw std::runtime_error(msg.str());
  }
  const double logdet = 2.0 * arma::sum(arma::log(chol_l.diag()));

  double ll = 0.0;
  for (arma::uword i = 0; i < n_subj; ++i) {
    const arma::vec xi = state.x.row(i).t();
    const arma::vec half = arma::solve(arma::trimatl(chol_l), xi);
    ll += -0.5 * d * log_2pi - 0.5 * logdet - 0.5 * arma::dot(half, half);
    const arma::mat& yi = state.y[i];
    if (yi.n_cols != static_cast<arma::uword>(d))
      throw std::invalid_argument("complete_loglik: y dimension mismatch");
    for (arma::uword j = 0; j < yi.n_rows; ++j) {
      const arma::rowvec resid = yi.row(j) - params.mu.t() - state.x.row(i);
      ll += -0.5 * d * log_2pi - 0.5 * arma::dot(resid, resid);
    }
  }
  return ll;
}

} // namespace gicc
