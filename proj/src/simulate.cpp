#include "gicc/simulate.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gicc/rng.hpp"
#include "text_util.hpp"

namespace gicc {

namespace {

// substream purposes under a replicate seed (mcem uses 0 and 1)
constexpr std::uint64_t stream_generate = 2;
constexpr std::uint64_t stream_replicate = 3;

// order-stable compensated accumulator for the study aggregates
struct Kahan {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

double kahan_mean(const std::vector<double>& v) {
  Kahan k;
  for (double x : v) k.add(x);
  return k.sum / static_cast<double>(v.size());
}

double kahan_sd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  Kahan k;
  for (double x : v) k.add((x - mean) * (x - mean));
  return std::sqrt(k.sum / static_cast<double>(v.size() - 1));
}

nlohmann::ordered_json opt_num(bool present, double v) {
  return present ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

void SimSettings::validate() const {
  if (n_subjects < 1) throw std::invalid_argument("SimSettings: n_subjects must be >= 1");
  if (n_visits < 1) throw std::invalid_argument("SimSettings: n_visits must be >= 1");
  if (n_nodes < 2) throw std::invalid_argument("SimSettings: n_nodes must be >= 2");
  if (!(r > 0.0)) throw std::domain_error("SimSettings: r must be > 0");
  if (!(std::fabs(rho) < 1.0)) throw std::domain_error("SimSettings: |rho| must be < 1");
  if (replicates < 1) throw std::invalid_argument("SimSettings: replicates must be >= 1");
}

arma::mat ar1_covariance(double r, double rho, int d) {
  if (!(r > 0.0)) throw std::domain_error("ar1_covariance: r must be > 0");
  if (!(std::fabs(rho) < 1.0)) throw std::domain_error("ar1_covariance: |rho| must be < 1");
  if (d < 1) throw std::invalid_argument("ar1_covariance: d must be >= 1");
  arma::mat sigma(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) sigma(i, j) = r * std::pow(rho, std::abs(i - j));
  arma::mat chk;
  if (!arma::chol(chk, sigma)) throw std::domain_error("ar1_covariance: matrix not PD");
  return sigma;
}

std::pair<BinaryGraphDataset, LatentState> generate_dataset(const SimSettings& settings) {
  settings.validate();
  const GraphShape shape(settings.n_nodes);
  const int d = shape.n_edges;
  const arma::mat sigma = ar1_covariance(settings.r, settings.rho, d);
  const arma::mat chol_l = arma::chol(sigma, "lower");
  const arma::vec mu(d, arma::fill::value(settings.mu_value));

  LatentState latent;
  latent.x.set_size(settings.n_subjects, d);
  latent.y.resize(settings.n_subjects);
  std::vector<arma::umat> obs(settings.n_subjects);

  for (int i = 0; i < settings.n_subjects; ++i) {
    // draw order fixed per subject: D coloring normals, then J*D residuals
    RngStream rng(settings.seed, static_cast<std::uint64_t>(i), 0, stream_generate);
    arma::vec z(d);
    for (int k = 0; k < d; ++k) z(k) = rng.normal();
    const arma::vec x = chol_l * z;
    latent.x.row(i) = x.t();
    arma::mat y(settings.n_visits, d);
    arma::umat o(settings.n_visits, d);
    for (int j = 0; j < settings.n_visits; ++j)
      for (int k = 0; k < d; ++k) {
        y(j, k) = mu(k) + x(k) + rng.normal();
        o(j, k) = y(j, k) > 0.0 ? 1u : 0u;
      }
    latent.y[i] = std::move(y);
    obs[i] = std::move(o);
  }
  return {BinaryGraphDataset(shape, std::move(obs)), std::move(latent)};
}

std::vector<StudySummary> run_study(const std::vector<SimSettings>& settings,
                                    const FitConfig& fit_config) {
  fit_config.validate();
  std::vector<StudySummary> out;
  out.reserve(settings.size());

  for (const SimSettings& s : settings) {
    s.validate();
    const int d = GraphShape(s.n_nodes).n_edges;
    const int reps = s.replicates;
    std::vector<double> gicc_vals(reps);
    std::vector<arma::vec> diag_vals(reps);
    std::vector<char> ok(reps, 0);
    std::vector<std::string> errors(reps);

#pragma omp parallel for schedule(dynamic)
    for (int rep = 0; rep < reps; ++rep) {
      try {
        RngStream seeder(s.seed, static_cast<std::uint64_t>(rep), 0, stream_replicate);
        SimSettings rep_settings = s;
        rep_settings.seed = seeder.next_u64();
        auto [data, latent] = generate_dataset(rep_settings);
        FitConfig cfg = fit_config;
        cfg.seed = seeder.next_u64();
        const FitResult res = fit(data, cfg);
        gicc_vals[rep] = res.gicc;
        diag_vals[rep] = res.params.sigma_x.diag();
        ok[rep] = res.converged ? 1 : 0;
      } catch (const std::exception& e) {
        errors[rep] = e.what();
      }
    }
    for (int rep = 0; rep < reps; ++rep)
      if (!errors[rep].empty()) {
        std::ostringstream msg;
        msg << "run_study: replicate " << rep << ": " << errors[rep];
        throw std::runtime_error(msg.str());
      }

    // aggregate converged replicates in index order, independent of scheduling
    StudySummary summary;
    summary.settings = s;
    std::vector<double> g;
    std::vector<std::vector<double>> diag(d);
    for (int rep = 0; rep < reps; ++rep) {
      if (!ok[rep]) {
        ++summary.n_excluded;
        continue;
      }
      g.push_back(gicc_vals[rep]);
      for (int k = 0; k < d; ++k) diag[k].push_back(diag_vals[rep](k));
    }
    summary.replicates_used = static_cast<int>(g.size());
    summary.diag_mean.set_size(d);
    summary.diag_sd.set_size(d);
    if (!g.empty()) {
      summary.gicc_mean = kahan_mean(g);
      summary.gicc_sd = kahan_sd(g, summary.gicc_mean);
      for (int k = 0; k < d; ++k) {
        summary.diag_mean(k) = kahan_mean(diag[k]);
        summary.diag_sd(k) = kahan_sd(diag[k], summary.diag_mean(k));
      }
    } else {
      summary.gicc_mean = summary.gicc_sd = arma::datum::nan;
      summary.diag_mean.fill(arma::datum::nan);
      summary.diag_sd.fill(arma::datum::nan);
    }
    out.push_back(std::move(summary));
  }
  return out;
}

std::string study_to_csv(const std::vector<StudySummary>& summaries) {
  if (summaries.empty()) return "";
  const int d = static_cast<int>(summaries.front().diag_mean.n_elem);
  std::ostringstream csv;
  csv << "subjects,visits,nodes,r,rho,replicates,used,excluded,gicc_mean,gicc_sd";
  for (int k = 1; k <= d; ++k) csv << ",sigma_" << k << "_mean,sigma_" << k << "_sd";
  csv << "\n";
  for (const StudySummary& s : summaries) {
    if (static_cast<int>(s.diag_mean.n_elem) != d)
      throw std::invalid_argument("study_to_csv: summaries mix different D");
    const bool have = s.replicates_used > 0;
    const bool have_sd = s.replicates_used > 1;
    csv << s.settings.n_subjects << ',' << s.settings.n_visits << ',' << s.settings.n_nodes << ','
        << format_double(s.settings.r) << ',' << format_double(s.settings.rho) << ','
        << s.settings.replicates << ',' << s.replicates_used << ',' << s.n_excluded << ','
        << (have ? format_double(s.gicc_mean) : "") << ','
        << (have_sd ? format_double(s.gicc_sd) : "");
    for (int k = 0; k < d; ++k)
      csv << ',' << (have ? format_double(s.diag_mean(k)) : "") << ','
          << (have_sd ? format_double(s.diag_sd(k)) : "");
    csv << "\n";
  }
  return csv.str();
}

std::string study_to_json(const std::vector<StudySummary>& summaries) {
  nlohmann::ordered_json root;
  root["schema"] = 1;
  root["studies"] = nlohmann::ordered_json::array();
  for (const StudySummary& s : summaries) {
    nlohmann::ordered_json j;
    j["settings"] = {{"subjects", s.settings.n_subjects}, {"visits", s.settings.n_visits},
                     {"nodes", s.settings.n_nodes},       {"mu", s.settings.mu_value},
                     {"r", s.settings.r},                 {"rho", s.settings.rho},
                     {"replicates", s.settings.replicates}, {"seed", s.settings.seed}};
    j["replicates_used"] = s.replicates_used;
    j["excluded"] = s.n_excluded;
    const bool have = s.replicates_used > 0;
    const bool have_sd = s.replicates_used > 1;
    j["gicc"]["mean"] = opt_num(have, s.gicc_mean);
    j["gicc"]["sd"] = opt_num(have_sd, s.gicc_sd);
    j["sigma_diag"]["mean"] = nlohmann::ordered_json::array();
    j["sigma_diag"]["sd"] = nlohmann::ordered_json::array();
    for (arma::uword k = 0; k < s.diag_mean.n_elem; ++k) {
      j["sigma_diag"]["mean"].push_back(opt_num(have, s.diag_mean(k)));
      j["sigma_diag"]["sd"].push_back(opt_num(have_sd, s.diag_sd(k)));
    }
    root["studies"].push_back(std::move(j));
  }
  return root.dump(2) + "\n";
}

}  // namespace gicc
