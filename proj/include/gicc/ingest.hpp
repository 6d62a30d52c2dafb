#ifndef GICC_INGEST_HPP
#define GICC_INGEST_HPP

#include <armadillo>
#include <string>
#include <vector>

#include "gicc/mcem.hpp"
#include "gicc/model.hpp"

namespace gicc {

// One raw measurement: a symmetric N x N edge-weight (correlation) matrix
// for one (subject, visit). Diagonal entries are carried through untouched
// but never interpreted.
struct RawRecord {
  long long subject = 0;
  long long visit = 0;
  arma::mat matrix;
};

struct RawGraphDataset {
  GraphShape shape;
  std::vector<RawRecord> records;  // sorted by (subject, visit)

  // validates dimensions, symmetry within 1e-8, and (subject, visit)
  // uniqueness; sorts records
  RawGraphDataset(GraphShape shape_in, std::vector<RawRecord> records_in);
  int n_subjects() const;
};

enum class RawFormat { long_csv, matrix_json };

// Long CSV: header `subject,visit,node_a,node_b,value`, nodes 1-based, every
// edge present exactly once per record. Matrix JSON:
// {"n_nodes": N, "records": [{"subject": s, "visit": v, "matrix": [[...]]}]}.
// Parse errors carry the file location or record index.
RawGraphDataset load_raw(const std::string& path, RawFormat format);

// inverse of load_raw; numbers written in shortest round-trip form so
// load_raw(save_raw(ds)) reproduces ds bit-exactly in both formats
void save_raw(const RawGraphDataset& raw, const std::string& path, RawFormat format);

// same long-CSV layout with values restricted to {0,1}
BinaryGraphDataset load_binary_csv(const std::string& path);

// o = 1 iff edge value > t (strict)
BinaryGraphDataset dichotomize(const RawGraphDataset& raw, double t);

struct SweepResult {
  arma::vec thresholds;   // ascending grid
  arma::vec giccs;        // NaN where the fit failed outright
  arma::uvec converged;   // 0/1 per threshold
  double best_threshold = 0.0;  // argmax over converged; ties -> smallest t
  double best_gicc = 0.0;
  bool has_best = false;  // false when no threshold converged
};

// Fits the model on the dichotomized dataset at each grid threshold
// (concurrently; each fit seeded identically from config) and reports the
// GICC curve with its argmax over the converged thresholds.
SweepResult threshold_sweep(const RawGraphDataset& raw, double t_min, double t_max,
                            double t_step, const FitConfig& config);

// CSV `threshold,gicc,converged`; JSON adds best_threshold/best_gicc
std::string sweep_to_csv(const SweepResult& sweep);
std::string sweep_to_json(const SweepResult& sweep);

}  // namespace gicc

#endif
