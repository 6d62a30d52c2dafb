#include "gicc/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

#include "text_util.hpp"

namespace gicc {

namespace {

[[noreturn]] void parse_fail(const std::string& where, const std::string& what) {
  throw std::runtime_error(where + ": " + what);
}

std::string loc(const std::string& path, int line) {
  return path + ":" + std::to_string(line);
}

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  for (std::string& f : fields) {
    const auto a = f.find_first_not_of(" \t");
    const auto b = f.find_last_not_of(" \t");
    f = a == std::string::npos ? "" : f.substr(a, b - a + 1);
  }
  return fields;
}

long long parse_ll(const std::string& s, const std::string& where, const char* field) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    parse_fail(where, std::string("cannot parse ") + field + " '" + s + "' as an integer");
  return v;
}

double parse_double(const std::string& s, const std::string& where, const char* field) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    parse_fail(where, std::string("cannot parse ") + field + " '" + s + "' as a number");
  return v;
}

constexpr const char* long_csv_header = "subject,visit,node_a,node_b,value";

struct LongCsvRow {
  long long subject;
  long long visit;
  int node_a;
  int node_b;
  double value;
};

std::vector<LongCsvRow> read_long_csv(const std::string& path, int& n_nodes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::string line;
  int lineno = 1;
  if (!std::getline(in, line)) parse_fail(path, "empty file");
  {
    std::string hdr = line;
    if (!hdr.empty() && hdr.back() == '\r') hdr.pop_back();
    if (hdr != long_csv_header)
      parse_fail(loc(path, 1), std::string("expected header '") + long_csv_header + "'");
  }
  std::vector<LongCsvRow> rows;
  n_nodes = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = loc(path, lineno);
    if (f.size() != 5) parse_fail(where, "expected 5 fields");
    LongCsvRow row;
    row.subject = parse_ll(f[0], where, "subject");
    row.visit = parse_ll(f[1], where, "visit");
    const long long a = parse_ll(f[2], where, "node_a");
    const long long b = parse_ll(f[3], where, "node_b");
    row.value = parse_double(f[4], where, "value");
    if (a < 1 || b < 1) parse_fail(where, "node ids are 1-based");
    if (a == b) parse_fail(where, "self-edges are not part of the graph");
    row.node_a = static_cast<int>(std::min(a, b));
    row.node_b = static_cast<int>(std::max(a, b));
    n_nodes = std::max(n_nodes, row.node_b);
    rows.push_back(row);
  }
  if (rows.empty()) parse_fail(path, "no data rows");
  return rows;
}

}  // namespace

RawGraphDataset::RawGraphDataset(GraphShape shape_in, std::vector<RawRecord> records_in)
    : shape(shape_in), records(std::move(records_in)) {
  if (records.empty()) throw std::invalid_argument("RawGraphDataset: no records");
  std::sort(records.begin(), records.end(), [](const RawRecord& a, const RawRecord& b) {
    return std::make_pair(a.subject, a.visit) < std::make_pair(b.subject, b.visit);
  });
  const arma::uword n = static_cast<arma::uword>(shape.n_nodes);
  for (std::size_t idx = 0; idx < records.size(); ++idx) {
    const RawRecord& rec = records[idx];
    std::ostringstream who;
    who << "record (subject " << rec.subject << ", visit " << rec.visit << ")";
    if (rec.matrix.n_rows != n || rec.matrix.n_cols != n)
      throw std::invalid_argument("RawGraphDataset: " + who.str() + " is not " +
                                  std::to_string(n) + "x" + std::to_string(n));
    for (arma::uword i = 0; i < n; ++i)
      for (arma::uword j = i + 1; j < n; ++j)
        if (std::fabs(rec.matrix(i, j) - rec.matrix(j, i)) > 1e-8)
          throw std::invalid_argument("RawGraphDataset: " + who.str() +
                                      " asymmetric beyond 1e-8");
    if (idx > 0 && records[idx - 1].subject == rec.subject && records[idx - 1].visit == rec.visit)
      throw std::invalid_argument("RawGraphDataset: duplicate " + who.str());
  }
}

int RawGraphDataset::n_subjects() const {
  int n = 0;
  long long prev = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (i == 0 || records[i].subject != prev) {
      ++n;
      prev = records[i].subject;
    }
  return n;
}

RawGraphDataset load_raw(const std::string& path, RawFormat format) {
  if (format == RawFormat::long_csv) {
    int n_nodes = 0;
    const auto rows = read_long_csv(path, n_nodes);
    if (n_nodes < 2) parse_fail(path, "need at least 2 nodes");
    const GraphShape shape(n_nodes);

    std::map<std::pair<long long, long long>, arma::mat> mats;
    std::map<std::pair<long long, long long>, arma::umat> seen;
    for (const LongCsvRow& row : rows) {
      const auto key = std::make_pair(row.subject, row.visit);
      auto [it, fresh] = mats.try_emplace(key);
      if (fresh) {
        it->second.eye(n_nodes, n_nodes);
        seen[key].zeros(n_nodes, n_nodes);
      }
      arma::umat& s = seen[key];
      if (s(row.node_a - 1, row.node_b - 1)) {
        std::ostringstream msg;
        msg << "duplicate edge (" << row.node_a << "," << row.node_b << ") for subject "
            << row.subject << " visit " << row.visit;
        parse_fail(path, msg.str());
      }
      s(row.node_a - 1, row.node_b - 1) = 1;
      it->second(row.node_a - 1, row.node_b - 1) = row.value;
      it->second(row.node_b - 1, row.node_a - 1) = row.value;
    }
    std::vector<RawRecord> records;
    for (auto& [key, mat] : mats) {
      const arma::umat& s = seen[key];
      for (int a = 1; a <= n_nodes; ++a)
        for (int b = a + 1; b <= n_nodes; ++b)
          if (!s(a - 1, b - 1)) {
            std::ostringstream msg;
            msg << "missing edge (" << a << "," << b << ") for subject " << key.first
                << " visit " << key.second;
            parse_fail(path, msg.str());
          }
      records.push_back({key.first, key.second, std::move(mat)});
    }
    return RawGraphDataset(shape, std::move(records));
  }

  // matrix JSON
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    parse_fail(path, std::string("JSON parse error: ") + e.what());
  }
  if (!root.is_object() || !root.contains("n_nodes") || !root.contains("records"))
    parse_fail(path, "expected object with 'n_nodes' and 'records'");
  if (!root["n_nodes"].is_number_integer()) parse_fail(path, "'n_nodes' must be an integer");
  const int n_nodes = root["n_nodes"].get<int>();
  if (n_nodes < 2) parse_fail(path, "need at least 2 nodes");
  if (!root["records"].is_array()) parse_fail(path, "'records' must be an array");

  std::vector<RawRecord> records;
  int idx = 0;
  for (const auto& rec : root["records"]) {
    const std::string where = path + ": records[" + std::to_string(idx) + "]";
    if (!rec.is_object() || !rec.contains("subject") || !rec.contains("visit") ||
        !rec.contains("matrix"))
      parse_fail(where, "expected {subject, visit, matrix}");
    if (!rec["subject"].is_number_integer() || !rec["visit"].is_number_integer())
      parse_fail(where, "subject and visit must be integers");
    RawRecord out;
    out.subject = rec["subject"].get<long long>();
    out.visit = rec["visit"].get<long long>();
    const auto& m = rec["matrix"];
    if (!m.is_array() || static_cast<int>(m.size()) != n_nodes)
      parse_fail(where, "matrix must have n_nodes rows");
    out.matrix.set_size(n_nodes, n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
      if (!m[i].is_array() || static_cast<int>(m[i].size()) != n_nodes)
        parse_fail(where, "matrix row " + std::to_string(i) + " must have n_nodes entries");
      for (int j = 0; j < n_nodes; ++j) {
        if (!m[i][j].is_number()) parse_fail(where, "matrix entries must be numbers");
        out.matrix(i, j) = m[i][j].get<double>();
      }
    }
    records.push_back(std::move(out));
    ++idx;
  }
  try {
    return RawGraphDataset(GraphShape(n_nodes), std::move(records));
  } catch (const std::invalid_argument& e) {
    parse_fail(path, e.what());
  }
}

void save_raw(const RawGraphDataset& raw, const std::string& path, RawFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  if (format == RawFormat::long_csv) {
    out << long_csv_header << "\n";
    for (const RawRecord& rec : raw.records)
      for (int d = 1; d <= raw.shape.n_edges; ++d) {
        const auto [a, b] = edge_pair(d, raw.shape);
        out << rec.subject << ',' << rec.visit << ',' << a << ',' << b << ','
            << format_double(rec.matrix(a - 1, b - 1)) << "\n";
      }
  } else {
    nlohmann::ordered_json root;
    root["n_nodes"] = raw.shape.n_nodes;
    root["records"] = nlohmann::ordered_json::array();
    for (const RawRecord& rec : raw.records) {
      nlohmann::ordered_json jr;
      jr["subject"] = rec.subject;
      jr["visit"] = rec.visit;
      auto rows = nlohmann::ordered_json::array();
      for (int i = 0; i < raw.shape.n_nodes; ++i) {
        auto row = nlohmann::ordered_json::array();
        for (int j = 0; j < raw.shape.n_nodes; ++j) row.push_back(rec.matrix(i, j));
        rows.push_back(std::move(row));
      }
      jr["matrix"] = std::move(rows);
      root["records"].push_back(std::move(jr));
    }
    out << root.dump(2) << "\n";
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

BinaryGraphDataset load_binary_csv(const std::string& path) {
  int n_nodes = 0;
  const auto rows = read_long_csv(path, n_nodes);
  if (n_nodes < 2) parse_fail(path, "need at least 2 nodes");
  const GraphShape shape(n_nodes);
  for (const LongCsvRow& row : rows)
    if (row.value != 0.0 && row.value != 1.0) {
      std::ostringstream msg;
      msg << "value " << row.value << " for subject " << row.subject << " visit " << row.visit
          << " is not 0/1";
      parse_fail(path, msg.str());
    }

  // reuse the raw machinery for presence/duplicate checks, then threshold
  std::vector<RawRecord> records;
  {
    std::map<std::pair<long long, long long>, arma::mat> mats;
    std::map<std::pair<long long, long long>, arma::umat> seen;
    for (const LongCsvRow& row : rows) {
      const auto key = std::make_pair(row.subject, row.visit);
      auto [it, fresh] = mats.try_emplace(key);
      if (fresh) {
        it->second.eye(n_nodes, n_nodes);
        seen[key].zeros(n_nodes, n_nodes);
      }
      arma::umat& s = seen[key];
      if (s(row.node_a - 1, row.node_b - 1)) {
        std::ostringstream msg;
        msg << "duplicate edge (" << row.node_a << "," << row.node_b << ") for subject "
            << row.subject << " visit " << row.visit;
        parse_fail(path, msg.str());
      }
      s(row.node_a - 1, row.node_b - 1) = 1;
      it->second(row.node_a - 1, row.node_b - 1) = row.value;
      it->second(row.node_b - 1, row.node_a - 1) = row.value;
    }
    for (auto& [key, mat] : mats) {
      const arma::umat& s = seen[key];
      for (int a = 1; a <= n_nodes; ++a)
        for (int b = a + 1; b <= n_nodes; ++b)
          if (!s(a - 1, b - 1)) {
            std::ostringstream msg;
            msg << "missing edge (" << a << "," << b << ") for subject " << key.first
                << " visit " << key.second;
            parse_fail(path, msg.str());
          }
      records.push_back({key.first, key.second, std::move(mat)});
    }
  }
  return dichotomize(RawGraphDataset(shape, std::move(records)), 0.5);
}

BinaryGraphDataset dichotomize(const RawGraphDataset& raw, double t) {
  std::vector<arma::umat> obs;
  std::size_t i = 0;
  while (i < raw.records.size()) {
    std::size_t j = i;
    while (j < raw.records.size() && raw.records[j].subject == raw.records[i].subject) ++j;
    arma::umat o(j - i, raw.shape.n_edges);
    for (std::size_t v = i; v < j; ++v)
      for (int d = 1; d <= raw.shape.n_edges; ++d) {
        const auto [a, b] = edge_pair(d, raw.shape);
        o(v - i, d - 1) = raw.records[v].matrix(a - 1, b - 1) > t ? 1u : 0u;
      }
    obs.push_back(std::move(o));
    i = j;
  }
  return BinaryGraphDataset(raw.shape, std::move(obs));
}

SweepResult threshold_sweep(const RawGraphDataset& raw, double t_min, double t_max,
                            double t_step, const FitConfig& config) {
  if (!(t_step > 0.0)) throw std::invalid_argument("threshold_sweep: t_step must be > 0");
  if (!(t_min < t_max)) throw std::invalid_argument("threshold_sweep: need t_min < t_max");
  config.validate();

  const int n = static_cast<int>(std::floor((t_max - t_min) / t_step + 1e-9)) + 1;
  SweepResult res;
  res.thresholds.set_size(n);
  for (int k = 0; k < n; ++k) res.thresholds(k) = t_min + k * t_step;
  res.giccs.set_size(n);
  res.converged.zeros(n);

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n; ++k) {
    try {
      const BinaryGraphDataset data = dichotomize(raw, res.thresholds(k));
      const FitResult fr = fit(data, config);
      res.giccs(k) = fr.gicc;
      res.converged(k) = fr.converged ? 1 : 0;
    } catch (const std::exception&) {
      res.giccs(k) = arma::datum::nan;
      res.converged(k) = 0;
    }
  }

  for (int k = 0; k < n; ++k) {
    if (!res.converged(k)) continue;
    if (!res.has_best || res.giccs(k) > res.best_gicc) {
      res.has_best = true;
      res.best_gicc = res.giccs(k);
      res.best_threshold = res.thresholds(k);
    }
  }
  if (!res.has_best) {
    res.best_threshold = arma::datum::nan;
    res.best_gicc = arma::datum::nan;
  }
  return res;
}

std::string sweep_to_csv(const SweepResult& sweep) {
  std::ostringstream csv;
  csv << "threshold,gicc,converged\n";
  for (arma::uword k = 0; k < sweep.thresholds.n_elem; ++k)
    csv << format_double(sweep.thresholds(k)) << ',' << format_double(sweep.giccs(k)) << ','
        << sweep.converged(k) << "\n";
  return csv.str();
}

std::string sweep_to_json(const SweepResult& sweep) {
  nlohmann::ordered_json root;
  root["schema"] = 1;
  root["thresholds"] = std::vector<double>(sweep.thresholds.begin(), sweep.thresholds.end());
  auto giccs = nlohmann::ordered_json::array();
  for (arma::uword k = 0; k < sweep.giccs.n_elem; ++k) {
    if (std::isnan(sweep.giccs(k)))
      giccs.push_back(nullptr);
    else
      giccs.push_back(sweep.giccs(k));
  }
  root["gicc"] = std::move(giccs);
  auto conv = nlohmann::ordered_json::array();
  for (arma::uword k = 0; k < sweep.converged.n_elem; ++k)
    conv.push_back(sweep.converged(k) != 0);
  root["converged"] = std::move(conv);
  if (sweep.has_best) {
    root["best_threshold"] = sweep.best_threshold;
    root["best_gicc"] = sweep.best_gicc;
  } else {
    root["best_threshold"] = nullptr;
    root["best_gicc"] = nullptr;
  }
  return root.dump(2) + "\n";
}

}  // namespace gicc
