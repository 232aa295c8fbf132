#include "prunerzero/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "prunerzero/errors.hpp"
#include "prunerzero/fitness.hpp"

namespace prunerzero {

std::vector<CandidateRecord> collect_candidates(std::istream& log, double threshold,
                                                const OOSCatalog& catalog) {
  std::vector<CandidateRecord> out;
  std::map<CanonicalKey, std::size_t> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(log, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("search log line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError("search log line " + std::to_string(line_no) + ": not an object");
    if (j.contains("summary")) continue;
    if (!j.contains("offspring_expr") || !j.contains("offspring_fitness")) {
      throw FormatError("search log line " + std::to_string(line_no) + ": missing offspring fields");
    }
    const auto& fit = j["offspring_fitness"];
    if (fit.is_null()) continue;  // sentinel
    if (!fit.is_number()) throw FormatError("search log line " + std::to_string(line_no) + ": bad fitness");
    const double value = fit.get<double>();
    if (!std::isfinite(value) || !(value < threshold)) continue;

    const std::string expr = j["offspring_expr"].get<std::string>();
    Expr tree;
    try {
      tree = parse_expr(expr);
    } catch (const ParseError& e) {
      throw FormatError("search log line " + std::to_string(line_no) + ": " + e.what());
    }
    const CanonicalKey key = canonical_key(tree, catalog);
    CandidateRecord rec;
    rec.expr = expr;
    rec.fitness = value;
    const auto hist = op_histogram(tree);
    for (std::size_t i = 0; i < kNumOps; ++i) rec.op_counts[i] = static_cast<int>(hist[i]);

    if (const auto it = seen.find(key); it != seen.end()) {
      if (value < out[it->second].fitness) out[it->second] = std::move(rec);
      continue;
    }
    seen.emplace(key, out.size());
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CandidateRecord> collect_candidates(const std::filesystem::path& log_path, double threshold,
                                                const OOSCatalog& catalog) {
  std::ifstream in(log_path);
  if (!in) throw FormatError("cannot open search log " + log_path.string());
  return collect_candidates(in, threshold, catalog);
}

CorrelationMatrix correlation_matrix(const std::vector<CandidateRecord>& records, CorrelationKind kind) {
  if (records.size() < 3) {
    throw Error("too few records for correlation (" + std::to_string(records.size()) + ", need 3)");
  }
  const auto n = static_cast<Eigen::Index>(records.size());
  Eigen::MatrixXd cols(n, static_cast<Eigen::Index>(kCorrelationDim));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& rec = records[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < kNumOps; ++c) cols(r, static_cast<Eigen::Index>(c)) = rec.op_counts[c];
    cols(r, static_cast<Eigen::Index>(kNumOps)) = rec.fitness;
  }
  if (kind == CorrelationKind::Spearman) {
    for (Eigen::Index c = 0; c < cols.cols(); ++c) cols.col(c) = average_ranks(cols.col(c));
  }

  // Center, then scale each column to unit norm; zero-variance columns stay undefined.
  Eigen::MatrixXd z = cols.rowwise() - cols.colwise().mean();
  std::array<bool, kCorrelationDim> defined{};
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double norm = z.col(c).norm();
    defined[static_cast<std::size_t>(c)] = norm > 0.0;
    if (norm > 0.0) z.col(c) /= norm;
  }

  CorrelationMatrix m;
  for (std::size_t i = 0; i < kNumOps; ++i) m.labels[i] = std::string(op_token(kAllOps[i]));
  m.labels[kNumOps] = "fitness";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < kCorrelationDim; ++i) {
    for (std::size_t j = i; j < kCorrelationDim; ++j) {
      double v = nan;
      if (defined[i] && defined[j]) {
        v = i == j ? 1.0
                   : std::clamp(z.col(static_cast<Eigen::Index>(i)).dot(z.col(static_cast<Eigen::Index>(j))),
                                -1.0, 1.0);
      }
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      m.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return m;
}

void write_correlation_csv(const CorrelationMatrix& m, std::ostream& out) {
  out << "op";
  for (const auto& l : m.labels) out << ',' << l;
  out << '\n';
  std::ostringstream cell;
  cell.precision(17);
  for (std::size_t i = 0; i < kCorrelationDim; ++i) {
    out << m.labels[i];
    for (std::size_t j = 0; j < kCorrelationDim; ++j) {
      out << ',';
      const double v = m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (std::isnan(v)) continue;
      cell.str("");
      cell << v;
      out << cell.str();
    }
    out << '\n';
  }
}

std::vector<RankedCorrelation> strongest_fitness_correlations(const CorrelationMatrix& m, std::size_t count) {
  std::vector<RankedCorrelation> out;
  for (std::size_t i = 0; i < kNumOps; ++i) {
    const double v = m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(kNumOps));
    if (!std::isnan(v)) out.push_back({m.labels[i], v});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return std::abs(a.value) > std::abs(b.value); });
  if (out.size() > count) out.resize(count);
  return out;
}

}  // namespace prunerzero
