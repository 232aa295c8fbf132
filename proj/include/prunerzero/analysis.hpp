#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "prunerzero/expr.hpp"
#include "prunerzero/simplify.hpp"

namespace prunerzero {

struct CandidateRecord {
  std::string expr;
  double fitness = 0.0;
  std::array<int, kNumOps> op_counts{};
};

/// Offspring records from a JSONL search log with finite fitness below
/// `threshold`, deduplicated by canonical key (best fitness kept), in order of
/// first appearance. Throws FormatError on unreadable or malformed logs.
std::vector<CandidateRecord> collect_candidates(const std::filesystem::path& log_path, double threshold,
                                                const OOSCatalog& catalog = OOSCatalog::defaults());
std::vector<CandidateRecord> collect_candidates(std::istream& log, double threshold,
                                                const OOSCatalog& catalog = OOSCatalog::defaults());

inline constexpr std::size_t kCorrelationDim = kNumOps + 1;

struct CorrelationMatrix {
  std::array<std::string, kCorrelationDim> labels;
  /// NaN marks undefined entries (a zero-variance column).
  Eigen::Matrix<double, kCorrelationDim, kCorrelationDim> values;
};

enum class CorrelationKind { Pearson, Spearman };

/// Correlates the 17 op-count columns and the fitness column across records.
/// Throws Error with fewer than three records.
CorrelationMatrix correlation_matrix(const std::vector<CandidateRecord>& records,
                                     CorrelationKind kind = CorrelationKind::Pearson);

/// Header `op,<labels>`, one row per label, empty cells for undefined values, LF endings.
void write_correlation_csv(const CorrelationMatrix& m, std::ostream& out);

struct RankedCorrelation {
  std::string op;
  double value;
};

/// Ops ordered by |correlation with fitness|, largest first, undefined entries dropped.
std::vector<RankedCorrelation> strongest_fitness_correlations(const CorrelationMatrix& m,
                                                              std::size_t count = 3);

}  // namespace prunerzero
