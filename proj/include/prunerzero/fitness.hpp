#pragma once

#include <chrono>
#include <cstddef>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "prunerzero/bundle.hpp"
#include "prunerzero/evaluate.hpp"
#include "prunerzero/pruner.hpp"
#include "prunerzero/simplify.hpp"

namespace prunerzero {

/// Lower is better. Failed evaluations carry +inf with finite = false.
struct FitnessScore {
  double value = std::numeric_limits<double>::infinity();
  bool finite = false;

  static FitnessScore of(double v);
  static FitnessScore sentinel() { return {}; }
};

struct ReconProxy {
  SparsityPattern pattern = SparsityPattern::unstructured(0.5);
  /// Sum raw errors instead of averaging per-layer ratios against magnitude.
  bool unnormalized = false;
};

struct TargetRecovery {
  Expr target;
};

struct ExternalEvaluator {
  std::string command_template;  // must contain {expr}
  std::chrono::seconds timeout{600};
};

using FitnessMode = std::variant<ReconProxy, TargetRecovery, ExternalEvaluator>;

struct FitnessOptions {
  SafeMathConfig safety{};
  /// Worker threads for per-layer scoring; 0 or 1 means sequential.
  unsigned threads = 1;
};

/// Mean over layers of recon_error(tree) / recon_error(magnitude). Layers whose
/// baseline error is below epsilon are skipped; if every layer is skipped the
/// score is 1.
FitnessScore fitness_recon(const Expr& tree, const TensorBundle& bundle,
                           const SparsityPattern& pattern, const FitnessOptions& opts = {},
                           bool unnormalized = false);

/// Mean over layers of 1 - Spearman(tree saliency, target saliency).
FitnessScore fitness_target(const Expr& tree, const TensorBundle& bundle, const Expr& target,
                            const FitnessOptions& opts = {});

/// Runs the command with {expr} replaced by the shell-quoted canonical string,
/// also feeding the expression plus newline on stdin, and parses one float
/// from stdout. Any failure yields the sentinel and a warning on stderr.
FitnessScore fitness_external(const Expr& tree, const ExternalEvaluator& evaluator);

/// Spearman rank correlation with average ranks for ties. NaN if either side is constant.
double spearman(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

/// Average ranks (1-based) with ties sharing the mean of their positions.
Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Thread-safe score cache keyed by the canonical (simplified) form.
class FitnessCache {
 public:
  std::optional<FitnessScore> find(const CanonicalKey& key);
  void insert(const CanonicalKey& key, const FitnessScore& score);

  std::size_t hits() const;
  std::size_t misses() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<CanonicalKey, FitnessScore> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

/// Scores trees under one fitness mode, consulting the cache first. The tree
/// that is actually evaluated is the simplified form, so equivalent trees
/// always receive the same score.
class FitnessEvaluator {
 public:
  FitnessEvaluator(const TensorBundle& bundle, FitnessMode mode, FitnessOptions opts = {},
                   OOSCatalog catalog = OOSCatalog::defaults());

  FitnessScore score(const Expr& tree);

  const FitnessCache& cache() const { return cache_; }
  const OOSCatalog& catalog() const { return catalog_; }
  const FitnessMode& mode() const { return mode_; }

 private:
  FitnessScore evaluate_uncached(const Expr& simplified);

  const TensorBundle& bundle_;
  FitnessMode mode_;
  FitnessOptions opts_;
  OOSCatalog catalog_;
  FitnessCache cache_;
  std::vector<Eigen::VectorXd> target_ranks_;  // TargetRecovery: per-layer ranks of the target
};

/// Strict weak order: lower value, then fewer nodes, then older insertion.
bool fitter(const FitnessScore& a, std::size_t nodes_a, std::size_t order_a,
            const FitnessScore& b, std::size_t nodes_b, std::size_t order_b);

}  // namespace prunerzero
