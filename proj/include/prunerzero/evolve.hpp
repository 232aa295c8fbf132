#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "prunerzero/fitness.hpp"

namespace prunerzero {

struct EvolveConfig {
  int population_size = 50;
  int iterations = 300;
  int top_k = 10;
  double sample_ratio = 0.5;
  double mutation_prob = 0.5;
  int depth_min = 3;
  int depth_max = 5;
  std::uint64_t seed = 0;
  int resample_retry_limit = 32;
  /// Fill elapsed_ms / wall_ms with wall-clock time. Off keeps logs byte-reproducible.
  bool record_timing = false;

  /// Throws Error when the bounds 1 <= k <= ceil(r*P) <= P, 0 <= p <= 1 or the depth range fail.
  void validate() const;
  int tournament_size() const;
};

struct Member {
  Expr tree;
  FitnessScore fitness;
  std::size_t insertion_index = 0;
  CanonicalKey key;
};

struct Population {
  std::vector<Member> members;
  std::size_t next_index = 0;
  /// Members admitted despite sharing a canonical key (retry budget exhausted).
  std::size_t uniqueness_waivers = 0;

  const Member& best() const;
  std::size_t worst_position() const;
  bool contains(const CanonicalKey& key) const;
};

struct SearchLogRecord {
  int iter = 0;
  std::string offspring_expr;
  double offspring_fitness = 0.0;
  std::string best_expr;
  double best_fitness = 0.0;
  int pop_size = 0;
  std::size_t cache_hits = 0;
  std::int64_t elapsed_ms = 0;
};

struct SearchSummary {
  std::string best_expr;
  double best_fitness = 0.0;
  std::size_t total_cache_hits = 0;
  std::int64_t wall_ms = 0;
};

struct SearchLog {
  std::vector<SearchLogRecord> records;
  SearchSummary summary;
  /// Best fitness before the first iteration (initial population; +inf for random search).
  double initial_best = 0.0;
};

/// Iteration at which best fitness first drops below `threshold`: 0 if the
/// initial population already does, nullopt if never.
std::optional<int> iterations_to_threshold(const SearchLog& log, double threshold);

/// JSON-lines encoding: one record per line then a {"summary": {...}} line.
/// Non-finite fitness values are written as null.
void write_log_jsonl(const SearchLog& log, std::ostream& out);
std::string record_to_json(const SearchLogRecord& r);

Population init_population(const EvolveConfig& config, Rng& rng, FitnessEvaluator& fitness);

struct Parents {
  const Expr* first;
  const Expr* second;
};

Parents tournament_select(const Population& pop, double sample_ratio, int top_k, Rng& rng);

/// Subtree crossover in DFS preorder. Retries shape failures, then falls back to a copy of p1.
Expr crossover(const Expr& p1, const Expr& p2, Rng& rng, int retry_limit = 32);

/// With probability p, rewrites each node's label with rate 1/node_count,
/// keeping arity. Structure is never changed.
Expr mutate(const Expr& tree, double p, Rng& rng, int retry_limit = 32);

/// Replaces one node's label with a different one of the same arity. Leaves
/// directly under a unary op never become X.
void mutate_label(Expr& node, bool parent_is_unary, Rng& rng);

class SearchState {
 public:
  SearchState(EvolveConfig config, FitnessEvaluator& fitness);

  /// One steady-state iteration: select, cross, mutate, simplify, dedupe, score, evict.
  SearchLogRecord step();

  const Population& population() const { return pop_; }
  const EvolveConfig& config() const { return config_; }
  int iteration() const { return iter_; }
  Rng& rng() { return rng_; }

 private:
  Expr fresh_offspring();

  EvolveConfig config_;
  FitnessEvaluator& fitness_;
  Rng rng_;
  Population pop_;
  int iter_ = 0;
  std::int64_t start_ms_ = 0;
};

using RecordSink = std::function<void(const SearchLogRecord&)>;

SearchLog run_evolution(const EvolveConfig& config, FitnessEvaluator& fitness,
                        const RecordSink& sink = {});

/// Same budget, one fresh random tree per iteration.
SearchLog random_search(const EvolveConfig& config, FitnessEvaluator& fitness,
                        const RecordSink& sink = {});

}  // namespace prunerzero
