#include "prunerzero/evolve.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace prunerzero {

namespace {

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

bool member_fitter(const Member& a, const Member& b) {
  return fitter(a.fitness, node_count(a.tree), a.insertion_index, b.fitness, node_count(b.tree),
                b.insertion_index);
}

nlohmann::ordered_json fitness_json(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

Leaf other_leaf(Leaf current, bool under_unary, Rng& rng) {
  for (;;) {
    const Leaf l = kAllLeaves[rng.uniform_index(kAllLeaves.size())];
    if (l == current) continue;
    if (under_unary && l == Leaf::X) continue;
    return l;
  }
}

void mutate_walk(Expr& node, bool under_unary, double rate, Rng& rng) {
  if (rng.bernoulli(rate)) mutate_label(node, under_unary, rng);
  const bool unary = !node.is_leaf() && node.args.size() == 1;
  for (Expr& c : node.args) mutate_walk(c, unary, rate, rng);
}

}  // namespace

void mutate_label(Expr& node, bool parent_is_unary, Rng& rng) {
  if (node.is_leaf()) {
    const Leaf cur = node.as_leaf();
    // Under a unary op only W <-> G is possible; an X child there stays put.
    if (parent_is_unary && cur == Leaf::X) return;
    node.head = other_leaf(cur, parent_is_unary, rng);
    return;
  }
  const OpKind cur = node.as_op();
  const std::size_t lo = arity(cur) == 1 ? 0 : kNumUnaryOps;
  const std::size_t count = arity(cur) == 1 ? kNumUnaryOps - 1 : kNumOps - kNumUnaryOps - 1;
  std::size_t pick = lo + rng.uniform_index(count);
  if (pick >= op_index(cur)) ++pick;  // skip the current label
  node.head = kAllOps[pick];
}

void EvolveConfig::validate() const {
  if (population_size < 1) throw Error("population size must be >= 1");
  if (iterations < 0) throw Error("iterations must be >= 0");
  if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) throw Error("sample ratio must lie in (0, 1]");
  const int drawn = tournament_size();
  if (!(1 <= top_k && top_k <= drawn && drawn <= population_size)) {
    throw Error("need 1 <= top-k <= ceil(sample_ratio * population) <= population (top-k " +
                std::to_string(top_k) + ", tournament " + std::to_string(drawn) + ")");
  }
  if (!(mutation_prob >= 0.0 && mutation_prob <= 1.0)) throw Error("mutation probability must lie in [0, 1]");
  if (depth_min < 1 || depth_max < depth_min) throw Error("depth range must satisfy 1 <= min <= max");
  if (resample_retry_limit < 1) throw Error("resample retry limit must be >= 1");
}

int EvolveConfig::tournament_size() const {
  return static_cast<int>(std::ceil(sample_ratio * population_size - 1e-9));
}

const Member& Population::best() const {
  return *std::min_element(members.begin(), members.end(), member_fitter);
}

std::size_t Population::worst_position() const {
  std::size_t worst = 0;
  for (std::size_t i = 1; i < members.size(); ++i) {
    const Member& m = members[i];
    const Member& w = members[worst];
    if (m.fitness.value > w.fitness.value ||
        (m.fitness.value == w.fitness.value && m.insertion_index > w.insertion_index)) {
      worst = i;
    }
  }
  return worst;
}

bool Population::contains(const CanonicalKey& key) const {
  return std::any_of(members.begin(), members.end(), [&](const Member& m) { return m.key == key; });
}

std::optional<int> iterations_to_threshold(const SearchLog& log, double threshold) {
  if (log.initial_best < threshold) return 0;
  for (const auto& r : log.records) {
    if (r.best_fitness < threshold) return r.iter;
  }
  return std::nullopt;
}

std::string record_to_json(const SearchLogRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["offspring_expr"] = r.offspring_expr;
  j["offspring_fitness"] = fitness_json(r.offspring_fitness);
  j["best_expr"] = r.best_expr;
  j["best_fitness"] = fitness_json(r.best_fitness);
  j["pop_size"] = r.pop_size;
  j["cache_hits"] = r.cache_hits;
  j["elapsed_ms"] = r.elapsed_ms;
  return j.dump();
}

void write_log_jsonl(const SearchLog& log, std::ostream& out) {
  for (const auto& r : log.records) out << record_to_json(r) << '\n';
  nlohmann::ordered_json s;
  s["best_expr"] = log.summary.best_expr;
  s["best_fitness"] = fitness_json(log.summary.best_fitness);
  s["total_cache_hits"] = log.summary.total_cache_hits;
  s["wall_ms"] = log.summary.wall_ms;
  nlohmann::ordered_json line;
  line["summary"] = std::move(s);
  out << line.dump() << '\n';
}

Population init_population(const EvolveConfig& config, Rng& rng, FitnessEvaluator& fitness) {
  Population pop;
  pop.members.reserve(static_cast<std::size_t>(config.population_size));
  for (int i = 0; i < config.population_size; ++i) {
    const bool full = i % 2 == 1;  // ramped half-and-half
    Expr tree = random_tree(rng, config.depth_min, config.depth_max, full);
    CanonicalKey key = canonical_key(tree, fitness.catalog());
    for (int attempt = 0; attempt < config.resample_retry_limit && pop.contains(key); ++attempt) {
      tree = random_tree(rng, config.depth_min, config.depth_max, full);
      key = canonical_key(tree, fitness.catalog());
    }
    if (pop.contains(key)) ++pop.uniqueness_waivers;
    const FitnessScore score = fitness.score(tree);
    pop.members.push_back({std::move(tree), score, pop.next_index++, key});
  }
  return pop;
}

Parents tournament_select(const Population& pop, double sample_ratio, int top_k, Rng& rng) {
  const std::size_t size = pop.members.size();
  if (size == 0) throw Error("tournament_select: empty population");
  auto drawn = static_cast<std::size_t>(std::ceil(sample_ratio * static_cast<double>(size) - 1e-9));
  drawn = std::clamp<std::size_t>(drawn, 1, size);

  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < drawn; ++i) {
    const std::size_t j = i + rng.uniform_index(size - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(drawn);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return member_fitter(pop.members[a], pop.members[b]);
  });
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(top_k, 1)), drawn);
  const std::size_t first = idx[rng.uniform_index(k)];
  const std::size_t second = idx[rng.uniform_index(k)];
  return {&pop.members[first].tree, &pop.members[second].tree};
}

Expr crossover(const Expr& p1, const Expr& p2, Rng& rng, int retry_limit) {
  const std::size_t n1 = node_count(p1);
  const std::size_t n2 = node_count(p2);
  for (int attempt = 0; attempt < retry_limit; ++attempt) {
    const std::size_t at = rng.uniform_index(n1);
    const std::size_t from = rng.uniform_index(n2);
    Expr child = p1;
    node_at(child, at) = node_at(p2, from);
    if (is_shape_valid(child)) return child;
  }
  return p1;
}

Expr mutate(const Expr& tree, double p, Rng& rng, int retry_limit) {
  if (!rng.bernoulli(p)) return tree;
  const double rate = 1.0 / static_cast<double>(node_count(tree));
  for (int attempt = 0; attempt < retry_limit; ++attempt) {
    Expr child = tree;
    mutate_walk(child, false, rate, rng);
    if (is_shape_valid(child)) return child;
  }
  return tree;
}

SearchState::SearchState(EvolveConfig config, FitnessEvaluator& fitness)
    : config_(std::move(config)), fitness_(fitness), rng_(config_.seed) {
  config_.validate();
  start_ms_ = config_.record_timing ? now_ms() : 0;
  pop_ = init_population(config_, rng_, fitness_);
}

Expr SearchState::fresh_offspring() {
  return oos_simplify(random_tree(rng_, config_.depth_min, config_.depth_max), fitness_.catalog());
}

SearchLogRecord SearchState::step() {
  ++iter_;
  const OOSCatalog& catalog = fitness_.catalog();
  const Parents parents = tournament_select(pop_, config_.sample_ratio, config_.top_k, rng_);
  Expr child = crossover(*parents.first, *parents.second, rng_, config_.resample_retry_limit);
  child = mutate(child, config_.mutation_prob, rng_, config_.resample_retry_limit);
  child = oos_simplify(child, catalog);
  if (is_equivalent(child, *parents.first, catalog) || is_equivalent(child, *parents.second, catalog)) {
    child = fresh_offspring();
  }
  CanonicalKey key = canonical_key(child, catalog);
  for (int attempt = 0; attempt < config_.resample_retry_limit && pop_.contains(key); ++attempt) {
    child = fresh_offspring();
    key = canonical_key(child, catalog);
  }

  const FitnessScore score = fitness_.score(child);
  SearchLogRecord rec;
  rec.iter = iter_;
  rec.offspring_expr = format_expr(child);
  rec.offspring_fitness = score.value;

  // A duplicate that survived every resample is not admitted; uniqueness wins.
  if (!pop_.contains(key)) {
    pop_.members.push_back({std::move(child), score, pop_.next_index++, key});
    pop_.members.erase(pop_.members.begin() + static_cast<std::ptrdiff_t>(pop_.worst_position()));
  }

  const Member& best = pop_.best();
  rec.best_expr = format_expr(best.tree);
  rec.best_fitness = best.fitness.value;
  rec.pop_size = static_cast<int>(pop_.members.size());
  rec.cache_hits = fitness_.cache().hits();
  rec.elapsed_ms = config_.record_timing ? now_ms() - start_ms_ : 0;
  return rec;
}

SearchLog run_evolution(const EvolveConfig& config, FitnessEvaluator& fitness, const RecordSink& sink) {
  const std::int64_t t0 = config.record_timing ? now_ms() : 0;
  SearchState state(config, fitness);
  SearchLog log;
  log.initial_best = state.population().best().fitness.value;
  for (int i = 0; i < config.iterations; ++i) {
    log.records.push_back(state.step());
    if (sink) sink(log.records.back());
  }
  const Member& best = state.population().best();
  log.summary.best_expr = format_expr(best.tree);
  log.summary.best_fitness = best.fitness.value;
  log.summary.total_cache_hits = fitness.cache().hits();
  log.summary.wall_ms = config.record_timing ? now_ms() - t0 : 0;
  return log;
}

SearchLog random_search(const EvolveConfig& config, FitnessEvaluator& fitness, const RecordSink& sink) {
  if (config.iterations < 0) throw Error("iterations must be >= 0");
  if (config.depth_min < 1 || config.depth_max < config.depth_min) {
    throw Error("depth range must satisfy 1 <= min <= max");
  }
  const std::int64_t t0 = config.record_timing ? now_ms() : 0;
  Rng rng(config.seed);
  SearchLog log;
  log.initial_best = std::numeric_limits<double>::infinity();

  std::optional<Member> best;
  for (int i = 1; i <= config.iterations; ++i) {
    Expr tree = random_tree(rng, config.depth_min, config.depth_max);
    const FitnessScore score = fitness.score(tree);
    Member cand{tree, score, static_cast<std::size_t>(i), {}};
    if (!best || member_fitter(cand, *best)) best = std::move(cand);

    SearchLogRecord rec;
    rec.iter = i;
    rec.offspring_expr = format_expr(tree);
    rec.offspring_fitness = score.value;
    rec.best_expr = format_expr(best->tree);
    rec.best_fitness = best->fitness.value;
    rec.pop_size = 0;
    rec.cache_hits = fitness.cache().hits();
    rec.elapsed_ms = config.record_timing ? now_ms() - t0 : 0;
    log.records.push_back(rec);
    if (sink) sink(rec);
  }
  if (best) {
    log.summary.best_expr = format_expr(best->tree);
    log.summary.best_fitness = best->fitness.value;
  } else {
    log.summary.best_fitness = std::numeric_limits<double>::infinity();
  }
  log.summary.total_cache_hits = fitness.cache().hits();
  log.summary.wall_ms = config.record_timing ? now_ms() - t0 : 0;
  return log;
}

}  // namespace prunerzero
