#include "prunerzero/fitness.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <numeric>
#include <thread>

namespace prunerzero {

namespace {

constexpr double kBaselineFloor = 1e-8;

// Runs fn(i) for i in [0, count) and returns results in index order.
template <typename Fn>
auto map_layers(std::size_t count, unsigned threads, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out(count);
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  const unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(count));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Eigen::VectorXd flatten(const MatrixF& m) {
  Eigen::VectorXd v(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) v[i] = static_cast<double>(m.data()[i]);
  return v;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = a.mean();
  const double mb = b.mean();
  const Eigen::ArrayXd da = a.array() - ma;
  const Eigen::ArrayXd db = b.array() - mb;
  const double saa = (da * da).sum();
  const double sbb = (db * db).sum();
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp((da * db).sum() / std::sqrt(saa * sbb), -1.0, 1.0);
}

FitnessScore target_score(const Expr& tree, const TensorBundle& bundle,
                          const std::vector<Eigen::VectorXd>& target_ranks,
                          const FitnessOptions& opts) {
  const auto per_layer = map_layers(bundle.layers.size(), opts.threads, [&](std::size_t i) {
    const Saliency<float> s = evaluate(tree, bundle.layers[i], opts.safety);
    if (!s.finite) return std::numeric_limits<double>::quiet_NaN();
    const Eigen::VectorXd ranks = average_ranks(flatten(s.values));
    return 1.0 - pearson(ranks, target_ranks[i]);
  });
  double sum = 0.0;
  for (double v : per_layer) {
    if (!std::isfinite(v)) return FitnessScore::sentinel();
    sum += v;
  }
  return FitnessScore::of(sum / static_cast<double>(per_layer.size()));
}

std::vector<Eigen::VectorXd> rank_target(const Expr& target, const TensorBundle& bundle,
                                         const FitnessOptions& opts) {
  shape_check(target);
  std::vector<Eigen::VectorXd> ranks;
  for (const auto& layer : bundle.layers) {
    const Saliency<float> s = evaluate(target, layer, opts.safety);
    if (!s.finite) throw Error("target metric is non-finite on layer '" + layer.name + "'");
    ranks.push_back(average_ranks(flatten(s.values)));
  }
  return ranks;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

FitnessScore external_failure(const std::string& why) {
  std::cerr << "warning: external evaluator: " << why << "; scoring as +inf\n";
  return FitnessScore::sentinel();
}

}  // namespace

FitnessScore FitnessScore::of(double v) {
  if (!std::isfinite(v)) return sentinel();
  return {v, true};
}

bool fitter(const FitnessScore& a, std::size_t nodes_a, std::size_t order_a,
            const FitnessScore& b, std::size_t nodes_b, std::size_t order_b) {
  if (a.value != b.value) return a.value < b.value;
  if (nodes_a != nodes_b) return nodes_a < nodes_b;
  return order_a < order_b;
}

Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const Eigen::Index n = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&v](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) throw Error("spearman: length mismatch");
  return pearson(average_ranks(a), average_ranks(b));
}

FitnessScore fitness_recon(const Expr& tree, const TensorBundle& bundle,
                           const SparsityPattern& pattern, const FitnessOptions& opts,
                           bool unnormalized) {
  if (bundle.layers.empty()) throw Error("fitness: bundle has no layers");
  shape_check(tree);
  const Expr magnitude = builtin_metric("magnitude");

  struct LayerResult {
    double error = 0.0;
    double baseline = 0.0;
    bool finite = true;
  };
  const auto results = map_layers(bundle.layers.size(), opts.threads, [&](std::size_t i) {
    const LayerStats& layer = bundle.layers[i];
    LayerResult r;
    const Saliency<float> s = evaluate(tree, layer, opts.safety);
    if (!s.finite) {
      r.finite = false;
      return r;
    }
    r.error = recon_error(layer, make_mask(s.values, pattern).keep);
    if (!unnormalized) {
      const Saliency<float> base = evaluate(magnitude, layer, opts.safety);
      r.baseline = recon_error(layer, make_mask(base.values, pattern).keep);
    }
    return r;
  });

  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& r : results) {
    if (!r.finite) return FitnessScore::sentinel();
    if (unnormalized) {
      total += r.error;
      ++counted;
    } else if (r.baseline >= kBaselineFloor) {
      total += r.error / r.baseline;
      ++counted;
    }
  }
  if (unnormalized) return FitnessScore::of(total);
  if (counted == 0) return FitnessScore::of(1.0);
  return FitnessScore::of(total / static_cast<double>(counted));
}

FitnessScore fitness_target(const Expr& tree, const TensorBundle& bundle, const Expr& target,
                            const FitnessOptions& opts) {
  if (bundle.layers.empty()) throw Error("fitness: bundle has no layers");
  shape_check(tree);
  return target_score(tree, bundle, rank_target(target, bundle, opts), opts);
}

FitnessScore fitness_external(const Expr& tree, const ExternalEvaluator& evaluator) {
  const std::string expr = format_expr(tree);
  std::string command = evaluator.command_template;
  const auto slot = command.find("{expr}");
  if (slot == std::string::npos) return external_failure("command template lacks {expr}");
  command.replace(slot, 6, shell_quote(expr));

  int to_child[2];
  int from_child[2];
  if (pipe(to_child) != 0) return external_failure("pipe failed");
  if (pipe(from_child) != 0) {
    close(to_child[0]);
    close(to_child[1]);
    return external_failure("pipe failed");
  }

  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) close(fd);
    return external_failure("fork failed");
  }
  if (pid == 0) {
    setpgid(0, 0);
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) close(fd);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);

  // A child that never reads stdin must not kill us with SIGPIPE.
  struct sigaction ignore {}, previous{};
  ignore.sa_handler = SIG_IGN;
  sigaction(SIGPIPE, &ignore, &previous);
  const std::string line = expr + "\n";
  [[maybe_unused]] const auto written = write(to_child[1], line.data(), line.size());
  close(to_child[1]);
  sigaction(SIGPIPE, &previous, nullptr);

  std::string output;
  bool timed_out = false;
  const auto deadline = std::chrono::steady_clock::now() + evaluator.timeout;
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    pollfd p{from_child[0], POLLIN, 0};
    const int ready = poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1000)));
    if (ready < 0 && errno == EINTR) continue;
    if (ready < 0) break;
    if (ready == 0) continue;
    const ssize_t got = read(from_child[0], buf, sizeof buf);
    if (got <= 0) break;
    output.append(buf, static_cast<std::size_t>(got));
  }
  close(from_child[0]);
  if (timed_out) kill(-pid, SIGKILL);

  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (timed_out) return external_failure("timed out after " + std::to_string(evaluator.timeout.count()) + " s");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    return external_failure("child exited abnormally (status " + std::to_string(status) + ")");
  }

  const auto first = output.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return external_failure("no output");
  const auto last = output.find_last_not_of(" \t\r\n");
  const std::string token = output.substr(first, last - first + 1);
  char* end = nullptr;
  const double value = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size()) return external_failure("unparseable output '" + token + "'");
  if (!std::isfinite(value)) return external_failure("non-finite score '" + token + "'");
  return FitnessScore::of(value);
}

std::optional<FitnessScore> FitnessCache::find(const CanonicalKey& key) {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  return it->second;
}

void FitnessCache::insert(const CanonicalKey& key, const FitnessScore& score) {
  std::lock_guard lock(mu_);
  entries_.insert_or_assign(key, score);
}

std::size_t FitnessCache::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}

std::size_t FitnessCache::misses() const {
  std::lock_guard lock(mu_);
  return misses_;
}

std::size_t FitnessCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

FitnessEvaluator::FitnessEvaluator(const TensorBundle& bundle, FitnessMode mode,
                                   FitnessOptions opts, OOSCatalog catalog)
    : bundle_(bundle), mode_(std::move(mode)), opts_(opts), catalog_(std::move(catalog)) {
  if (!std::holds_alternative<ExternalEvaluator>(mode_) && bundle_.layers.empty()) {
    throw Error("fitness: bundle has no layers");
  }
  if (const auto* t = std::get_if<TargetRecovery>(&mode_)) {
    target_ranks_ = rank_target(t->target, bundle_, opts_);
  }
  if (const auto* e = std::get_if<ExternalEvaluator>(&mode_)) {
    if (e->command_template.find("{expr}") == std::string::npos) {
      throw Error("external fitness: command template must contain {expr}");
    }
  }
}

FitnessScore FitnessEvaluator::score(const Expr& tree) {
  const Expr simplified = oos_simplify(tree, catalog_);
  const CanonicalKey key{canonical_key(simplified, catalog_)};
  if (auto hit = cache_.find(key)) return *hit;
  const FitnessScore s = evaluate_uncached(simplified);
  cache_.insert(key, s);
  return s;
}

FitnessScore FitnessEvaluator::evaluate_uncached(const Expr& simplified) {
  if (!is_shape_valid(simplified)) return FitnessScore::sentinel();
  return std::visit(
      [&](const auto& mode) -> FitnessScore {
        using M = std::decay_t<decltype(mode)>;
        if constexpr (std::is_same_v<M, ReconProxy>) {
          return fitness_recon(simplified, bundle_, mode.pattern, opts_, mode.unnormalized);
        } else if constexpr (std::is_same_v<M, TargetRecovery>) {
          return target_score(simplified, bundle_, target_ranks_, opts_);
        } else {
          return fitness_external(simplified, mode);
        }
      },
      mode_);
}

}  // namespace prunerzero
