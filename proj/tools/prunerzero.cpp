// Command-line front end: data generation, metric evaluation, pruning,
// search, simplification and analysis.
//
// Exit codes: 0 success, 1 runtime/domain error, 2 usage error.

#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prunerzero/analysis.hpp"
#include "prunerzero/bundle.hpp"
#include "prunerzero/evolve.hpp"
#include "prunerzero/fitness.hpp"
#include "prunerzero/pruner.hpp"
#include "prunerzero/simplify.hpp"

namespace pz = prunerzero;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  bool quiet = false;
  unsigned threads = 1;
};

std::string fmt_score(double v) {
  if (!std::isfinite(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

// Metric selection shared by eval / prune.
struct MetricFlags {
  std::string expr;
  std::string builtin;

  void add(CLI::App* cmd) {
    auto* e = cmd->add_option("--expr", expr, "Metric as an expression string");
    auto* b = cmd->add_option("--builtin", builtin, "Built-in metric name")
                  ->check(CLI::IsMember(std::vector<std::string>(std::begin(pz::kBuiltinNames),
                                                                 std::end(pz::kBuiltinNames))));
    e->excludes(b);
    cmd->callback([e, b] {
      if (e->count() + b->count() != 1) throw UsageError("exactly one of --expr or --builtin is required");
    });
  }

  pz::Expr tree() const { return builtin.empty() ? pz::parse_expr(expr) : pz::builtin_metric(builtin); }
};

struct PatternFlags {
  double sparsity = 0.5;
  std::string nm;

  void add(CLI::App* cmd) {
    auto* s = cmd->add_option("--sparsity", sparsity, "Unstructured sparsity ratio in [0,1]")
                  ->check(CLI::Range(0.0, 1.0));
    auto* n = cmd->add_option("--nm", nm, "N:M structured pattern, e.g. 2:4");
    s->excludes(n);
  }

  pz::SparsityPattern pattern() const {
    if (nm.empty()) return pz::SparsityPattern::unstructured(sparsity);
    try {
      return pz::SparsityPattern::parse_nm(nm);
    } catch (const pz::Error& e) {
      throw UsageError(e.what());
    }
  }
};

std::vector<float> parse_csv_floats(const std::string& text) {
  std::vector<float> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stof(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--anisotropy expects comma-separated numbers, got '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--anisotropy is empty");
  return out;
}

void progress(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Genetic-programming search for symbolic pruning metrics"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress on stderr");
  app.add_option("--threads", g.threads, "Worker threads for per-layer scoring")
      ->envname("PRUNER_ZERO_THREADS")
      ->check(CLI::PositiveNumber);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a tensor bundle");
  gen->set_help_flag("--help", "Print this help message and exit");
  std::string gen_kind = "gaussian";
  std::string gen_out, gen_aniso;
  bool gen_stamp = false;
  pz::GaussianSpec gspec;
  pz::MlpSpec mspec;
  int samples = pz::kDefaultCalibrationSamples;
  gen->add_option("--kind", gen_kind, "gaussian | mlp")->check(CLI::IsMember({"gaussian", "mlp"}))->capture_default_str();
  gen->add_option("--layers", gspec.n_layers, "Gaussian: layer count")->check(CLI::NonNegativeNumber)->capture_default_str();
  gen->add_option("--rows", gspec.rows, "Gaussian: rows per layer")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--cols", gspec.cols, "Gaussian: columns per layer")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--anisotropy", gen_aniso, "Gaussian: comma-separated per-column activation scales");
  gen->add_option("--d", mspec.d, "MLP: input width")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--h", mspec.h, "MLP: hidden width")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--o", mspec.o, "MLP: output width")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--samples", samples, "Calibration samples")->check(CLI::Range(1, 1 << 20))->capture_default_str();
  gen->add_flag("--stamp", gen_stamp, "Record the creation time (makes output non-reproducible)");
  gen->add_option("--out", gen_out, "Output bundle path")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Score a metric with the reconstruction proxy");
  std::string eval_bundle;
  bool eval_verbose = false;
  MetricFlags eval_metric;
  PatternFlags eval_pattern;
  eval->add_option("--bundle", eval_bundle, "Bundle path")->required();
  eval_metric.add(eval);
  eval_pattern.add(eval);
  eval->add_flag("--verbose", eval_verbose, "Print per-layer reconstruction errors");

  // prune
  auto* prune = app.add_subcommand("prune", "Write sparsity masks for every layer");
  std::string prune_bundle, prune_out;
  MetricFlags prune_metric;
  PatternFlags prune_pattern;
  prune->add_option("--bundle", prune_bundle, "Bundle path")->required();
  prune_metric.add(prune);
  prune_pattern.add(prune);
  prune->add_option("--out", prune_out, "Output mask file (PZM1)")->required();

  // evolve / random
  struct SearchFlags {
    std::string bundle, fitness = "recon", target_builtin = "prunerzero", target_expr, cmd, log, catalog;
    int timeout_s = 600;
    std::string depth = "3:5";
    bool timing = false;
    PatternFlags pattern;
    pz::EvolveConfig cfg;
  };
  SearchFlags evo_flags, rnd_flags;
  auto add_search = [](CLI::App* cmd, SearchFlags& f, bool gp) {
    cmd->add_option("--bundle", f.bundle, "Bundle path (not needed for external fitness)");
    cmd->add_option("--fitness", f.fitness, "recon | target | external")
        ->check(CLI::IsMember({"recon", "target", "external"}))
        ->capture_default_str();
    cmd->add_option("--target-builtin", f.target_builtin, "Target metric for target fitness")
        ->check(CLI::IsMember(std::vector<std::string>(std::begin(pz::kBuiltinNames), std::end(pz::kBuiltinNames))))
        ->capture_default_str();
    cmd->add_option("--target-expr", f.target_expr, "Target metric as an expression string");
    cmd->add_option("--cmd", f.cmd, "External evaluator command template containing {expr}");
    cmd->add_option("--timeout", f.timeout_s, "External evaluator timeout in seconds")->check(CLI::PositiveNumber)->capture_default_str();
    f.pattern.add(cmd);
    cmd->add_option("--iters", f.cfg.iterations, "Iterations")->check(CLI::NonNegativeNumber)->capture_default_str();
    cmd->add_option("--depth", f.depth, "Depth range min:max")->capture_default_str();
    if (gp) {
      cmd->add_option("--pop", f.cfg.population_size, "Population size")->check(CLI::PositiveNumber)->capture_default_str();
      cmd->add_option("--topk", f.cfg.top_k, "Top-k candidate set size")->check(CLI::PositiveNumber)->capture_default_str();
      cmd->add_option("--mut", f.cfg.mutation_prob, "Mutation probability")->check(CLI::Range(0.0, 1.0))->capture_default_str();
      cmd->add_option("--sample-ratio", f.cfg.sample_ratio, "Tournament sample ratio (not fixed by the method; 0.5 default)")
          ->check(CLI::Range(0.0, 1.0))
          ->capture_default_str();
      cmd->add_option("--retries", f.cfg.resample_retry_limit, "Resample retry limit")->check(CLI::PositiveNumber)->capture_default_str();
    }
    cmd->add_option("--catalog", f.catalog, "Simplification catalog file");
    cmd->add_option("--log", f.log, "JSON-lines search log output")->required();
    cmd->add_flag("--timing", f.timing, "Record wall-clock times in the log");
  };
  auto* evolve = app.add_subcommand("evolve", "Genetic-programming search");
  add_search(evolve, evo_flags, true);
  auto* random = app.add_subcommand("random", "Random-search baseline");
  add_search(random, rnd_flags, false);

  // simplify
  auto* simplify = app.add_subcommand("simplify", "Apply opposing-operation simplification");
  std::string simp_expr, simp_catalog;
  simplify->add_option("--expr", simp_expr, "Expression string")->required();
  simplify->add_option("--catalog", simp_catalog, "Catalog file overriding the defaults");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Operation-frequency correlation matrix");
  std::string an_log, an_out;
  double an_threshold = 0.0;
  bool an_spearman = false;
  analyze->add_option("--log", an_log, "Search log (JSON lines)")->required();
  analyze->add_option("--threshold", an_threshold, "Keep candidates with fitness below this")->required();
  analyze->add_option("--out", an_out, "Output CSV path")->required();
  analyze->add_flag("--spearman", an_spearman, "Use Spearman instead of Pearson");

  // builtin
  auto* builtin = app.add_subcommand("builtin", "Print a built-in metric's canonical expression");
  std::string bi_name;
  builtin->add_option("--name", bi_name, "Metric name")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(pz::kBuiltinNames), std::end(pz::kBuiltinNames))));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsageError;
  }

  try {
    const pz::FitnessOptions fopts{pz::SafeMathConfig{}, g.threads};

    if (*gen) {
      pz::TensorBundle b;
      if (gen_kind == "gaussian") {
        gspec.n_samples = samples;
        if (!gen_aniso.empty()) gspec.activation_anisotropy = parse_csv_floats(gen_aniso);
        b = pz::gen_gaussian(g.seed, gspec);
      } else {
        mspec.n_samples = samples;
        b = pz::gen_mlp(g.seed, mspec);
      }
      if (gen_stamp) b.meta.created_unix_s = static_cast<std::uint64_t>(std::time(nullptr));
      pz::write_bundle(b, gen_out);
      progress(g, "wrote " + std::to_string(b.layers.size()) + " layers to " + gen_out);
      return 0;
    }

    if (*eval) {
      const pz::SparsityPattern pattern = eval_pattern.pattern();
      const pz::Expr tree = eval_metric.tree();
      pz::shape_check(tree);
      const pz::TensorBundle b = pz::read_bundle(eval_bundle);
      const pz::FitnessScore s = pz::fitness_recon(tree, b, pattern, fopts);
      std::cout << "score " << fmt_score(s.value) << '\n';
      if (eval_verbose) {
        const pz::Expr mag = pz::builtin_metric("magnitude");
        std::cout << "layer,recon_error,magnitude_error\n";
        for (const auto& layer : b.layers) {
          const auto sal = pz::evaluate(tree, layer);
          const std::string err =
              sal.finite ? fmt_score(pz::recon_error(layer, pz::make_mask(sal.values, pattern).keep)) : "inf";
          const auto base = pz::evaluate(mag, layer);
          std::cout << layer.name << ',' << err << ','
                    << fmt_score(pz::recon_error(layer, pz::make_mask(base.values, pattern).keep)) << '\n';
        }
      }
      return 0;
    }

    if (*prune) {
      const pz::SparsityPattern pattern = prune_pattern.pattern();
      const pz::Expr tree = prune_metric.tree();
      pz::shape_check(tree);
      const pz::TensorBundle b = pz::read_bundle(prune_bundle);
      std::vector<pz::NamedMask> masks;
      std::int64_t kept = 0, total = 0;
      for (const auto& layer : b.layers) {
        const auto sal = pz::evaluate(tree, layer);
        if (!sal.finite) throw pz::Error("metric is non-finite on layer '" + layer.name + "'");
        auto mask = pz::make_mask(sal.values, pattern);
        kept += mask.kept();
        total += mask.keep.size();
        masks.push_back({layer.name, std::move(mask.keep)});
      }
      pz::write_masks(masks, prune_out);
      const double sparsity = total == 0 ? 0.0 : 1.0 - static_cast<double>(kept) / static_cast<double>(total);
      std::cout << "sparsity " << fmt_score(sparsity) << '\n';
      return 0;
    }

    if (*evolve || *random) {
      SearchFlags& f = *evolve ? evo_flags : rnd_flags;
      f.cfg.seed = g.seed;
      f.cfg.record_timing = f.timing;
      {
        const auto colon = f.depth.find(':');
        try {
          if (colon == std::string::npos) throw std::invalid_argument(f.depth);
          f.cfg.depth_min = std::stoi(f.depth.substr(0, colon));
          f.cfg.depth_max = std::stoi(f.depth.substr(colon + 1));
        } catch (const std::exception&) {
          throw UsageError("--depth expects min:max, e.g. 3:5");
        }
      }
      pz::FitnessMode mode;
      if (f.fitness == "recon") {
        mode = pz::ReconProxy{f.pattern.pattern(), false};
      } else if (f.fitness == "target") {
        mode = pz::TargetRecovery{f.target_expr.empty() ? pz::builtin_metric(f.target_builtin)
                                                        : pz::parse_expr(f.target_expr)};
      } else {
        if (f.cmd.find("{expr}") == std::string::npos) throw UsageError("--cmd must contain {expr}");
        mode = pz::ExternalEvaluator{f.cmd, std::chrono::seconds(f.timeout_s)};
      }
      if (f.fitness != "external" && f.bundle.empty()) throw UsageError("--bundle is required for this fitness");
      if (*evolve) {
        try {
          f.cfg.validate();
        } catch (const pz::Error& e) {
          throw UsageError(e.what());
        }
      } else if (f.cfg.depth_min < 1 || f.cfg.depth_max < f.cfg.depth_min) {
        throw UsageError("--depth must satisfy 1 <= min <= max");
      }

      const pz::OOSCatalog catalog = f.catalog.empty() ? pz::OOSCatalog::defaults() : pz::OOSCatalog::load(f.catalog);
      const pz::TensorBundle b = f.bundle.empty() ? pz::TensorBundle{} : pz::read_bundle(f.bundle);
      pz::FitnessEvaluator fitness(b, mode, fopts, catalog);

      std::ofstream log_out(f.log, std::ios::binary);
      if (!log_out) throw pz::Error("cannot open log " + f.log);
      const int every = std::max(1, f.cfg.iterations / 20);
      auto sink = [&](const pz::SearchLogRecord& r) {
        if (!g.quiet && r.iter % every == 0) {
          std::cerr << "iter " << r.iter << " best " << fmt_score(r.best_fitness) << "  " << r.best_expr << '\n';
        }
      };
      const pz::SearchLog log = *evolve ? pz::run_evolution(f.cfg, fitness, sink) : pz::random_search(f.cfg, fitness, sink);
      pz::write_log_jsonl(log, log_out);
      if (!log_out) throw pz::Error("write failed: " + f.log);
      std::cout << log.summary.best_expr << '\n' << "fitness " << fmt_score(log.summary.best_fitness) << '\n';
      return 0;
    }

    if (*simplify) {
      const pz::OOSCatalog catalog = simp_catalog.empty() ? pz::OOSCatalog::defaults() : pz::OOSCatalog::load(simp_catalog);
      const pz::Expr tree = pz::parse_expr(simp_expr);
      const pz::Expr out = pz::oos_simplify(tree, catalog);
      std::cout << pz::format_expr(out) << '\n';
      if (out == tree) std::cerr << "no-op: nothing to simplify\n";
      return 0;
    }

    if (*analyze) {
      const auto records = pz::collect_candidates(an_log, an_threshold);
      const auto m = pz::correlation_matrix(
          records, an_spearman ? pz::CorrelationKind::Spearman : pz::CorrelationKind::Pearson);
      std::ofstream out(an_out, std::ios::binary);
      if (!out) throw pz::Error("cannot open " + an_out);
      pz::write_correlation_csv(m, out);
      progress(g, std::to_string(records.size()) + " candidates below " + std::to_string(an_threshold));
      for (const auto& c : pz::strongest_fitness_correlations(m)) {
        std::cout << c.op << ' ' << c.value << '\n';
      }
      return 0;
    }

    if (*builtin) {
      std::cout << pz::format_expr(pz::builtin_metric(bi_name)) << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
