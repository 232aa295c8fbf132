// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--known-red N[,N...]] [--only N[,N...]]
//
// Exit status is 1 when any criterion fails that is not listed in --known-red.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prunerzero/bundle.hpp"
#include "prunerzero/evaluate.hpp"
#include "prunerzero/evolve.hpp"
#include "prunerzero/fitness.hpp"
#include "prunerzero/pruner.hpp"
#include "prunerzero/simplify.hpp"
#include "support.hpp"

using namespace prunerzero;
using namespace prunerzero::ex;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Logs produced by criteria 6 and 9, checked again by criterion 10.
std::vector<SearchLog> g_logs;
std::vector<TensorBundle> g_bundles;

Outcome corpus() {
  const auto rows = pztest::load_corpus();
  int ok = 0;
  for (const auto& [text, ppl] : rows) {
    try {
      const Expr a = parse_expr(text);
      const Expr b = parse_expr(format_expr(a));
      if (is_shape_valid(a) && a == b && format_expr(b) == format_expr(a)) ++ok;
    } catch (const std::exception&) {
    }
  }
  return {rows.size() == 45 && ok == 45, fmt("%d/%zu expressions round-trip", ok, rows.size())};
}

Outcome builtins() {
  Rng rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto layer = pztest::random_layer(rng, 8, 16);
    const MatrixF& w = layer.W;
    const MatrixF& g = layer.G;
    double gmin = INFINITY, gmax = -INFINITY;
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      gmin = std::min(gmin, std::abs(double(g.data()[k])));
      gmax = std::max(gmax, std::abs(double(g.data()[k])));
    }
    std::vector<MatrixF> got;
    for (const auto name : kBuiltinNames) got.push_back(evaluate(builtin_metric(name), layer).values);
    for (Eigen::Index i = 0; i < 8; ++i) {
      for (Eigen::Index j = 0; j < 16; ++j) {
        double n1 = 0, n2 = 0, xn = 0;
        for (Eigen::Index r = 0; r < 8; ++r) {
          n1 += std::abs(double(g(r, j)));
          n2 += double(g(r, j)) * g(r, j);
        }
        for (Eigen::Index r = 0; r < layer.Xcal.rows(); ++r) xn += double(layer.Xcal(r, j)) * layer.Xcal(r, j);
        const double aw = std::abs(double(w(i, j)));
        const double expect[] = {aw, aw * std::sqrt(xn), aw * n1, aw * std::sqrt(n2),
                                 aw * aw * (std::abs(double(g(i, j))) - gmin) / (gmax - gmin)};
        for (std::size_t k = 0; k < 5; ++k) {
          worst = std::max(worst, std::abs(got[k](i, j) - expect[k]) / std::max(std::abs(expect[k]), 1e-12));
        }
      }
    }
  }
  return {worst < 1e-6, fmt("max relative error %.3g", worst)};
}

std::vector<bool> oracle_keep(const std::vector<float>& v, std::size_t prune) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return v[a] < v[b] || (v[a] == v[b] && a < b);
  });
  std::vector<bool> keep(v.size(), true);
  for (std::size_t i = 0; i < prune; ++i) keep[idx[i]] = false;
  return keep;
}

Outcome masks() {
  Rng rng(3);
  int bad = 0;
  for (int t = 0; t < 100; ++t) {
    const MatrixF s = pztest::normal_matrix(rng, 8, 32);
    for (int k = 0; k <= 9; ++k) {
      const double phi = k / 10.0;
      const auto m = unstructured_mask(s, phi);
      const Eigen::Index expect = 32 - static_cast<Eigen::Index>(std::floor(phi * 32 + 1e-9));
      for (Eigen::Index r = 0; r < 8; ++r) bad += m.keep.row(r).count() != expect;
    }
    for (auto [n, mm] : {std::pair{2, 4}, std::pair{4, 8}}) {
      const auto m = nm_mask(s, n, mm);
      for (Eigen::Index r = 0; r < 8; ++r) {
        for (Eigen::Index c = 0; c < 32; c += mm) bad += m.keep.block(r, c, 1, mm).count() != n;
      }
    }
  }
  int oracle_rows = 0;
  for (int t = 0; t < 300; ++t) {
    const Eigen::Index cols = 1 + static_cast<Eigen::Index>(rng.uniform_index(12));
    MatrixF s = pztest::normal_matrix(rng, 4, cols);
    if (t % 2 == 0) s = (s.array() * 2.0f).round().matrix();
    const double phi = rng.uniform_index(10) / 10.0;
    const auto m = unstructured_mask(s, phi);
    for (Eigen::Index r = 0; r < 4; ++r) {
      const std::vector<float> v(s.row(r).data(), s.row(r).data() + cols);
      const auto want = oracle_keep(v, static_cast<std::size_t>(std::floor(phi * cols + 1e-9)));
      for (Eigen::Index c = 0; c < cols; ++c) bad += m.keep(r, c) != want[static_cast<std::size_t>(c)];
      ++oracle_rows;
    }
  }
  return {bad == 0, fmt("%d violations; %d oracle rows", bad, oracle_rows)};
}

Outcome monotone() {
  Rng rng(4);
  int bad = 0;
  for (int t = 0; t < 100; ++t) {
    MatrixF s = pztest::normal_matrix(rng, 8, 32);
    // Distinct values, spaced widely enough to survive float rounding of the transforms.
    std::vector<float> vals(static_cast<std::size_t>(s.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -2.0f + 0.015f * static_cast<float>(i);
    for (std::size_t i = vals.size() - 1; i > 0; --i) std::swap(vals[i], vals[rng.uniform_index(i + 1)]);
    std::copy(vals.begin(), vals.end(), s.data());
    const MatrixF variants[] = {2.0f * s, (s.array() + 3.0f).matrix(), s.array().exp().matrix()};
    for (const auto& f : variants) {
      bad += !(unstructured_mask(f, 0.5).keep == unstructured_mask(s, 0.5).keep).all();
      bad += !(nm_mask(f, 2, 4).keep == nm_mask(s, 2, 4).keep).all();
    }
  }
  return {bad == 0, fmt("%d of 600 mask comparisons differ", bad)};
}

Outcome oos() {
  const OOSCatalog cat = OOSCatalog::defaults();
  std::vector<Expr> cases;
  for (const auto& [outer, inner] : cat.opposing_pairs) {
    for (Expr base : {W(), G(), bin(OpKind::Mul, W(), G())}) cases.push_back(un(outer, un(inner, base)));
  }
  for (OpKind op : cat.idempotent_ops) cases.push_back(un(op, un(op, bin(OpKind::Add, W(), G()))));
  for (OpKind op : cat.removable_ops) cases.push_back(un(op, G()));
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto layer = pztest::positive_layer(rng, 6, 9);
    for (const Expr& t : cases) {
      const auto a = evaluate<double>(t, layer.W, layer.G, layer.xnorm);
      const auto b = evaluate<double>(oos_simplify(t, cat), layer.W, layer.G, layer.xnorm);
      worst = std::max(worst, ((a.values - b.values).array().abs() / b.values.array().abs()).maxCoeff());
    }
  }
  int broken = 0;
  for (int i = 0; i < 10000; ++i) {
    const Expr t = random_tree(rng, 1, 6);
    const Expr s = oos_simplify(t);
    broken += !(oos_simplify(s) == s) || node_count(s) > node_count(t);
  }
  const double p = oos_effective_probability(3, 1000, rng);
  return {worst < 1e-5 && broken == 0 && p >= 0.10 && p <= 0.50,
          fmt("rewrite error %.3g; %d idempotence/size failures; effective probability %.3f", worst, broken, p)};
}

std::string iters_text(const std::optional<int>& i) { return i ? std::to_string(*i) : "never"; }

Outcome search_dynamics() {
  const Expr target = builtin_metric("prunerzero");
  std::vector<std::optional<int>> evo, rnd;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TensorBundle bundle = gen_mlp(seed, {});
    EvolveConfig c;
    c.seed = seed;
    c.iterations = 300;
    FitnessEvaluator fe(bundle, TargetRecovery{target});
    g_logs.push_back(run_evolution(c, fe));
    evo.push_back(iterations_to_threshold(g_logs.back(), 0.05));
    FitnessEvaluator fr(bundle, TargetRecovery{target});
    g_logs.push_back(random_search(c, fr));
    rnd.push_back(iterations_to_threshold(g_logs.back(), 0.05));
    g_bundles.push_back(bundle);
  }
  const auto within = std::count_if(evo.begin(), evo.end(), [](const auto& i) { return i && *i <= 100; });
  auto median = [](std::vector<std::optional<int>> v) {
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a && (!b || *a < *b); });
    return v[v.size() / 2];
  };
  const auto me = median(evo), mr = median(rnd);
  const bool slower = me && (!mr || *mr > *me);
  std::string detail = "evolution";
  for (const auto& i : evo) detail += " " + iters_text(i);
  detail += "; random";
  for (const auto& i : rnd) detail += " " + iters_text(i);
  detail += fmt("; %d/5 within 100; medians %s vs %s", static_cast<int>(within), iters_text(me).c_str(),
                iters_text(mr).c_str());
  return {within >= 4 && slower, detail};
}

Outcome quality() {
  const auto pattern = SparsityPattern::unstructured(0.5);
  GaussianSpec spec;
  spec.activation_anisotropy = std::vector<float>{8.0f, 1.0f, 0.25f, 3.0f, 0.5f};
  int wanda = 0, pz = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const TensorBundle g = gen_gaussian(seed, spec);
    wanda += fitness_recon(builtin_metric("wanda"), g, pattern).value < 1.0;
    const TensorBundle m = gen_mlp(seed, {});
    pz += fitness_recon(builtin_metric("prunerzero"), m, pattern).value < 1.0;
    if (seed < 5) {
      g_bundles.push_back(g);
      g_bundles.push_back(m);
    }
  }
  return {wanda >= 90 && pz >= 80, fmt("wanda beats magnitude %d/100; prunerzero beats magnitude %d/100", wanda, pz)};
}

Outcome gradients() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) worst = std::max(worst, fd_check(make_mlp(seed, {}), 1e-3));
  return {worst < 1e-4, fmt("max relative error %.3g", worst)};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const TensorBundle bundle = gen_mlp(9, {});
  auto log_text = [&] {
    EvolveConfig c;
    c.seed = 9;
    c.iterations = 100;
    FitnessEvaluator fe(bundle, ReconProxy{});
    g_logs.push_back(run_evolution(c, fe));
    std::ostringstream out;
    write_log_jsonl(g_logs.back(), out);
    return out.str();
  };
  const bool logs_equal = log_text() == log_text();

  const auto dir = std::filesystem::temp_directory_path();
  bool bundles_equal = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto a = dir / fmt("pz_accept_%llu_a.pzb", static_cast<unsigned long long>(seed));
    const auto b = dir / fmt("pz_accept_%llu_b.pzb", static_cast<unsigned long long>(seed));
    write_bundle(gen_mlp(seed, {}), a);
    write_bundle(gen_mlp(seed, {}), b);
    bundles_equal = bundles_equal && read_file(a) == read_file(b);
    GaussianSpec gs;
    write_bundle(gen_gaussian(seed, gs), a);
    write_bundle(gen_gaussian(seed, gs), b);
    bundles_equal = bundles_equal && read_file(a) == read_file(b);
    std::filesystem::remove(a);
    std::filesystem::remove(b);
  }
  return {logs_equal && bundles_equal,
          fmt("logs %s; bundles %s", logs_equal ? "identical" : "differ", bundles_equal ? "identical" : "differ")};
}

Outcome invariants() {
  GaussianSpec spec;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    g_bundles.push_back(gen_gaussian(seed, spec));
    g_bundles.push_back(gen_mlp(seed, {}));
  }
  int nonzero = 0, layers = 0;
  for (const auto& b : g_bundles) {
    for (const auto& l : b.layers) {
      nonzero += recon_error(l, MaskMatrix::Constant(l.W.rows(), l.W.cols(), true)) != 0.0;
      ++layers;
    }
  }
  int regressions = 0;
  std::size_t records = 0;
  for (const auto& log : g_logs) {
    for (std::size_t i = 1; i < log.records.size(); ++i) {
      regressions += log.records[i].best_fitness > log.records[i - 1].best_fitness;
    }
    records += log.records.size();
  }
  return {nonzero == 0 && regressions == 0 && !g_logs.empty(),
          fmt("%d/%d layers with nonzero full-mask error; %d best-fitness increases in %zu logs (%zu records)",
              nonzero, layers, regressions, g_logs.size(), records)};
}

std::set<int> parse_ids(const char* text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.insert(std::stoi(part));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> known_red, only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--known-red") == 0 && i + 1 < argc) {
      known_red = parse_ids(argv[++i]);
    } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = parse_ids(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--known-red N,...] [--only N,...]\n");
      return 2;
    }
  }

  const std::vector<Criterion> criteria = {
      {1, "grammar corpus", 1.0, corpus},
      {2, "built-in metric closed forms", 1.0, builtins},
      {3, "mask exactness", 5.0, masks},
      {4, "monotone invariance", 5.0, monotone},
      {5, "simplification soundness", 30.0, oos},
      {6, "search dynamics", 300.0, search_dynamics},
      {7, "pruning-quality ordering", 120.0, quality},
      {8, "gradient oracle", 30.0, gradients},
      {9, "determinism", 60.0, determinism},
      {10, "full-mask error and monotone logs", 10.0, invariants},
  };

  int unexpected = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = o.pass && in_time;
    std::printf("%s %2d %s: %s; %.2f s (limit %.0f s)%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs, c.limit_s, !pass && known_red.count(c.id) ? " [known red]" : "");
    std::fflush(stdout);
    if (!pass && !known_red.count(c.id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
