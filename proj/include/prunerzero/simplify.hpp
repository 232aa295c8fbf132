#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string_view>
#include <utility>

#include "prunerzero/expr.hpp"

namespace prunerzero {

/// Rewrite rules for opposing-operation simplification.
struct OOSCatalog {
  /// (outer, inner) unary pairs that cancel: outer(inner(x)) -> x.
  std::set<std::pair<OpKind, OpKind>> opposing_pairs;
  /// op(op(x)) -> op(x).
  std::set<OpKind> idempotent_ops;
  /// op(x) -> x.
  std::set<OpKind> removable_ops;
  /// sub(a, neg(b)) -> add(a, b). Off by default: it rewrites an op instead of removing a pair.
  bool sub_neg_rewrite = false;

  static OOSCatalog defaults();

  /// Line format: `pair <outer> <inner>`, `idempotent <op>`, `remove <op>`,
  /// `subneg on|off`; `#` starts a comment. Throws FormatError.
  static OOSCatalog parse(std::string_view text);
  static OOSCatalog load(const std::filesystem::path& path);
};

Expr oos_simplify(const Expr& tree, const OOSCatalog& catalog = OOSCatalog::defaults());

/// 64-bit FNV-1a digest of the canonical string of the simplified tree.
struct CanonicalKey {
  std::uint64_t digest = 0;
  friend auto operator<=>(const CanonicalKey&, const CanonicalKey&) = default;
};

CanonicalKey canonical_key(const Expr& tree, const OOSCatalog& catalog = OOSCatalog::defaults());

/// Structural equality after simplification. No commutativity or other algebra.
bool is_equivalent(const Expr& a, const Expr& b, const OOSCatalog& catalog = OOSCatalog::defaults());

/// Fraction of `n_trees` random trees of exactly `depth` that simplification shrinks.
double oos_effective_probability(int depth, int n_trees, Rng& rng,
                                 const OOSCatalog& catalog = OOSCatalog::defaults());

}  // namespace prunerzero

template <>
struct std::hash<prunerzero::CanonicalKey> {
  std::size_t operator()(const prunerzero::CanonicalKey& k) const noexcept {
    return static_cast<std::size_t>(k.digest);
  }
};
