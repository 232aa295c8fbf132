#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "prunerzero/rng.hpp"

namespace prunerzero {

/// Operation vocabulary. The first thirteen are unary, the last four binary.
enum class OpKind : std::uint8_t {
  Sqr,
  Neg,
  Abs,
  Log,
  Exp,
  Sqrt,
  Tanh,
  Pow,
  Skp,
  Mms,
  Zsn,
  Norm2,
  Norm1,
  Add,
  Sub,
  Mul,
  Div,
};

inline constexpr std::size_t kNumOps = 17;
inline constexpr std::size_t kNumUnaryOps = 13;

inline constexpr std::array<OpKind, kNumOps> kAllOps = {
    OpKind::Sqr,  OpKind::Neg, OpKind::Abs,   OpKind::Log,   OpKind::Exp, OpKind::Sqrt,
    OpKind::Tanh, OpKind::Pow, OpKind::Skp,   OpKind::Mms,   OpKind::Zsn, OpKind::Norm2,
    OpKind::Norm1, OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div};

constexpr int arity(OpKind op) { return static_cast<std::size_t>(op) < kNumUnaryOps ? 1 : 2; }
constexpr std::size_t op_index(OpKind op) { return static_cast<std::size_t>(op); }

std::string_view op_token(OpKind op);
std::optional<OpKind> op_from_token(std::string_view token);

/// Inputs a metric can read. X is the column-wise l2 norm of the calibration activations.
enum class Leaf : std::uint8_t { W, G, X };

inline constexpr std::array<Leaf, 3> kAllLeaves = {Leaf::W, Leaf::G, Leaf::X};

std::string_view leaf_token(Leaf leaf);

/// A symbolic pruning metric. Value type: copies are deep.
struct Expr {
  std::variant<Leaf, OpKind> head;
  std::vector<Expr> args;

  static Expr leaf(Leaf l) { return Expr{l, {}}; }
  static Expr unary(OpKind op, Expr a);
  static Expr binary(OpKind op, Expr a, Expr b);

  bool is_leaf() const { return std::holds_alternative<Leaf>(head); }
  Leaf as_leaf() const { return std::get<Leaf>(head); }
  OpKind as_op() const { return std::get<OpKind>(head); }

  friend bool operator==(const Expr&, const Expr&) = default;
};

// Shorthand constructors, mostly for tests and the built-in metric table.
namespace ex {
inline Expr W() { return Expr::leaf(Leaf::W); }
inline Expr G() { return Expr::leaf(Leaf::G); }
inline Expr X() { return Expr::leaf(Leaf::X); }
inline Expr un(OpKind op, Expr a) { return Expr::unary(op, std::move(a)); }
inline Expr bin(OpKind op, Expr a, Expr b) { return Expr::binary(op, std::move(a), std::move(b)); }
}  // namespace ex

/// Parses the parenthesized infix grammar, e.g. "(((W) mms (#)) add (G)) sqrt (#)".
/// Throws ParseError carrying the byte offset of the problem.
Expr parse_expr(std::string_view text);

/// Canonical string; parse_expr(format_expr(t)) == t.
/// A binary node at the root is wrapped in one extra pair of parentheses.
std::string format_expr(const Expr& tree);

enum class Shape : std::uint8_t { Matrix, RowVector };

/// Shape of an arbitrary subtree; never throws.
Shape infer_shape(const Expr& tree);

/// Root must evaluate to a Matrix. Throws ShapeError naming the node path otherwise.
Shape shape_check(const Expr& tree);

bool is_shape_valid(const Expr& tree);

int depth(const Expr& tree);
std::size_t node_count(const Expr& tree);

using OpHistogram = std::array<std::size_t, kNumOps>;
OpHistogram op_histogram(const Expr& tree);

/// Subtree at a DFS preorder index (0 = root).
const Expr& node_at(const Expr& tree, std::size_t index);
Expr& node_at(Expr& tree, std::size_t index);

/// Resample budget used by random_tree before it gives up.
inline constexpr int kRandomTreeRetries = 1000;

/// Shape-valid random tree with depth in [depth_min, depth_max].
///
/// Draw order: the target depth uniformly from the range, then the tree
/// top-down in preorder. Each internal node draws its op uniformly from the
/// 17-entry vocabulary. For a binary node one child (chosen uniformly) is
/// forced to the full remaining depth and the other takes a uniform depth in
/// [1, remaining] (with `full`, both take the full depth). Leaves are uniform
/// over {W, G, X}; an X drawn directly under a unary op is redrawn. Whole
/// trees whose root is not a Matrix are discarded and regenerated.
Expr random_tree(Rng& rng, int depth_min, int depth_max, bool full = false);

}  // namespace prunerzero
