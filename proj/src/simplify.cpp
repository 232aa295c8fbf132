#include "prunerzero/simplify.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "prunerzero/errors.hpp"

namespace prunerzero {

namespace {

bool is_unary_node(const Expr& e) { return !e.is_leaf() && e.args.size() == 1; }

Expr simplify_node(const Expr& e, const OOSCatalog& cat, bool& changed) {
  if (e.is_leaf()) return e;

  Expr node{e.head, {}};
  node.args.reserve(e.args.size());
  for (const Expr& c : e.args) node.args.push_back(simplify_node(c, cat, changed));

  const OpKind op = node.as_op();
  if (cat.removable_ops.contains(op)) {
    changed = true;
    return std::move(node.args[0]);
  }
  if (arity(op) == 1 && is_unary_node(node.args[0])) {
    const OpKind inner = node.args[0].as_op();
    if (cat.opposing_pairs.contains({op, inner})) {
      changed = true;
      return std::move(node.args[0].args[0]);
    }
    if (op == inner && cat.idempotent_ops.contains(op)) {
      changed = true;
      return std::move(node.args[0]);
    }
  }
  if (cat.sub_neg_rewrite && op == OpKind::Sub && is_unary_node(node.args[1]) &&
      node.args[1].as_op() == OpKind::Neg) {
    changed = true;
    return Expr::binary(OpKind::Add, std::move(node.args[0]), std::move(node.args[1].args[0]));
  }
  return node;
}

OpKind op_or_throw(const std::string& token, int line_no) {
  const auto op = op_from_token(token);
  if (!op) {
    throw FormatError("catalog line " + std::to_string(line_no) + ": unknown operation '" +
                      token + "'");
  }
  return *op;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

OOSCatalog OOSCatalog::defaults() {
  OOSCatalog c;
  c.opposing_pairs = {
      {OpKind::Exp, OpKind::Log},  {OpKind::Log, OpKind::Exp},  {OpKind::Sqrt, OpKind::Sqr},
      {OpKind::Sqr, OpKind::Sqrt}, {OpKind::Sqrt, OpKind::Pow}, {OpKind::Pow, OpKind::Sqrt},
      {OpKind::Neg, OpKind::Neg},
  };
  c.idempotent_ops = {OpKind::Abs, OpKind::Mms};
  c.removable_ops = {OpKind::Skp};
  return c;
}

OOSCatalog OOSCatalog::parse(std::string_view text) {
  OOSCatalog c;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream words(line);
    std::string kind;
    if (!(words >> kind)) continue;

    std::string a, b, extra;
    if (kind == "pair") {
      if (!(words >> a >> b)) {
        throw FormatError("catalog line " + std::to_string(line_no) + ": pair needs two operations");
      }
      const OpKind outer = op_or_throw(a, line_no);
      const OpKind inner = op_or_throw(b, line_no);
      if (arity(outer) != 1 || arity(inner) != 1) {
        throw FormatError("catalog line " + std::to_string(line_no) + ": pairs must be unary");
      }
      c.opposing_pairs.insert({outer, inner});
    } else if (kind == "idempotent" || kind == "remove") {
      if (!(words >> a)) {
        throw FormatError("catalog line " + std::to_string(line_no) + ": missing operation");
      }
      const OpKind op = op_or_throw(a, line_no);
      if (arity(op) != 1) {
        throw FormatError("catalog line " + std::to_string(line_no) + ": '" + a + "' is not unary");
      }
      (kind == "remove" ? c.removable_ops : c.idempotent_ops).insert(op);
    } else if (kind == "subneg") {
      if (!(words >> a) || (a != "on" && a != "off")) {
        throw FormatError("catalog line " + std::to_string(line_no) + ": subneg expects on|off");
      }
      c.sub_neg_rewrite = a == "on";
    } else {
      throw FormatError("catalog line " + std::to_string(line_no) + ": unknown directive '" + kind +
                        "'");
    }
    if (words >> extra) {
      throw FormatError("catalog line " + std::to_string(line_no) + ": trailing '" + extra + "'");
    }
  }
  return c;
}

OOSCatalog OOSCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open catalog " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

Expr oos_simplify(const Expr& tree, const OOSCatalog& catalog) {
  Expr current = tree;
  for (;;) {
    bool changed = false;
    Expr next = simplify_node(current, catalog, changed);
    if (!changed) return next;
    current = std::move(next);
  }
}

CanonicalKey canonical_key(const Expr& tree, const OOSCatalog& catalog) {
  return {fnv1a(format_expr(oos_simplify(tree, catalog)))};
}

bool is_equivalent(const Expr& a, const Expr& b, const OOSCatalog& catalog) {
  return canonical_key(a, catalog) == canonical_key(b, catalog);
}

double oos_effective_probability(int depth, int n_trees, Rng& rng, const OOSCatalog& catalog) {
  if (n_trees < 1) throw Error("oos_effective_probability: n_trees must be >= 1");
  int reduced = 0;
  for (int i = 0; i < n_trees; ++i) {
    const Expr t = random_tree(rng, depth, depth);
    if (node_count(oos_simplify(t, catalog)) < node_count(t)) ++reduced;
  }
  return static_cast<double>(reduced) / n_trees;
}

}  // namespace prunerzero
