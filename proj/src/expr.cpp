#include "prunerzero/expr.hpp"

#include <cassert>

#include "prunerzero/errors.hpp"

namespace prunerzero {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpTokens = {
    "sqr", "neg", "abs", "log",   "exp",   "sqrt", "tanh", "pow", "skp",
    "mms", "zsn", "norm2", "norm1", "add", "sub",  "mul",  "div"};

constexpr std::array<std::string_view, 3> kLeafTokens = {"W", "G", "X"};

bool is_blank(char c) { return c == ' ' || c == '\t'; }

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Expr parse() {
    Expr e = parse_expr();
    skip_blank();
    if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
    return e;
  }

 private:
  // Expr := "(" Expr ")" [Op "(" Arg ")"] | LeafTok
  Expr parse_expr() {
    skip_blank();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
    if (text_[pos_] != '(') return parse_leaf();

    ++pos_;
    Expr operand = parse_expr();
    expect(')');

    skip_blank();
    if (pos_ >= text_.size() || text_[pos_] == ')') return operand;

    const std::size_t op_pos = pos_;
    const std::string_view word = read_word();
    if (word.empty()) throw ParseError("expected operation token", op_pos);
    const auto op = op_from_token(word);
    if (!op) throw ParseError("unknown token '" + std::string(word) + "'", op_pos);

    expect('(');
    skip_blank();
    const std::size_t arg_pos = pos_;
    const bool placeholder = pos_ < text_.size() && text_[pos_] == '#';
    if (placeholder) {
      ++pos_;
      expect(')');
      if (arity(*op) != 1) {
        throw ParseError("binary operation '" + std::string(word) + "' given '#' operand", arg_pos);
      }
      return Expr::unary(*op, std::move(operand));
    }
    Expr rhs = parse_expr();
    expect(')');
    if (arity(*op) != 2) {
      throw ParseError("unary operation '" + std::string(word) + "' given a second operand", arg_pos);
    }
    return Expr::binary(*op, std::move(operand), std::move(rhs));
  }

  Expr parse_leaf() {
    const std::size_t at = pos_;
    const std::string_view word = read_word();
    if (word.empty()) throw ParseError("expected '(' or leaf", at);
    for (Leaf l : kAllLeaves) {
      if (word == leaf_token(l)) return Expr::leaf(l);
    }
    throw ParseError("unknown token '" + std::string(word) + "'", at);
  }

  std::string_view read_word() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (is_blank(c) || c == '(' || c == ')' || c == '#') break;
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  void expect(char c) {
    skip_blank();
    if (pos_ >= text_.size()) {
      throw ParseError(std::string("expected '") + c + "' but reached end of input", pos_);
    }
    if (text_[pos_] != c) throw ParseError(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  void skip_blank() {
    while (pos_ < text_.size() && is_blank(text_[pos_])) ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

void format_into(const Expr& e, std::string& out) {
  if (e.is_leaf()) {
    out += leaf_token(e.as_leaf());
    return;
  }
  out += '(';
  format_into(e.args[0], out);
  out += ") ";
  out += op_token(e.as_op());
  out += " (";
  if (e.args.size() == 2) {
    format_into(e.args[1], out);
  } else {
    out += '#';
  }
  out += ')';
}

Shape shape_of(const Expr& e) {
  if (e.is_leaf()) return e.as_leaf() == Leaf::X ? Shape::RowVector : Shape::Matrix;
  const OpKind op = e.as_op();
  if (arity(op) == 1) {
    if (op == OpKind::Norm1 || op == OpKind::Norm2) return Shape::RowVector;
    return shape_of(e.args[0]);
  }
  const Shape a = shape_of(e.args[0]);
  const Shape b = shape_of(e.args[1]);
  return (a == Shape::Matrix || b == Shape::Matrix) ? Shape::Matrix : Shape::RowVector;
}

// Deepest-first path of the node responsible for a RowVector result.
std::string row_vector_culprit(const Expr& e, const std::string& path) {
  if (e.is_leaf()) return path;
  const OpKind op = e.as_op();
  if (op == OpKind::Norm1 || op == OpKind::Norm2) {
    return path;
  }
  return row_vector_culprit(e.args[0], path + ".0");
}

std::size_t count_nodes(const Expr& e) {
  std::size_t n = 1;
  for (const Expr& c : e.args) n += count_nodes(c);
  return n;
}

template <typename E>
E* find_preorder(E& e, std::size_t& remaining) {
  if (remaining == 0) return &e;
  --remaining;
  for (auto& c : e.args) {
    if (E* hit = find_preorder(c, remaining)) return hit;
  }
  return nullptr;
}

Leaf draw_leaf(Rng& rng, bool under_unary) {
  for (;;) {
    const Leaf l = kAllLeaves[rng.uniform_index(kAllLeaves.size())];
    if (!(under_unary && l == Leaf::X)) return l;
  }
}

Expr grow(Rng& rng, int target_depth, bool full, bool under_unary) {
  if (target_depth <= 1) return Expr::leaf(draw_leaf(rng, under_unary));
  const OpKind op = kAllOps[rng.uniform_index(kNumOps)];
  if (arity(op) == 1) return Expr::unary(op, grow(rng, target_depth - 1, full, true));

  const int rest = target_depth - 1;
  const bool left_is_deep = rng.uniform_index(2) == 0;
  const int other = full ? rest : static_cast<int>(rng.uniform_int(1, rest));
  Expr lhs = grow(rng, left_is_deep ? rest : other, full, false);
  Expr rhs = grow(rng, left_is_deep ? other : rest, full, false);
  return Expr::binary(op, std::move(lhs), std::move(rhs));
}

}  // namespace

std::string_view op_token(OpKind op) { return kOpTokens[op_index(op)]; }

std::optional<OpKind> op_from_token(std::string_view token) {
  for (std::size_t i = 0; i < kNumOps; ++i) {
    if (kOpTokens[i] == token) return kAllOps[i];
  }
  return std::nullopt;
}

std::string_view leaf_token(Leaf leaf) { return kLeafTokens[static_cast<std::size_t>(leaf)]; }

Expr Expr::unary(OpKind op, Expr a) {
  assert(arity(op) == 1);
  Expr e{op, {}};
  e.args.push_back(std::move(a));
  return e;
}

Expr Expr::binary(OpKind op, Expr a, Expr b) {
  assert(arity(op) == 2);
  Expr e{op, {}};
  e.args.reserve(2);
  e.args.push_back(std::move(a));
  e.args.push_back(std::move(b));
  return e;
}

Expr parse_expr(std::string_view text) { return Parser(text).parse(); }

std::string format_expr(const Expr& tree) {
  std::string out;
  const bool wrap = !tree.is_leaf() && tree.args.size() == 2;
  if (wrap) out += '(';
  format_into(tree, out);
  if (wrap) out += ')';
  return out;
}

Shape infer_shape(const Expr& tree) { return shape_of(tree); }

Shape shape_check(const Expr& tree) {
  const Shape s = shape_of(tree);
  if (s != Shape::Matrix) {
    throw ShapeError("metric evaluates to a row vector, expected a matrix shaped like W",
                     row_vector_culprit(tree, "root"));
  }
  return s;
}

bool is_shape_valid(const Expr& tree) { return shape_of(tree) == Shape::Matrix; }

int depth(const Expr& tree) {
  int d = 0;
  for (const Expr& c : tree.args) d = std::max(d, depth(c));
  return d + 1;
}

std::size_t node_count(const Expr& tree) { return count_nodes(tree); }

OpHistogram op_histogram(const Expr& tree) {
  OpHistogram h{};
  auto visit = [&h](auto&& self, const Expr& e) -> void {
    if (!e.is_leaf()) ++h[op_index(e.as_op())];
    for (const Expr& c : e.args) self(self, c);
  };
  visit(visit, tree);
  return h;
}

const Expr& node_at(const Expr& tree, std::size_t index) {
  const Expr* hit = find_preorder(tree, index);
  if (!hit) throw Error("node index out of range");
  return *hit;
}

Expr& node_at(Expr& tree, std::size_t index) {
  Expr* hit = find_preorder(tree, index);
  if (!hit) throw Error("node index out of range");
  return *hit;
}

Expr random_tree(Rng& rng, int depth_min, int depth_max, bool full) {
  if (depth_min < 1 || depth_max < depth_min) throw Error("invalid depth range");
  for (int attempt = 0; attempt < kRandomTreeRetries; ++attempt) {
    const int d = static_cast<int>(rng.uniform_int(depth_min, depth_max));
    Expr e = grow(rng, d, full, false);
    if (is_shape_valid(e)) return e;
  }
  throw Error("random_tree: exhausted retries without a matrix-shaped tree");
}

}  // namespace prunerzero
