#include <doctest.h>

#include <vector>

#include "prunerzero/errors.hpp"
#include "prunerzero/evaluate.hpp"
#include "prunerzero/simplify.hpp"
#include "support.hpp"

using namespace prunerzero;
using namespace prunerzero::ex;

TEST_CASE("simplification examples") {
  CHECK(oos_simplify(un(OpKind::Exp, un(OpKind::Log, W()))) == W());
  CHECK(oos_simplify(un(OpKind::Sqrt, un(OpKind::Sqr, un(OpKind::Abs, G())))) == un(OpKind::Abs, G()));
  CHECK(oos_simplify(un(OpKind::Skp, un(OpKind::Skp, W()))) == W());
  const Expr plain = bin(OpKind::Mul, un(OpKind::Abs, W()), G());
  CHECK(oos_simplify(plain) == plain);
  CHECK(oos_simplify(un(OpKind::Neg, un(OpKind::Neg, G()))) == G());
  CHECK(oos_simplify(un(OpKind::Abs, un(OpKind::Abs, un(OpKind::Abs, W())))) == un(OpKind::Abs, W()));
  CHECK(oos_simplify(un(OpKind::Sqrt, un(OpKind::Pow, W()))) == W());
  CHECK(oos_simplify(un(OpKind::Pow, un(OpKind::Sqrt, W()))) == W());
  // Cascades: removing the inner pair exposes an outer one.
  CHECK(oos_simplify(un(OpKind::Exp, un(OpKind::Sqrt, un(OpKind::Sqr, un(OpKind::Log, W()))))) == W());
  // Pairs inside binary operands.
  CHECK(oos_simplify(bin(OpKind::Add, un(OpKind::Log, un(OpKind::Exp, W())), un(OpKind::Skp, X()))) ==
        bin(OpKind::Add, W(), X()));
}

TEST_CASE("sub/neg rewrite is off by default and available by flag") {
  const Expr t = bin(OpKind::Sub, W(), un(OpKind::Neg, G()));
  CHECK(oos_simplify(t) == t);
  OOSCatalog c = OOSCatalog::defaults();
  c.sub_neg_rewrite = true;
  CHECK(oos_simplify(t, c) == bin(OpKind::Add, W(), G()));
}

TEST_CASE("equivalence examples") {
  CHECK(is_equivalent(un(OpKind::Exp, un(OpKind::Log, W())), W()));
  CHECK_FALSE(is_equivalent(bin(OpKind::Mul, W(), G()), bin(OpKind::Mul, G(), W())));
  CHECK(is_equivalent(un(OpKind::Sqr, un(OpKind::Sqrt, W())), un(OpKind::Sqrt, un(OpKind::Sqr, W()))));
  CHECK(canonical_key(un(OpKind::Skp, W())) == canonical_key(W()));
}

TEST_CASE("catalog file parsing") {
  const auto c = OOSCatalog::parse(
      "# custom\n"
      "pair exp log\n"
      "idempotent tanh   # trailing comment\n"
      "remove skp\n"
      "subneg on\n");
  CHECK(c.opposing_pairs.size() == 1);
  CHECK(c.idempotent_ops.count(OpKind::Tanh) == 1);
  CHECK(c.sub_neg_rewrite);
  CHECK(oos_simplify(un(OpKind::Log, un(OpKind::Exp, W())), c) == un(OpKind::Log, un(OpKind::Exp, W())));
  CHECK(oos_simplify(un(OpKind::Tanh, un(OpKind::Tanh, W())), c) == un(OpKind::Tanh, W()));
  CHECK_THROWS_AS(OOSCatalog::parse("pair exp\n"), FormatError);
  CHECK_THROWS_AS(OOSCatalog::parse("pair exp add\n"), FormatError);
  CHECK_THROWS_AS(OOSCatalog::parse("frobnicate abs\n"), FormatError);
  CHECK(OOSCatalog::parse("").opposing_pairs.empty());
}

TEST_CASE("every default rewrite preserves values on positive inputs") {
  const OOSCatalog cat = OOSCatalog::defaults();
  std::vector<Expr> cases;
  for (const auto& [outer, inner] : cat.opposing_pairs) {
    for (Expr base : {W(), G(), bin(OpKind::Mul, W(), G())}) cases.push_back(un(outer, un(inner, base)));
  }
  for (OpKind op : cat.idempotent_ops) cases.push_back(un(op, un(op, bin(OpKind::Add, W(), G()))));
  for (OpKind op : cat.removable_ops) cases.push_back(un(op, G()));
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto layer = pztest::positive_layer(rng, 6, 9);
    for (const Expr& t : cases) {
      const auto a = evaluate<double>(t, layer.W, layer.G, layer.xnorm);
      const auto b = evaluate<double>(oos_simplify(t, cat), layer.W, layer.G, layer.xnorm);
      CAPTURE(format_expr(t));
      CHECK(((a.values - b.values).array().abs() <= 1e-5 * b.values.array().abs()).all());
    }
  }
}

TEST_CASE("simplification properties over random trees") {
  Rng rng(77);
  std::vector<Expr> sample;
  for (int i = 0; i < 10000; ++i) {
    const Expr t = random_tree(rng, 1, 6);
    const Expr s = oos_simplify(t);
    REQUIRE(oos_simplify(s) == s);
    REQUIRE(node_count(s) <= node_count(t));
    REQUIRE(is_shape_valid(s));
    REQUIRE(infer_shape(s) == infer_shape(t));
    if (i < 60) sample.push_back(t);
  }
  // Equivalence relation over a small corpus that includes known-equal pairs.
  sample.push_back(un(OpKind::Exp, un(OpKind::Log, sample[0])));
  sample.push_back(un(OpKind::Skp, sample[0]));
  for (const auto& a : sample) {
    CHECK(is_equivalent(a, a));
    for (const auto& b : sample) {
      CHECK(is_equivalent(a, b) == is_equivalent(b, a));
      if (!is_equivalent(a, b)) continue;
      for (const auto& c : sample) {
        if (is_equivalent(b, c)) CHECK(is_equivalent(a, c));
      }
    }
  }
}

TEST_CASE("effective probability") {
  Rng rng(1);
  CHECK(oos_effective_probability(1, 200, rng) == 0.0);
  const double p3 = oos_effective_probability(3, 1000, rng);
  CHECK(p3 >= 0.10);
  CHECK(p3 <= 0.50);
  const double p5 = oos_effective_probability(5, 1000, rng);
  CHECK(p5 >= 0.10);
  CHECK(p5 <= 0.80);
  CHECK_THROWS_AS(oos_effective_probability(3, 0, rng), Error);
}
