#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "prunerzero/errors.hpp"
#include "prunerzero/expr.hpp"
#include "prunerzero/layer.hpp"

namespace prunerzero {

struct SafeMathConfig {
  double epsilon = 1e-8;
  /// mms/zsn statistics per row instead of over the whole tensor.
  bool per_row_scaling = false;
};

template <typename Scalar>
struct Saliency {
  MatrixX<Scalar> values;
  bool finite = true;
};

namespace detail {

// A RowVector is stored as a 1 x cols matrix and broadcast down the rows on use.
template <typename Scalar>
struct Value {
  MatrixX<Scalar> data;
  Shape shape;
};

template <typename Scalar>
MatrixX<Scalar> broadcast(const Value<Scalar>& v, Eigen::Index rows) {
  if (v.shape == Shape::Matrix) return v.data;
  return v.data.replicate(rows, 1);
}

template <typename Scalar>
void min_max_scale(Eigen::Ref<MatrixX<Scalar>> block, double eps) {
  const double lo = static_cast<double>(block.minCoeff());
  const double hi = static_cast<double>(block.maxCoeff());
  const double range = hi - lo;
  if (!(range >= eps)) {
    if (std::isfinite(range)) block.setZero();
    else block.setConstant(std::numeric_limits<Scalar>::quiet_NaN());
    return;
  }
  block = ((block.template cast<double>().array() - lo) / range).template cast<Scalar>().matrix();
}

template <typename Scalar>
void z_score_scale(Eigen::Ref<MatrixX<Scalar>> block, double eps) {
  const auto n = static_cast<double>(block.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < block.rows(); ++i)
    for (Eigen::Index j = 0; j < block.cols(); ++j) sum += static_cast<double>(block(i, j));
  const double mean = sum / n;
  double sq = 0.0;
  for (Eigen::Index i = 0; i < block.rows(); ++i)
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      const double d = static_cast<double>(block(i, j)) - mean;
      sq += d * d;
    }
  const double sd = std::sqrt(sq / n);
  if (!(sd >= eps)) {
    if (std::isfinite(sd)) block.setZero();
    else block.setConstant(std::numeric_limits<Scalar>::quiet_NaN());
    return;
  }
  block = ((block.template cast<double>().array() - mean) / sd).template cast<Scalar>().matrix();
}

template <typename Scalar>
void scale_in_place(MatrixX<Scalar>& m, OpKind op, const SafeMathConfig& cfg) {
  auto apply = [&](Eigen::Ref<MatrixX<Scalar>> block) {
    if (op == OpKind::Mms) min_max_scale<Scalar>(block, cfg.epsilon);
    else z_score_scale<Scalar>(block, cfg.epsilon);
  };
  if (!cfg.per_row_scaling) {
    apply(m);
    return;
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    MatrixX<Scalar> row = m.row(i);
    apply(row);
    m.row(i) = row;
  }
}

template <typename Scalar>
Value<Scalar> column_norm(const Value<Scalar>& in, bool l1) {
  const auto cols = in.data.cols();
  MatrixX<Scalar> out(1, cols);
  if (in.shape == Shape::Matrix) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < in.data.rows(); ++i) {
        const double v = static_cast<double>(in.data(i, j));
        acc += l1 ? std::abs(v) : v * v;
      }
      out(0, j) = static_cast<Scalar>(l1 ? acc : std::sqrt(acc));
    }
  } else {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double v = static_cast<double>(in.data(0, j));
      acc += l1 ? std::abs(v) : v * v;
    }
    out.setConstant(static_cast<Scalar>(l1 ? acc : std::sqrt(acc)));
  }
  return {std::move(out), Shape::RowVector};
}

template <typename Scalar>
Value<Scalar> apply_unary(OpKind op, Value<Scalar> v, const SafeMathConfig& cfg) {
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  auto a = v.data.array();
  switch (op) {
    case OpKind::Sqr:
    case OpKind::Pow:
      v.data = a.square().matrix();
      break;
    case OpKind::Neg:
      v.data = (-a).matrix();
      break;
    case OpKind::Abs:
      v.data = a.abs().matrix();
      break;
    case OpKind::Log:
      v.data = (a.abs() + eps).log().matrix();
      break;
    case OpKind::Exp:
      v.data = a.exp().matrix();
      break;
    case OpKind::Sqrt:
      v.data = a.abs().sqrt().matrix();
      break;
    case OpKind::Tanh:
      v.data = a.tanh().matrix();
      break;
    case OpKind::Skp:
      break;
    case OpKind::Mms:
    case OpKind::Zsn:
      scale_in_place(v.data, op, cfg);
      break;
    case OpKind::Norm2:
      return column_norm(v, false);
    case OpKind::Norm1:
      return column_norm(v, true);
    default:
      throw Error("apply_unary: not a unary operation");
  }
  return v;
}

template <typename Scalar>
Value<Scalar> apply_binary(OpKind op, const Value<Scalar>& lhs, const Value<Scalar>& rhs,
                           const SafeMathConfig& cfg) {
  const Shape out_shape =
      (lhs.shape == Shape::Matrix || rhs.shape == Shape::Matrix) ? Shape::Matrix : Shape::RowVector;
  const Eigen::Index rows =
      out_shape == Shape::Matrix ? std::max(lhs.data.rows(), rhs.data.rows()) : 1;
  const MatrixX<Scalar> a = broadcast(lhs, rows);
  const MatrixX<Scalar> b = broadcast(rhs, rows);
  const auto eps = static_cast<Scalar>(cfg.epsilon);

  MatrixX<Scalar> out;
  switch (op) {
    case OpKind::Add:
      out = a + b;
      break;
    case OpKind::Sub:
      out = a - b;
      break;
    case OpKind::Mul:
      out = a.cwiseProduct(b);
      break;
    case OpKind::Div:
      out = a.array() / b.array().unaryExpr([eps](Scalar x) {
                          const Scalar mag = std::max(std::abs(x), eps);
                          return x < Scalar(0) ? -mag : mag;
                        });
      break;
    default:
      throw Error("apply_binary: not a binary operation");
  }
  return {std::move(out), out_shape};
}

template <typename Scalar>
Value<Scalar> eval_node(const Expr& e, const MatrixX<Scalar>& w, const MatrixX<Scalar>& g,
                        const MatrixX<Scalar>& xnorm, const SafeMathConfig& cfg) {
  if (e.is_leaf()) {
    switch (e.as_leaf()) {
      case Leaf::W:
        return {w, Shape::Matrix};
      case Leaf::G:
        return {g, Shape::Matrix};
      case Leaf::X:
        return {xnorm, Shape::RowVector};
    }
  }
  const OpKind op = e.as_op();
  if (arity(op) == 1) return apply_unary(op, eval_node(e.args[0], w, g, xnorm, cfg), cfg);
  return apply_binary(op, eval_node(e.args[0], w, g, xnorm, cfg),
                      eval_node(e.args[1], w, g, xnorm, cfg), cfg);
}

}  // namespace detail

/// Element-wise saliency of `tree` over one layer. Non-finite results are
/// reported through `finite`, not thrown.
template <typename Scalar, typename DerivedW, typename DerivedG, typename DerivedX>
Saliency<Scalar> evaluate(const Expr& tree, const Eigen::MatrixBase<DerivedW>& w,
                          const Eigen::MatrixBase<DerivedG>& g,
                          const Eigen::MatrixBase<DerivedX>& xnorm,
                          const SafeMathConfig& cfg = {}) {
  shape_check(tree);
  if (g.rows() != w.rows() || g.cols() != w.cols() || xnorm.size() != w.cols()) {
    throw ShapeError("layer statistics have inconsistent dimensions", "root");
  }
  const MatrixX<Scalar> ws = w.template cast<Scalar>();
  const MatrixX<Scalar> gs = g.template cast<Scalar>();
  MatrixX<Scalar> xs(1, xnorm.size());
  for (Eigen::Index j = 0; j < xnorm.size(); ++j) xs(0, j) = static_cast<Scalar>(xnorm(j));

  detail::Value<Scalar> v = detail::eval_node<Scalar>(tree, ws, gs, xs, cfg);
  Saliency<Scalar> out;
  out.values = std::move(v.data);
  out.finite = out.values.allFinite();
  return out;
}

inline Saliency<float> evaluate(const Expr& tree, const LayerStats& layer,
                                const SafeMathConfig& cfg = {}) {
  return evaluate<float>(tree, layer.W, layer.G, layer.xnorm, cfg);
}

}  // namespace prunerzero
