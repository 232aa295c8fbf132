#pragma once

#include <Eigen/Core>
#include <string>

namespace prunerzero {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixF = MatrixX<float>;
using RowVectorF = RowVectorX<float>;

/// Column-wise l2 norm, accumulated in double.
template <typename Derived>
RowVectorF column_l2_norms(const Eigen::MatrixBase<Derived>& m) {
  RowVectorF out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double v = static_cast<double>(m(i, j));
      acc += v * v;
    }
    out[j] = static_cast<float>(std::sqrt(acc));
  }
  return out;
}

/// One linear layer's statistics: weights W (rows x cols), gradient G of the
/// same shape, calibration inputs Xcal (n_samples x cols, one sample per row).
struct LayerStats {
  std::string name;
  MatrixF W;
  MatrixF G;
  MatrixF Xcal;
  RowVectorF xnorm;  // derived from Xcal, never stored

  LayerStats() = default;
  LayerStats(std::string name_, MatrixF w, MatrixF g, MatrixF xcal)
      : name(std::move(name_)), W(std::move(w)), G(std::move(g)), Xcal(std::move(xcal)) {
    refresh_xnorm();
  }

  void refresh_xnorm() { xnorm = column_l2_norms(Xcal); }

  Eigen::Index rows() const { return W.rows(); }
  Eigen::Index cols() const { return W.cols(); }
  Eigen::Index n_samples() const { return Xcal.rows(); }

  /// Throws FormatError on inconsistent dimensions.
  void validate() const;
};

}  // namespace prunerzero
