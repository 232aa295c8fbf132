#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "prunerzero/expr.hpp"
#include "prunerzero/layer.hpp"

namespace prunerzero {

using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SparsityPattern {
  enum class Kind { Unstructured, Structured };
  Kind kind = Kind::Unstructured;
  double ratio = 0.5;  // Unstructured: fraction pruned
  int n = 2;           // Structured: kept per group
  int m = 4;           // Structured: group width

  static SparsityPattern unstructured(double ratio) { return {Kind::Unstructured, ratio, 0, 0}; }
  static SparsityPattern structured(int n, int m) { return {Kind::Structured, 0.0, n, m}; }

  /// Accepts "N:M" for structured patterns.
  static SparsityPattern parse_nm(std::string_view text);
  std::string to_string() const;
};

/// Which entries compete with each other in unstructured pruning.
enum class MaskScope { PerRow, PerLayer };

struct SparsityMask {
  MaskMatrix keep;
  SparsityPattern pattern;

  Eigen::Index kept() const { return keep.count(); }
};

/// Number of entries pruned from a group of `width` at `ratio`: floor(ratio * width).
Eigen::Index pruned_count(double ratio, Eigen::Index width);

/// Prunes the floor(ratio*cols) smallest entries of every row. Ties prune the
/// lower column index first. Throws Error on non-finite saliency.
SparsityMask unstructured_mask(const MatrixF& saliency, double ratio,
                               MaskScope scope = MaskScope::PerRow);

/// Keeps the n largest entries of every aligned group of m columns.
SparsityMask nm_mask(const MatrixF& saliency, int n, int m);

SparsityMask make_mask(const MatrixF& saliency, const SparsityPattern& pattern);

MatrixF apply_mask(const MatrixF& w, const MaskMatrix& keep);

/// ||Xcal W^T - Xcal (keep .* W)^T||_F^2, accumulated in double.
double recon_error(const LayerStats& layer, const MaskMatrix& keep);

/// True iff every row/group satisfies the pattern's cardinality constraint.
bool mask_satisfies(const MaskMatrix& keep, const SparsityPattern& pattern);

inline constexpr std::string_view kBuiltinNames[] = {"magnitude", "wanda", "gblm1", "gblm2",
                                                     "prunerzero"};

/// Closed-form metrics as trees. Throws Error for unknown names.
Expr builtin_metric(std::string_view name);

struct NamedMask {
  std::string name;
  MaskMatrix keep;
};

/// "PZM1" mask container, little-endian.
void write_masks(const std::vector<NamedMask>& masks, const std::filesystem::path& path);
std::vector<NamedMask> read_masks(const std::filesystem::path& path);

}  // namespace prunerzero
