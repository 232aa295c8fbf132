#include "prunerzero/pruner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "prunerzero/errors.hpp"

namespace prunerzero {

namespace {

void require_finite(const MatrixF& s) {
  if (!s.allFinite()) throw Error("saliency contains non-finite entries");
}

// Indices 0..count-1 ordered by (value(i), i) ascending.
template <typename Get>
std::vector<Eigen::Index> ascending_order(Eigen::Index count, Get value) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return value(a) < value(b); });
  return idx;
}

}  // namespace

SparsityPattern SparsityPattern::parse_nm(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw Error("N:M pattern must look like '2:4'");
  int n = 0, m = 0;
  const auto nstr = text.substr(0, colon);
  const auto mstr = text.substr(colon + 1);
  const auto r1 = std::from_chars(nstr.data(), nstr.data() + nstr.size(), n);
  const auto r2 = std::from_chars(mstr.data(), mstr.data() + mstr.size(), m);
  if (r1.ec != std::errc{} || r1.ptr != nstr.data() + nstr.size() || r2.ec != std::errc{} ||
      r2.ptr != mstr.data() + mstr.size()) {
    throw Error("N:M pattern must look like '2:4'");
  }
  if (!(0 < n && n < m)) throw Error("N:M pattern requires 0 < N < M");
  return structured(n, m);
}

std::string SparsityPattern::to_string() const {
  if (kind == Kind::Structured) return std::to_string(n) + ":" + std::to_string(m);
  return "unstructured(" + std::to_string(ratio) + ")";
}

Eigen::Index pruned_count(double ratio, Eigen::Index width) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("sparsity ratio must lie in [0, 1]");
  // The slack absorbs representation error in ratios like 0.3 * 10.
  const auto k = static_cast<Eigen::Index>(std::floor(ratio * static_cast<double>(width) + 1e-9));
  return std::clamp<Eigen::Index>(k, 0, width);
}

SparsityMask unstructured_mask(const MatrixF& saliency, double ratio, MaskScope scope) {
  require_finite(saliency);
  SparsityMask mask{MaskMatrix::Constant(saliency.rows(), saliency.cols(), true),
                    SparsityPattern::unstructured(ratio)};
  if (scope == MaskScope::PerLayer) {
    const Eigen::Index total = saliency.size();
    const Eigen::Index k = pruned_count(ratio, total);
    const float* data = saliency.data();  // row-major: flat index = row * cols + col
    const auto order = ascending_order(total, [data](Eigen::Index i) { return data[i]; });
    for (Eigen::Index t = 0; t < k; ++t) mask.keep.data()[order[t]] = false;
    return mask;
  }
  const Eigen::Index k = pruned_count(ratio, saliency.cols());
  for (Eigen::Index r = 0; r < saliency.rows(); ++r) {
    const auto order =
        ascending_order(saliency.cols(), [&](Eigen::Index c) { return saliency(r, c); });
    for (Eigen::Index t = 0; t < k; ++t) mask.keep(r, order[t]) = false;
  }
  return mask;
}

SparsityMask nm_mask(const MatrixF& saliency, int n, int m) {
  if (!(0 < n && n < m)) throw Error("N:M pattern requires 0 < N < M");
  if (saliency.cols() % m != 0) {
    throw Error("N:M pattern needs the column count (" + std::to_string(saliency.cols()) +
                ") to be divisible by M=" + std::to_string(m));
  }
  require_finite(saliency);
  SparsityMask mask{MaskMatrix::Constant(saliency.rows(), saliency.cols(), true),
                    SparsityPattern::structured(n, m)};
  for (Eigen::Index r = 0; r < saliency.rows(); ++r) {
    for (Eigen::Index g = 0; g < saliency.cols(); g += m) {
      const auto order = ascending_order(m, [&](Eigen::Index c) { return saliency(r, g + c); });
      for (int t = 0; t < m - n; ++t) mask.keep(r, g + order[t]) = false;
    }
  }
  return mask;
}

SparsityMask make_mask(const MatrixF& saliency, const SparsityPattern& pattern) {
  if (pattern.kind == SparsityPattern::Kind::Structured) {
    return nm_mask(saliency, pattern.n, pattern.m);
  }
  return unstructured_mask(saliency, pattern.ratio);
}

MatrixF apply_mask(const MatrixF& w, const MaskMatrix& keep) {
  if (w.rows() != keep.rows() || w.cols() != keep.cols()) {
    throw Error("apply_mask: mask shape does not match weights");
  }
  return keep.select(w.array(), 0.0f).matrix();
}

double recon_error(const LayerStats& layer, const MaskMatrix& keep) {
  if (layer.W.rows() != keep.rows() || layer.W.cols() != keep.cols()) {
    throw Error("recon_error: mask shape does not match weights");
  }
  if (layer.Xcal.cols() != layer.W.cols()) {
    throw Error("recon_error: calibration width does not match weights");
  }
  // Xcal W^T - Xcal (M.*W)^T = Xcal ((1-M).*W)^T
  const Eigen::MatrixXd removed = keep.select(0.0, layer.W.cast<double>().array()).matrix();
  const Eigen::MatrixXd x = layer.Xcal.cast<double>();
  return (x * removed.transpose()).squaredNorm();
}

bool mask_satisfies(const MaskMatrix& keep, const SparsityPattern& pattern) {
  if (pattern.kind == SparsityPattern::Kind::Structured) {
    if (keep.cols() % pattern.m != 0) return false;
    for (Eigen::Index r = 0; r < keep.rows(); ++r)
      for (Eigen::Index g = 0; g < keep.cols(); g += pattern.m)
        if (keep.row(r).segment(g, pattern.m).count() != pattern.n) return false;
    return true;
  }
  const Eigen::Index want = keep.cols() - pruned_count(pattern.ratio, keep.cols());
  for (Eigen::Index r = 0; r < keep.rows(); ++r)
    if (keep.row(r).count() != want) return false;
  return true;
}

Expr builtin_metric(std::string_view name) {
  using namespace ex;
  if (name == "magnitude") return un(OpKind::Abs, W());
  if (name == "wanda") return bin(OpKind::Mul, un(OpKind::Abs, W()), X());
  if (name == "gblm1") return bin(OpKind::Mul, un(OpKind::Abs, W()), un(OpKind::Norm1, G()));
  if (name == "gblm2") return bin(OpKind::Mul, un(OpKind::Abs, W()), un(OpKind::Norm2, G()));
  if (name == "prunerzero") {
    return bin(OpKind::Mul,
               un(OpKind::Abs, bin(OpKind::Mul, un(OpKind::Abs, W()), un(OpKind::Abs, W()))),
               un(OpKind::Mms, un(OpKind::Abs, G())));
  }
  std::string valid;
  for (auto n : kBuiltinNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw Error("unknown built-in metric '" + std::string(name) + "' (valid: " + valid + ")");
}

void write_masks(const std::vector<NamedMask>& masks, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write("PZM1", 4);
  io::put<std::uint32_t>(out, 1);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(masks.size()));
  for (const auto& m : masks) {
    if (m.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("layer name too long: " + m.name.substr(0, 32) + "...");
    }
    io::put<std::uint16_t>(out, static_cast<std::uint16_t>(m.name.size()));
    out.write(m.name.data(), static_cast<std::streamsize>(m.name.size()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.keep.rows()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.keep.cols()));
    for (Eigen::Index i = 0; i < m.keep.size(); ++i) {
      out.put(m.keep.data()[i] ? '\x01' : '\x00');
    }
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<NamedMask> read_masks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  io::Reader rd(in, "mask file " + path.string());
  rd.expect_magic("PZM1");
  if (const auto v = rd.get<std::uint32_t>(); v != 1) {
    throw FormatError("mask file: unsupported version " + std::to_string(v));
  }
  const auto n_layers = rd.get<std::uint32_t>();
  std::vector<NamedMask> masks;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    NamedMask m;
    m.name = rd.get_string(rd.get<std::uint16_t>());
    const auto rows = rd.get<std::uint32_t>();
    const auto cols = rd.get<std::uint32_t>();
    const std::uint64_t count = std::uint64_t{rows} * cols;
    if (count > (std::uint64_t{1} << 34)) throw FormatError("mask file: dimension overflow");
    rd.require(count);
    std::string bytes = rd.get_string(static_cast<std::size_t>(count));
    m.keep.resize(rows, cols);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto b = static_cast<unsigned char>(bytes[i]);
      if (b > 1) throw FormatError("mask file: mask byte must be 0 or 1");
      m.keep.data()[i] = b == 1;
    }
    masks.push_back(std::move(m));
  }
  rd.expect_end();
  return masks;
}

}  // namespace prunerzero
