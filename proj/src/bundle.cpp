#include "prunerzero/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "binary_io.hpp"
#include "prunerzero/errors.hpp"

namespace prunerzero {

namespace {

constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

MatrixF gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<float>(scale * rng.normal());
  return m;
}

void put_matrix(std::ostream& out, const MatrixF& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) io::put<float>(out, m.data()[i]);
}

MatrixF get_matrix(io::Reader& rd, std::uint32_t rows, std::uint32_t cols) {
  rd.require(std::uint64_t{rows} * cols * sizeof(float));
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rd.get<float>();
  return m;
}

}  // namespace

void LayerStats::validate() const {
  if (W.rows() < 1 || W.cols() < 1 || Xcal.rows() < 1) {
    throw FormatError("layer '" + name + "': dimensions must be >= 1");
  }
  if (G.rows() != W.rows() || G.cols() != W.cols()) {
    throw FormatError("layer '" + name + "': gradient shape differs from weights");
  }
  if (Xcal.cols() != W.cols()) {
    throw FormatError("layer '" + name + "': calibration width differs from weight columns");
  }
  if (xnorm.size() != W.cols()) throw FormatError("layer '" + name + "': stale activation norms");
  if (!W.allFinite() || !G.allFinite() || !Xcal.allFinite()) {
    throw FormatError("layer '" + name + "': non-finite values");
  }
}

void TensorBundle::validate() const {
  std::set<std::string> names;
  for (const auto& l : layers) {
    if (!names.insert(l.name).second) throw FormatError("duplicate layer name '" + l.name + "'");
    l.validate();
  }
}

void write_bundle(const TensorBundle& bundle, const std::filesystem::path& path) {
  bundle.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write("PZB1", 4);
  io::put<std::uint32_t>(out, 1);
  io::put<std::uint64_t>(out, bundle.meta.generator_seed);
  io::put<std::uint8_t>(out, static_cast<std::uint8_t>(bundle.meta.kind));
  io::put<std::uint64_t>(out, bundle.meta.created_unix_s);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.layers.size()));
  for (const auto& l : bundle.layers) {
    if (l.name.size() > 0xFFFF) throw FormatError("layer name too long");
    io::put<std::uint16_t>(out, static_cast<std::uint16_t>(l.name.size()));
    out.write(l.name.data(), static_cast<std::streamsize>(l.name.size()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(l.rows()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(l.cols()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(l.n_samples()));
    put_matrix(out, l.W);
    put_matrix(out, l.G);
    put_matrix(out, l.Xcal);
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

TensorBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open bundle " + path.string());
  io::Reader rd(in, "bundle " + path.string());
  rd.expect_magic("PZB1");
  if (const auto v = rd.get<std::uint32_t>(); v != 1) {
    throw FormatError("bundle: unsupported version " + std::to_string(v) + " (expected 1)");
  }
  TensorBundle b;
  b.meta.generator_seed = rd.get<std::uint64_t>();
  const auto kind = rd.get<std::uint8_t>();
  if (kind > 1) throw FormatError("bundle: unknown kind " + std::to_string(kind));
  b.meta.kind = static_cast<BundleKind>(kind);
  b.meta.created_unix_s = rd.get<std::uint64_t>();
  const auto n_layers = rd.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    std::string name = rd.get_string(rd.get<std::uint16_t>());
    const auto rows = rd.get<std::uint32_t>();
    const auto cols = rd.get<std::uint32_t>();
    const auto samples = rd.get<std::uint32_t>();
    if (std::uint64_t{rows} * cols >= kMaxElements || std::uint64_t{samples} * cols >= kMaxElements) {
      throw FormatError("bundle: dimension overflow in layer '" + name + "'");
    }
    MatrixF w = get_matrix(rd, rows, cols);
    MatrixF g = get_matrix(rd, rows, cols);
    MatrixF x = get_matrix(rd, samples, cols);
    b.layers.emplace_back(std::move(name), std::move(w), std::move(g), std::move(x));
  }
  rd.expect_end();
  b.validate();
  return b;
}

TensorBundle gen_gaussian(std::uint64_t seed, const GaussianSpec& spec) {
  if (spec.n_layers < 0 || spec.rows < 1 || spec.cols < 1 || spec.n_samples < 1) {
    throw Error("gen_gaussian: dimensions must be >= 1");
  }
  if (spec.activation_anisotropy && spec.activation_anisotropy->empty()) {
    throw Error("gen_gaussian: anisotropy vector is empty");
  }
  Rng rng(seed);
  TensorBundle b;
  b.meta = {seed, BundleKind::Gaussian, 0};
  for (int l = 0; l < spec.n_layers; ++l) {
    MatrixF w = gaussian_matrix(rng, spec.rows, spec.cols);
    MatrixF g = gaussian_matrix(rng, spec.rows, spec.cols);
    MatrixF x = gaussian_matrix(rng, spec.n_samples, spec.cols);
    if (spec.activation_anisotropy) {
      const auto& s = *spec.activation_anisotropy;
      for (Eigen::Index j = 0; j < x.cols(); ++j) x.col(j) *= s[static_cast<std::size_t>(j) % s.size()];
    }
    b.layers.emplace_back("layer" + std::to_string(l), std::move(w), std::move(g), std::move(x));
  }
  return b;
}

Eigen::MatrixXd ToyMLP::hidden() const {
  Eigen::MatrixXd pre = X * W1.transpose();
  if (activation == Activation::Tanh) return pre.array().tanh().matrix();
  return pre;
}

Eigen::MatrixXd ToyMLP::predict() const { return hidden() * W2.transpose(); }

double ToyMLP::loss() const {
  return (predict() - Y).squaredNorm() / static_cast<double>(X.rows());
}

ToyMLP::Gradients ToyMLP::gradients() const {
  const double n = static_cast<double>(X.rows());
  const Eigen::MatrixXd h = hidden();
  const Eigen::MatrixXd resid = h * W2.transpose() - Y;       // n x o
  const Eigen::MatrixXd d_out = (2.0 / n) * resid;            // dL/dpred
  Eigen::MatrixXd d_hidden = d_out * W2;                      // n x h
  if (activation == Activation::Tanh) d_hidden.array() *= 1.0 - h.array().square();
  return {d_hidden.transpose() * X, d_out.transpose() * h};
}

ToyMLP make_mlp(std::uint64_t seed, const MlpSpec& spec) {
  if (spec.d < 1 || spec.h < 1 || spec.o < 1 || spec.n_samples < 1) {
    throw Error("gen_mlp: dimensions must be >= 1");
  }
  if (!(spec.input_gain > 0.0) || !(spec.hidden_scale_sigma >= 0.0) || !(spec.feature_scale_sigma >= 0.0) ||
      !std::isfinite(spec.input_gain + spec.hidden_scale_sigma + spec.feature_scale_sigma)) {
    throw Error("gen_mlp: scale parameters must be finite, gain positive, spreads non-negative");
  }
  Rng rng(seed);
  auto draw = [&rng](Eigen::Index r, Eigen::Index c, double scale) {
    return gaussian_matrix(rng, r, c, scale).cast<double>().eval();
  };
  ToyMLP mlp;
  // Small first-layer weights keep tanh near its linear range; per-unit
  // log-normal scales then give the hidden activations uneven energy.
  mlp.W1 = draw(spec.h, spec.d, spec.input_gain / std::sqrt(spec.d));
  for (int i = 0; i < spec.h; ++i) {
    mlp.W1.row(i) *= static_cast<float>(std::exp(spec.hidden_scale_sigma * rng.normal()));
  }
  mlp.W1 = mlp.W1.cast<float>().cast<double>();
  mlp.W2 = draw(spec.o, spec.h, 1.0 / std::sqrt(spec.h));

  // Input features carry log-normal scales so activation energy is uneven across columns.
  Eigen::RowVectorXd feature_scale(spec.d);
  for (int j = 0; j < spec.d; ++j) feature_scale[j] = static_cast<float>(std::exp(spec.feature_scale_sigma * rng.normal()));
  mlp.X = draw(spec.n_samples, spec.d, 1.0);
  mlp.X = (mlp.X.array().rowwise() * feature_scale.array()).cast<float>().cast<double>().matrix();

  mlp.Y = draw(spec.n_samples, spec.o, 1.0);
  return mlp;
}

TensorBundle bundle_from_mlp(const ToyMLP& mlp, std::uint64_t seed) {
  const auto grads = mlp.gradients();
  TensorBundle b;
  b.meta = {seed, BundleKind::MLP, 0};
  b.layers.emplace_back("fc1", mlp.W1.cast<float>(), grads.dW1.cast<float>(), mlp.X.cast<float>());
  b.layers.emplace_back("fc2", mlp.W2.cast<float>(), grads.dW2.cast<float>(),
                        mlp.hidden().cast<float>());
  return b;
}

TensorBundle gen_mlp(std::uint64_t seed, const MlpSpec& spec) {
  return bundle_from_mlp(make_mlp(seed, spec), seed);
}

double fd_check(const ToyMLP& mlp, double step, std::size_t max_checked, std::uint64_t sample_seed) {
  if (!(step > 0.0)) throw Error("fd_check: step must be positive");
  const auto analytic = mlp.gradients();

  struct Slot {
    int layer;
    Eigen::Index index;
  };
  std::vector<Slot> slots;
  for (Eigen::Index i = 0; i < mlp.W1.size(); ++i) slots.push_back({0, i});
  for (Eigen::Index i = 0; i < mlp.W2.size(); ++i) slots.push_back({1, i});
  if (slots.size() > max_checked) {
    Rng rng(sample_seed);
    // Partial Fisher-Yates: the first max_checked entries become the sample.
    for (std::size_t i = 0; i < max_checked; ++i) {
      const auto j = i + rng.uniform_index(slots.size() - i);
      std::swap(slots[i], slots[j]);
    }
    slots.resize(max_checked);
  }

  ToyMLP probe = mlp;
  double worst = 0.0;
  for (const Slot& s : slots) {
    double& w = (s.layer == 0 ? probe.W1 : probe.W2).data()[s.index];
    const double saved = w;
    auto loss_at = [&](double offset) {
      w = saved + offset;
      return probe.loss();
    };
    // Five-point central stencil, truncation error O(step^4).
    const double numeric =
        (8.0 * (loss_at(step) - loss_at(-step)) - (loss_at(2.0 * step) - loss_at(-2.0 * step))) / (12.0 * step);
    w = saved;
    const double exact = (s.layer == 0 ? analytic.dW1 : analytic.dW2).data()[s.index];
    worst = std::max(worst, std::abs(numeric - exact) / std::max(std::abs(exact), 1e-8));
  }
  return worst;
}

}  // namespace prunerzero
