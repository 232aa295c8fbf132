#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "prunerzero/layer.hpp"
#include "prunerzero/rng.hpp"

namespace prunerzero {

enum class BundleKind : std::uint8_t { Gaussian = 0, MLP = 1 };

struct BundleMeta {
  std::uint64_t generator_seed = 0;
  BundleKind kind = BundleKind::Gaussian;
  /// Zero unless the caller stamps a time; keeps generated files reproducible.
  std::uint64_t created_unix_s = 0;
};

struct TensorBundle {
  std::vector<LayerStats> layers;
  BundleMeta meta;

  /// Unique names, finite matrices, consistent dimensions. Throws FormatError.
  void validate() const;
};

/// "PZB1" container, little-endian. Reading recomputes xnorm from Xcal.
void write_bundle(const TensorBundle& bundle, const std::filesystem::path& path);
TensorBundle read_bundle(const std::filesystem::path& path);

inline constexpr int kDefaultCalibrationSamples = 128;

struct GaussianSpec {
  int n_layers = 2;
  int rows = 16;
  int cols = 64;
  int n_samples = kDefaultCalibrationSamples;
  /// Per-column scale of Xcal; cycled when shorter than `cols`.
  std::optional<std::vector<float>> activation_anisotropy;
};

TensorBundle gen_gaussian(std::uint64_t seed, const GaussianSpec& spec);

/// Two-layer network y = tanh(x W1^T) W2^T trained against targets Y with mean
/// squared error. Weights and data are kept in double; values are first
/// rounded through float so the stored bundle holds exactly the same numbers.
struct ToyMLP {
  enum class Activation { Tanh, Identity };

  Eigen::MatrixXd W1;  // h x d
  Eigen::MatrixXd W2;  // o x h
  Eigen::MatrixXd X;   // n x d
  Eigen::MatrixXd Y;   // n x o
  Activation activation = Activation::Tanh;

  Eigen::MatrixXd hidden() const;
  Eigen::MatrixXd predict() const;
  /// Mean over samples of the squared error summed over outputs.
  double loss() const;

  struct Gradients {
    Eigen::MatrixXd dW1;
    Eigen::MatrixXd dW2;
  };
  Gradients gradients() const;
};

struct MlpSpec {
  int d = 32;
  int h = 24;
  int o = 8;
  int n_samples = kDefaultCalibrationSamples;
  /// W1 entries ~ N(0, (input_gain^2) / d) before per-unit scaling.
  double input_gain = 0.2;
  /// Log-normal spread of per-hidden-unit W1 row scales.
  double hidden_scale_sigma = 0.7;
  /// Log-normal spread of per-feature input scales.
  double feature_scale_sigma = 1.5;
};

ToyMLP make_mlp(std::uint64_t seed, const MlpSpec& spec);

/// Layers "fc1" (W1, dL/dW1, X) and "fc2" (W2, dL/dW2, tanh(X W1^T)).
TensorBundle bundle_from_mlp(const ToyMLP& mlp, std::uint64_t seed);

TensorBundle gen_mlp(std::uint64_t seed, const MlpSpec& spec);

/// Max relative error between analytic and central-difference gradients,
/// denominator max(|analytic|, 1e-8). Checks every weight when there are at
/// most `max_checked` of them, otherwise a seeded subsample of that many.
double fd_check(const ToyMLP& mlp, double step, std::size_t max_checked = 400,
                std::uint64_t sample_seed = 0);

}  // namespace prunerzero
