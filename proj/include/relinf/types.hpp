#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace relinf {

// 64-bit scalars throughout the math core.
using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct SolverError : Error {
  using Error::Error;
};
struct StaleCacheError : Error {
  using Error::Error;
};
struct TrainError : Error {
  TrainError(const std::string& msg, double grad_norm)
      : Error(msg), final_grad_norm(grad_norm) {}
  double final_grad_norm;
};

/// Labeled classification data: one example per row.
struct Dataset {
  Matrix features;   // n x d
  IntVector labels;  // n entries, each in [0, c)
  int c = 0;

  Index n() const { return features.rows(); }
  Index d() const { return features.cols(); }
};

/// Throws DataError if labels are out of range, n == 0, or features are
/// not finite.
void validate(const Dataset& data);

enum class ModelFamily { SoftmaxRegression, Mlp1Hidden };

struct ModelSpec {
  ModelFamily family = ModelFamily::SoftmaxRegression;
  int d = 0;
  int c = 0;
  int hidden = 0;  // Mlp1Hidden only
  bool bias = true;
  double l2 = 0.0;  // ridge coefficient on the training objective

  Index param_count() const;
};

void validate(const ModelSpec& spec);

/// Flattened model parameters plus the spec they belong to.
///
/// Layout (column-major blocks):
///   softmax-regression: [vec(W) | b]            W is c x d
///   mlp-1hidden:        [vec(W1) | b1 | vec(W2) | b2]
/// Bias segments are omitted when spec.bias is false. The hidden
/// activation is tanh.
struct ParamVector {
  Vector values;
  ModelSpec spec;
};

enum class Optimizer { GradientDescent, QuasiNewton };

struct TrainConfig {
  Optimizer optimizer = Optimizer::QuasiNewton;
  int max_iters = 500;
  double grad_tol = 1e-8;
  std::uint64_t seed = 0;
  // Per-example weights; empty means uniform 1/n. The CLI validates that
  // user-supplied weights sum to 1; leave-one-out retraining passes
  // weights that sum to (n-1)/n by construction.
  std::optional<Vector> weights;
};

using Sha256Digest = std::array<std::uint8_t, 32>;

/// Per-example loss gradients at fixed parameters, row i = grad(theta, z_i).
struct GradCache {
  Matrix grads;  // n x p
  Sha256Digest params_hash{};
};

inline constexpr Index kDenseCap = 5000;  // guard for P x P materialization

/// Damping used for Hessian inversion in the reference experiments.
inline double default_damping(ModelFamily family) {
  return family == ModelFamily::SoftmaxRegression ? 1e-3 : 1e-1;
}

}  // namespace relinf
