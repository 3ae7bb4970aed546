#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace cathnav {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Fully connected network with Swish hidden layers and a linear output.
/// Inputs and outputs are column-batched: one column per sample.
/// Parameters live in one flat vector; per layer the weight matrix
/// (out x in, column-major) is followed by the bias.
class Mlp {
 public:
  struct Tape {
    std::vector<Matrix> pre;  // hidden pre-activations
    std::vector<Matrix> act;  // act[0] is the input, act[l] the input of layer l
  };

  Mlp() = default;
  /// Glorot-uniform weights, zero biases; the output layer is scaled by
  /// `output_gain`.
  Mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_gain = 1.0);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  std::size_t layer_count() const { return sizes_.size() - 1; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<const Matrix> weight(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Matrix> weight(std::size_t layer);
  Eigen::Map<Vector> bias(std::size_t layer);

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const;

  /// Given dL/d(output), adds dL/d(params) into `grad` and returns
  /// dL/d(input).
  Matrix backward(const Tape& tape, const Matrix& grad_out, Vector& grad) const;

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;  // start of each layer's weights
  Vector params_;
};

/// Adaptive moment estimation with bias correction.
struct Adam {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vector m;
  Vector v;
  long t = 0;

  void step(Vector& params, const Vector& grad);
};

}  // namespace cathnav
