#include "cathnav/nn.hpp"

#include <cmath>

#include "cathnav/common.hpp"

namespace cathnav {

namespace {

Matrix swish(const Matrix& z) {
  return z.unaryExpr([](double x) { return x * sigmoid(x); });
}

Matrix swish_grad(const Matrix& z) {
  return z.unaryExpr([](double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
  });
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_gain) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ConfigError("Mlp needs at least an input and an output size");
  for (int s : sizes_) {
    if (s < 1) throw ConfigError("Mlp layer sizes must be >= 1");
  }
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(total));
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1]));
    const double gain = l + 1 == layer_count() ? output_gain : 1.0;
    std::uniform_real_distribution<double> u(-limit, limit);
    auto w = weight(l);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = gain * u(rng);
    }
  }
}

Eigen::Map<const Matrix> Mlp::weight(std::size_t l) const {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const Vector> Mlp::bias(std::size_t l) const {
  return {params_.data() + offsets_[l] + static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l], sizes_[l + 1]};
}
Eigen::Map<Matrix> Mlp::weight(std::size_t l) { return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]}; }
Eigen::Map<Vector> Mlp::bias(std::size_t l) {
  return {params_.data() + offsets_[l] + static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l], sizes_[l + 1]};
}

Matrix Mlp::forward(const Matrix& x, Tape* tape) const {
  if (x.rows() != input_size()) throw ContractViolation("Mlp::forward: input size mismatch");
  if (tape) {
    tape->pre.clear();
    tape->act.clear();
    tape->act.push_back(x);
  }
  Matrix a = x;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Matrix z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 == layer_count()) return z;
    a = swish(z);
    if (tape) {
      tape->pre.push_back(std::move(z));
      tape->act.push_back(a);
    }
  }
  return a;
}

Matrix Mlp::backward(const Tape& tape, const Matrix& grad_out, Vector& grad) const {
  if (grad.size() != params_.size()) throw ContractViolation("Mlp::backward: gradient size mismatch");
  Matrix delta = grad_out;
  for (std::size_t l = layer_count(); l-- > 0;) {
    const Matrix& input = tape.act[l];
    Eigen::Map<Matrix> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
    Eigen::Map<Vector> gb(grad.data() + offsets_[l] + static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l],
                          sizes_[l + 1]);
    gw.noalias() += delta * input.transpose();
    gb += delta.rowwise().sum();
    Matrix back = weight(l).transpose() * delta;
    if (l == 0) return back;
    delta = back.cwiseProduct(swish_grad(tape.pre[l - 1]));
  }
  return delta;
}

void Adam::step(Vector& params, const Vector& grad) {
  if (m.size() != params.size()) {
    m = Vector::Zero(params.size());
    v = Vector::Zero(params.size());
    t = 0;
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace cathnav
