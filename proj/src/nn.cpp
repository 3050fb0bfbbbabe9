#include "piqa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace piqa::nn {

double gelu(double x) noexcept { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_grad(double x) noexcept {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

Linear::Linear(int in, int out)
    : weight(Matrix::Zero(out, in)),
      bias(Vector::Zero(out)),
      weight_grad(Matrix::Zero(out, in)),
      bias_grad(Vector::Zero(out)) {}

void Linear::init_uniform(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, in_dim())));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < weight.cols(); ++j)
    for (Eigen::Index i = 0; i < weight.rows(); ++i) weight(i, j) = dist(rng);
  for (Eigen::Index i = 0; i < bias.size(); ++i) bias(i) = dist(rng);
}

void Linear::zero_grad() {
  weight_grad.setZero();
  bias_grad.setZero();
}

Vector Linear::backward(const Vector& x, const Vector& grad_out) {
  weight_grad.noalias() += grad_out * x.transpose();
  bias_grad += grad_out;
  return weight.transpose() * grad_out;
}

void Linear::append_params(const std::string& prefix, std::vector<ParamView>& out) {
  out.push_back({prefix + ".weight", {weight.data(), static_cast<std::size_t>(weight.size())},
                 {weight_grad.data(), static_cast<std::size_t>(weight_grad.size())}});
  out.push_back({prefix + ".bias", {bias.data(), static_cast<std::size_t>(bias.size())},
                 {bias_grad.data(), static_cast<std::size_t>(bias_grad.size())}});
}

void Adam::step(std::span<const ParamView> params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam: parameter set changed between steps");
  ++steps_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = m_[k];
    auto& v = v_[k];
    const auto& p = params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
    }
  }
}

void Adam::restore(std::int64_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

std::size_t total_size(std::span<const ParamView> params) noexcept {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

void zero_grads(std::span<const ParamView> params) noexcept {
  for (const auto& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

}  // namespace piqa::nn
