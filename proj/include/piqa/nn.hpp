#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace piqa::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Non-owning view of one parameter tensor and its gradient accumulator.
struct ParamView {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
};

double gelu(double x) noexcept;
double gelu_grad(double x) noexcept;

// y = W x + b
struct Linear {
  Matrix weight;  // out x in
  Vector bias;
  Matrix weight_grad;
  Vector bias_grad;

  Linear() = default;
  Linear(int in, int out);

  int in_dim() const noexcept { return static_cast<int>(weight.cols()); }
  int out_dim() const noexcept { return static_cast<int>(weight.rows()); }

  // Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  void init_uniform(std::uint64_t seed);
  void zero_grad();

  Vector forward(const Vector& x) const { return weight * x + bias; }
  // Accumulates parameter gradients; returns dL/dx.
  Vector backward(const Vector& x, const Vector& grad_out);

  void append_params(const std::string& prefix, std::vector<ParamView>& out);
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments are kept per parameter in registration order.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(std::span<const ParamView> params, double lr);

  std::int64_t steps() const noexcept { return steps_; }
  const std::vector<std::vector<double>>& first_moment() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moment() const noexcept { return v_; }
  void restore(std::int64_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  AdamOptions options_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

std::size_t total_size(std::span<const ParamView> params) noexcept;
void zero_grads(std::span<const ParamView> params) noexcept;

}  // namespace piqa::nn
