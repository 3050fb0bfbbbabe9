#pragma once

#include <span>
#include <vector>

namespace piqa::ranking {

// Lower clamp for p_hat inside 1/sqrt terms of the gradient.
inline constexpr double kProbabilityEpsilon = 1e-12;

// Standard normal CDF via erfc.
double normal_cdf(double z) noexcept;

// Phi((q_x - q_y) / sqrt(2)). Throws NonFiniteInput.
double pair_probability(double q_hat_x, double q_hat_y);

// 1 - sqrt(p * p_hat) - sqrt((1 - p) * (1 - p_hat)) for binary p.
// Throws ProbabilityOutOfRange.
double fidelity_loss(int p, double p_hat);

struct PairPrediction {
  double q_hat_x = 0.0;
  double q_hat_y = 0.0;
  double p_hat = 0.5;
  int label = 1;
  double loss = 0.0;
  double grad_x = 0.0;  // d loss / d q_hat_x
  double grad_y = 0.0;  // == -grad_x
};

PairPrediction pair_loss(double q_hat_x, double q_hat_y, int label);

struct BatchLoss {
  double mean = 0.0;
  std::vector<double> grad_x;  // gradient of the mean w.r.t. each score
  std::vector<double> grad_y;
};

// Mean of per-pair losses.
BatchLoss batch_loss(std::span<const double> q_hat_x, std::span<const double> q_hat_y, std::span<const int> labels);

}  // namespace piqa::ranking
