#include "piqa/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "piqa/error.hpp"

namespace piqa::ranking {

double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double pair_probability(double q_hat_x, double q_hat_y) {
  if (!std::isfinite(q_hat_x) || !std::isfinite(q_hat_y))
    throw Error(Errc::NonFiniteInput, "pair_probability needs finite scores");
  // Phi(d / sqrt2) = erfc(-d / 2) / 2
  return 0.5 * std::erfc(-(q_hat_x - q_hat_y) / 2.0);
}

namespace {

void check_label(int p) {
  if (p != 0 && p != 1) throw Error(Errc::ProbabilityOutOfRange, "label must be 0 or 1");
}

}  // namespace

double fidelity_loss(int p, double p_hat) {
  check_label(p);
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw Error(Errc::ProbabilityOutOfRange, "p_hat must lie in [0, 1]");
  return p == 1 ? 1.0 - std::sqrt(p_hat) : 1.0 - std::sqrt(1.0 - p_hat);
}

PairPrediction pair_loss(double q_hat_x, double q_hat_y, int label) {
  check_label(label);
  if (!std::isfinite(q_hat_x) || !std::isfinite(q_hat_y))
    throw Error(Errc::NonFiniteInput, "pair_loss needs finite scores");
  const double d = q_hat_x - q_hat_y;
  // Both tails from erfc so that 1 - p_hat keeps full precision.
  const double p_hat = 0.5 * std::erfc(-d / 2.0);
  const double q_hat = 0.5 * std::erfc(d / 2.0);
  const double z = d / std::numbers::sqrt2;
  const double dp_dd = std::exp(-0.5 * z * z) * std::numbers::inv_sqrtpi / 2.0;  // phi(z) / sqrt2

  PairPrediction out;
  out.q_hat_x = q_hat_x;
  out.q_hat_y = q_hat_y;
  out.p_hat = p_hat;
  out.label = label;
  if (label == 1) {
    out.loss = 1.0 - std::sqrt(p_hat);
    out.grad_x = -dp_dd / (2.0 * std::sqrt(std::max(p_hat, kProbabilityEpsilon)));
  } else {
    out.loss = 1.0 - std::sqrt(q_hat);
    out.grad_x = dp_dd / (2.0 * std::sqrt(std::max(q_hat, kProbabilityEpsilon)));
  }
  out.grad_y = -out.grad_x;
  return out;
}

BatchLoss batch_loss(std::span<const double> q_hat_x, std::span<const double> q_hat_y, std::span<const int> labels) {
  if (q_hat_x.size() != q_hat_y.size() || q_hat_x.size() != labels.size())
    throw Error(Errc::LengthMismatch, "batch_loss inputs differ in length");
  if (q_hat_x.empty()) throw Error(Errc::LengthMismatch, "batch_loss needs at least one pair");
  const double inv = 1.0 / static_cast<double>(q_hat_x.size());
  BatchLoss out;
  out.grad_x.resize(q_hat_x.size());
  out.grad_y.resize(q_hat_x.size());
  for (std::size_t i = 0; i < q_hat_x.size(); ++i) {
    const auto p = pair_loss(q_hat_x[i], q_hat_y[i], labels[i]);
    out.mean += p.loss * inv;
    out.grad_x[i] = p.grad_x * inv;
    out.grad_y[i] = p.grad_y * inv;
  }
  return out;
}

}  // namespace piqa::ranking
