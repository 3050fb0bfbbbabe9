#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "piqa/nn.hpp"

namespace piqa::head {

// Expected stream widths; an absent stream is disabled by the ablation config.
struct FusionLayout {
  std::optional<int> full;
  std::optional<int> facial;
  std::optional<int> prompt;

  int total() const noexcept { return full.value_or(0) + facial.value_or(0) + prompt.value_or(0); }
};

struct FeatureBundle {
  std::optional<nn::Vector> full;
  std::optional<nn::Vector> facial;
  std::optional<nn::Vector> prompt;
  nn::Vector concat;  // full, facial, prompt order
};

// Throws AllStreamsAbsent, or DimMismatch when `layout` disagrees with the inputs.
FeatureBundle fuse(std::optional<nn::Vector> full, std::optional<nn::Vector> facial, std::optional<nn::Vector> prompt,
                   const std::optional<FusionLayout>& layout = std::nullopt);

struct HeadConfig {
  int input_dim = 0;
  int hidden_dim = 128;
};

struct HeadActivations {
  nn::Vector hidden_pre;
  nn::Vector hidden;
};

// Linear -> GELU -> Linear(1), no output activation.
class RegressionHead {
 public:
  RegressionHead() = default;
  RegressionHead(const HeadConfig& config, std::uint64_t seed);

  const HeadConfig& config() const noexcept { return config_; }

  double forward(const nn::Vector& features, HeadActivations* cache = nullptr) const;
  // Accumulates parameter gradients and returns d(score)/d(features) * grad_out.
  nn::Vector backward(const nn::Vector& features, const HeadActivations& cache, double grad_out);

  void zero_output_layer();
  nn::Linear& hidden_layer() noexcept { return hidden_; }
  nn::Linear& output_layer() noexcept { return output_; }
  const nn::Linear& hidden_layer() const noexcept { return hidden_; }
  const nn::Linear& output_layer() const noexcept { return output_; }

  std::vector<nn::ParamView> parameters();

 private:
  HeadConfig config_;
  nn::Linear hidden_;
  nn::Linear output_;
};

// Throws DimMismatch or NonFiniteOutput.
double predict_score(const FeatureBundle& bundle, const RegressionHead& head);

}  // namespace piqa::head
