#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "piqa/backbone.hpp"
#include "piqa/config.hpp"
#include "piqa/dataset.hpp"
#include "piqa/head.hpp"
#include "piqa/image.hpp"
#include "piqa/preprocess.hpp"
#include "piqa/prompt_bank.hpp"

namespace piqa {

// splitmix64-style mixing of a seed with a sequence of counters.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept;

// Crop-independent preprocessing of one record.
struct PreparedImages {
  std::optional<Image> full;    // resized to resize_min_dim
  std::optional<Image> facial;  // face crop, resized to resize_min_dim
  std::optional<nn::Vector> prompt;
  bool face_fallback = false;
  dataset::FaceBox face_region;
};

// Model inputs for one image.
struct ModelInputs {
  std::shared_ptr<const Tensor> full;
  std::shared_ptr<const Tensor> facial;
  std::optional<nn::Vector> prompt;
};

struct ForwardTrace {
  backbone::Activations full;
  backbone::Activations facial;
  head::HeadActivations head;
  head::FeatureBundle bundle;
};

// Dual-branch scorer: full-image and facial feature extractors with separate
// weights, prompt-grid probabilities, concatenation and the MLP head.
class QualityModel {
 public:
  QualityModel(const ModelConfig& config, const preprocess::PreprocessConfig& preprocess, std::uint64_t seed);
  QualityModel(const QualityModel& other);
  QualityModel& operator=(const QualityModel& other);
  QualityModel(QualityModel&&) noexcept = default;
  QualityModel& operator=(QualityModel&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }
  const preprocess::PreprocessConfig& preprocess_config() const noexcept { return preprocess_; }
  head::FusionLayout layout() const;
  int head_input_dim() const noexcept { return head_.config().input_dim; }

  backbone::FeatureExtractor* full_branch() noexcept { return full_.get(); }
  backbone::FeatureExtractor* facial_branch() noexcept { return facial_.get(); }
  const backbone::FeatureExtractor* full_branch() const noexcept { return full_.get(); }
  const backbone::FeatureExtractor* facial_branch() const noexcept { return facial_.get(); }
  head::RegressionHead& head() noexcept { return head_; }
  const head::RegressionHead& head() const noexcept { return head_; }
  const prompt::PromptGrid& grid() const noexcept { return grid_; }
  const prompt::EmbeddingProvider& provider() const noexcept { return *provider_; }

  // Loads the image and does every step up to (excluding) cropping.
  PreparedImages prepare(const dataset::PortraitRecord& record, const preprocess::FaceDetector& detector,
                         bool allow_fallback = true) const;
  PreparedImages prepare(const dataset::PortraitRecord& record, const Image& image,
                         const preprocess::FaceDetector& detector, bool allow_fallback = true) const;
  // Crop and normalise. Full and facial crops use independent seeds.
  ModelInputs make_inputs(const PreparedImages& prepared, preprocess::CropMode mode, std::uint64_t seed) const;

  head::FeatureBundle features(const ModelInputs& inputs, ForwardTrace* trace = nullptr) const;
  double score(const ModelInputs& inputs) const;
  double forward(const ModelInputs& inputs, ForwardTrace& trace) const;
  // Accumulates gradients of grad_score * score into every trainable parameter.
  void backward(const ModelInputs& inputs, const ForwardTrace& trace, double grad_score);

  // Full branch, facial branch, head.
  std::vector<nn::ParamView> parameters();

 private:
  ModelConfig config_;
  preprocess::PreprocessConfig preprocess_;
  std::unique_ptr<backbone::FeatureExtractor> full_;
  std::unique_ptr<backbone::FeatureExtractor> facial_;
  head::RegressionHead head_;
  prompt::PromptGrid grid_;
  std::shared_ptr<const prompt::EmbeddingProvider> provider_;
};

}  // namespace piqa
