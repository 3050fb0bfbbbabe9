#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "piqa/image.hpp"
#include "piqa/nn.hpp"

namespace piqa::backbone {

enum class Branch { Full, Facial };
std::string_view to_string(Branch b);
Branch parse_branch(std::string_view text);

// Intermediate values kept by a training forward pass for backward().
struct Activations {
  std::vector<nn::Matrix> values;
};

// One feature branch: B x 3 x S x S image batch -> B x D features.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual int feature_dim() const = 0;
  virtual int input_size() const = 0;
  virtual std::string architecture() const = 0;

  // Single image; `cache` may be null in evaluation.
  virtual nn::Vector forward(const Tensor& input, Activations* cache) const = 0;
  // Accumulates parameter gradients. `grad_input` may be null.
  virtual void backward(const Tensor& input, const Activations& cache, const nn::Vector& grad_out,
                        Tensor* grad_input) = 0;

  virtual std::vector<nn::ParamView> parameters() = 0;
  virtual std::unique_ptr<FeatureExtractor> clone() const = 0;

  // Provenance of the current weights ("random" until load_weights).
  const std::string& source() const noexcept { return source_; }
  void set_source(std::string source) { source_ = std::move(source); }

  // Throws ShapeMismatch or NonFiniteActivation.
  nn::Matrix extract(std::span<const Tensor> batch) const;
  void check_input(const Tensor& input) const;

 private:
  std::string source_ = "random";
};

// Box-filter stem, patch embedding with GELU, mean pooling over patches and a
// linear projection to feature_dim.
struct ToyBackboneConfig {
  int input_size = 384;
  int pool_stride = 8;
  int patch_size = 8;
  int embed_dim = 32;
  int feature_dim = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

class ToyBackbone final : public FeatureExtractor {
 public:
  explicit ToyBackbone(const ToyBackboneConfig& config);

  int feature_dim() const override { return config_.feature_dim; }
  int input_size() const override { return config_.input_size; }
  std::string architecture() const override;

  nn::Vector forward(const Tensor& input, Activations* cache) const override;
  void backward(const Tensor& input, const Activations& cache, const nn::Vector& grad_out,
                Tensor* grad_input) override;

  std::vector<nn::ParamView> parameters() override;
  std::unique_ptr<FeatureExtractor> clone() const override;

  const ToyBackboneConfig& config() const noexcept { return config_; }

 private:
  nn::Matrix tokens(const Tensor& input) const;

  ToyBackboneConfig config_;
  nn::Linear embed_;
  nn::Linear project_;
};

struct BranchWeightsManifest {
  Branch branch = Branch::Full;
  std::string source;
  std::string architecture;
  int feature_dim = 0;
  std::string checksum;  // FNV-1a hex of the blob
};

// Raw little-endian parameter values in registration order.
std::vector<std::byte> save_weights(FeatureExtractor& extractor);
BranchWeightsManifest describe_weights(FeatureExtractor& extractor, Branch branch, std::string source,
                                       std::span<const std::byte> blob);
// Throws ChecksumMismatch or ArchitectureMismatch; feature_dim is unchanged.
void load_weights(FeatureExtractor& extractor, const BranchWeightsManifest& manifest,
                  std::span<const std::byte> blob);

// `<path>` holds the blob and `<path>.json` the manifest.
void write_weights_file(const std::filesystem::path& path, const BranchWeightsManifest& manifest,
                        std::span<const std::byte> blob);
std::pair<BranchWeightsManifest, std::vector<std::byte>> read_weights_file(const std::filesystem::path& path);

// Copies parameter values between two flat views of equal layout.
std::vector<double> flatten(std::span<const nn::ParamView> params);
void unflatten(std::span<const nn::ParamView> params, std::span<const double> values);

}  // namespace piqa::backbone
