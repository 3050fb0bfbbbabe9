#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "piqa/image.hpp"

namespace piqa::prompt {

inline constexpr int kSceneCount = 9;
inline constexpr int kDistortionCount = 11;
inline constexpr int kLevelCount = 5;
inline constexpr int kPromptCount = kSceneCount * kDistortionCount * kLevelCount;  // 495

struct GridCoord {
  int scene = 0;
  int distortion = 0;
  int level = 0;  // 0-based; quality value is level + 1
};

// Scene-major, then distortion, then quality level.
class PromptGrid {
 public:
  PromptGrid(std::vector<std::string> scenes, std::vector<std::string> distortions,
             std::vector<std::string> levels);

  const std::vector<std::string>& scenes() const noexcept { return scenes_; }
  const std::vector<std::string>& distortions() const noexcept { return distortions_; }
  const std::vector<std::string>& levels() const noexcept { return levels_; }
  const std::vector<std::string>& prompts() const noexcept { return prompts_; }
  std::size_t size() const noexcept { return prompts_.size(); }

  std::size_t index(int scene, int distortion, int level) const;
  GridCoord coord(std::size_t index) const;

  // FNV-1a over the prompts in index order.
  std::uint64_t hash() const noexcept { return hash_; }

 private:
  std::vector<std::string> scenes_;
  std::vector<std::string> distortions_;
  std::vector<std::string> levels_;
  std::vector<std::string> prompts_;
  std::uint64_t hash_ = 0;
};

std::string render_prompt(const std::string& scene, const std::string& distortion, const std::string& level);

// The 9 x 11 x 5 lattice.
PromptGrid build_grid();

// One prompt per line, index order.
void export_grid(const PromptGrid& grid, const std::filesystem::path& path);

struct PromptFeatures {
  std::vector<double> probs;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> embed_image(const Image& image) const = 0;
  virtual std::vector<double> embed_text(const std::string& text) const = 0;
  virtual double logit_scale() const = 0;
  virtual bool thread_safe() const { return false; }
};

// Seeded pseudo-random unit vectors keyed by image content and prompt text.
class StubEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit StubEmbeddingProvider(int dim = 64, double logit_scale = 100.0, std::uint64_t salt = 0);

  std::vector<double> embed_image(const Image& image) const override;
  std::vector<double> embed_text(const std::string& text) const override;
  double logit_scale() const override { return logit_scale_; }
  bool thread_safe() const override { return true; }

 private:
  std::vector<double> unit_vector(std::uint64_t seed) const;

  int dim_;
  double logit_scale_;
  std::uint64_t salt_;
};

// probs = softmax(scale * similarities), computed with the max subtracted.
PromptFeatures softmax_features(std::span<const double> similarities, double logit_scale);

// Throws DimensionMismatch when image and text embeddings differ in size.
PromptFeatures compute_prompt_features(const Image& image, const PromptGrid& grid, const EmbeddingProvider& provider);

struct Marginals {
  std::vector<double> scene;
  std::vector<double> distortion;
  std::vector<double> quality;
  double expected_quality = 0.0;  // sum over c of c * quality[c - 1]
};

Marginals marginals(const PromptFeatures& features, const PromptGrid& grid);

}  // namespace piqa::prompt
