#include "piqa/prompt_bank.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>

#include "piqa/error.hpp"
#include "piqa/hash.hpp"

namespace piqa::prompt {

namespace {

bool starts_with_vowel(const std::string& word) {
  if (word.empty()) return false;
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(word.front())));
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

}  // namespace

std::string render_prompt(const std::string& scene, const std::string& distortion, const std::string& level) {
  const char* article = starts_with_vowel(scene) ? "an" : "a";
  return std::string("a photo of ") + article + " " + scene + " with " + distortion + " artifacts, which is of " +
         level + " quality";
}

PromptGrid::PromptGrid(std::vector<std::string> scenes, std::vector<std::string> distortions,
                       std::vector<std::string> levels)
    : scenes_(std::move(scenes)), distortions_(std::move(distortions)), levels_(std::move(levels)) {
  if (scenes_.empty() || distortions_.empty() || levels_.empty())
    throw Error(Errc::ConfigError, "prompt grid axes must be non-empty");
  prompts_.reserve(scenes_.size() * distortions_.size() * levels_.size());
  Fnv1a h;
  for (const auto& s : scenes_)
    for (const auto& d : distortions_)
      for (const auto& c : levels_) {
        prompts_.push_back(render_prompt(s, d, c));
        h.update(prompts_.back());
        h.update(std::string_view("\n"));
      }
  hash_ = h.digest();
}

std::size_t PromptGrid::index(int scene, int distortion, int level) const {
  const auto ns = static_cast<int>(scenes_.size());
  const auto nd = static_cast<int>(distortions_.size());
  const auto nc = static_cast<int>(levels_.size());
  if (scene < 0 || scene >= ns || distortion < 0 || distortion >= nd || level < 0 || level >= nc)
    throw Error(Errc::DimMismatch, "prompt grid coordinate out of range");
  return (static_cast<std::size_t>(scene) * nd + distortion) * nc + level;
}

GridCoord PromptGrid::coord(std::size_t index) const {
  if (index >= prompts_.size()) throw Error(Errc::DimMismatch, "prompt index out of range");
  const auto nc = levels_.size();
  const auto nd = distortions_.size();
  return {static_cast<int>(index / (nc * nd)), static_cast<int>((index / nc) % nd), static_cast<int>(index % nc)};
}

PromptGrid build_grid() {
  return PromptGrid({"animal", "cityscape", "human", "indoor scene", "landscape", "night scene", "plant",
                     "still-life", "others"},
                    {"blur", "color-related", "contrast", "JPEG compression", "JPEG2000 compression", "noise",
                     "overexposure", "quantization", "under-exposure", "spatially-localized", "others"},
                    {"bad", "poor", "fair", "good", "perfect"});
}

void export_grid(const PromptGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  for (const auto& p : grid.prompts()) out << p << '\n';
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
}

StubEmbeddingProvider::StubEmbeddingProvider(int dim, double logit_scale, std::uint64_t salt)
    : dim_(dim), logit_scale_(logit_scale), salt_(salt) {
  if (dim <= 0) throw Error(Errc::ConfigError, "embedding dim must be positive");
}

std::vector<double> StubEmbeddingProvider::unit_vector(std::uint64_t seed) const {
  std::mt19937_64 rng(seed ^ (salt_ * 0x9e3779b97f4a7c15ULL));
  std::normal_distribution<double> normal;
  std::vector<double> v(dim_);
  double norm = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::vector<double> StubEmbeddingProvider::embed_image(const Image& image) const {
  return unit_vector(image_checksum(image));
}

std::vector<double> StubEmbeddingProvider::embed_text(const std::string& text) const {
  return unit_vector(fnv1a(text));
}

PromptFeatures softmax_features(std::span<const double> similarities, double logit_scale) {
  PromptFeatures f;
  f.probs.resize(similarities.size());
  if (similarities.empty()) return f;
  double top = -INFINITY;
  for (double s : similarities) top = std::max(top, logit_scale * s);
  double total = 0.0;
  for (std::size_t i = 0; i < similarities.size(); ++i) {
    f.probs[i] = std::exp(logit_scale * similarities[i] - top);
    total += f.probs[i];
  }
  for (auto& p : f.probs) p /= total;
  return f;
}

PromptFeatures compute_prompt_features(const Image& image, const PromptGrid& grid, const EmbeddingProvider& provider) {
  const auto img = provider.embed_image(image);
  double img_norm = 0.0;
  for (double v : img) img_norm += v * v;
  img_norm = std::sqrt(img_norm);
  std::vector<double> sims;
  sims.reserve(grid.size());
  for (const auto& text : grid.prompts()) {
    const auto t = provider.embed_text(text);
    if (t.size() != img.size())
      throw Error(Errc::DimensionMismatch, "image embedding has " + std::to_string(img.size()) +
                                               " dims, text embedding " + std::to_string(t.size()));
    double dot = 0.0;
    double t_norm = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      dot += img[k] * t[k];
      t_norm += t[k] * t[k];
    }
    sims.push_back(dot / (img_norm * std::sqrt(t_norm)));
  }
  return softmax_features(sims, provider.logit_scale());
}

Marginals marginals(const PromptFeatures& features, const PromptGrid& grid) {
  if (features.probs.size() != grid.size())
    throw Error(Errc::DimMismatch, "prompt features do not match the grid size");
  Marginals m;
  m.scene.assign(grid.scenes().size(), 0.0);
  m.distortion.assign(grid.distortions().size(), 0.0);
  m.quality.assign(grid.levels().size(), 0.0);
  for (std::size_t i = 0; i < features.probs.size(); ++i) {
    const auto c = grid.coord(i);
    m.scene[c.scene] += features.probs[i];
    m.distortion[c.distortion] += features.probs[i];
    m.quality[c.level] += features.probs[i];
  }
  for (std::size_t c = 0; c < m.quality.size(); ++c) m.expected_quality += static_cast<double>(c + 1) * m.quality[c];
  return m;
}

}  // namespace piqa::prompt
