#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "piqa/config.hpp"
#include "piqa/dataset.hpp"
#include "piqa/engine.hpp"
#include "piqa/image.hpp"

namespace piqa::testing {

// Removes itself on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "piqa");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

Image random_image(int height, int width, std::mt19937_64& rng);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Brute-force oracles.
double oracle_pearson(std::span<const double> a, std::span<const double> b);
std::vector<double> oracle_ranks(std::span<const double> v);  // O(n^2) average ranks
double oracle_srcc(std::span<const double> pred, std::span<const double> gt);
double oracle_tau_b(std::span<const double> pred, std::span<const double> gt);  // all-pairs counting
long double oracle_phi(long double z);                                          // 0.5 * erfc(-z / sqrt 2)
long double oracle_fidelity(int p, long double p_hat);
// Mean with the sum carried in 100-digit binary floating point.
double oracle_mean(std::span<const double> values);

// Small deterministic configuration over toy backbones.
RunConfig toy_run_config(const std::filesystem::path& manifest, const std::filesystem::path& output_dir,
                         int feature_dim = 16);

// A within-scene pair problem held in memory: images, records and pairs, with
// model inputs prepared once (center crops, independent of the crop seed).
struct ToyPairProblem {
  std::vector<dataset::PortraitRecord> records;
  std::vector<dataset::PairSample> pairs;
  std::vector<Image> images;
};
ToyPairProblem make_pair_problem(int scenes, int per_scene, std::size_t n_pairs, std::uint64_t seed);
engine::InputFn cached_inputs(const QualityModel& model, const ToyPairProblem& problem);

}  // namespace piqa::testing
