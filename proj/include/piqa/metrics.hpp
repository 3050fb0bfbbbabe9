#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace piqa::metrics {

// f(x) = beta2 + (beta1 - beta2) / (1 + exp(-(x - beta3) / |beta4|)).
// When `fallback` is set the map is the affine least-squares fit instead.
struct FourParamLogistic {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta3 = 0.0;
  double beta4 = 1.0;
  bool fallback = false;
  double slope = 0.0;
  double intercept = 0.0;
  std::string note;  // why the fallback was taken

  double operator()(double x) const noexcept;
  std::vector<double> apply(std::span<const double> x) const;
};

// Correctly rounded sum, independent of the order of `values`.
double exact_sum(std::span<const double> values);

// Tie-aware 1-based average ranks.
std::vector<double> average_ranks(std::span<const double> values);

// Plain Pearson correlation. Throws LengthMismatch or DegenerateInput.
double pearson(std::span<const double> a, std::span<const double> b);

double srcc(std::span<const double> pred, std::span<const double> gt);
// Kendall tau-b in O(n log n).
double krcc(std::span<const double> pred, std::span<const double> gt);

inline constexpr std::size_t kMinLogisticSamples = 5;

// Levenberg-Marquardt least squares from beta1 = max(gt), beta2 = min(gt),
// beta3 = median(pred), beta4 = std(pred) / 4. Falls back to the affine map
// below kMinLogisticSamples, on divergence, or when the affine fit is better.
FourParamLogistic fit_logistic(std::span<const double> pred, std::span<const double> gt);

struct MappedPrediction {
  FourParamLogistic fit;
  std::vector<double> mapped;
};

MappedPrediction map_predictions(std::span<const double> pred, std::span<const double> gt);

// Pearson correlation / mean absolute error after logistic mapping.
double plcc(std::span<const double> pred, std::span<const double> gt);
double mae(std::span<const double> pred, std::span<const double> gt);

struct ScoredRecord {
  std::string scene_id;
  double prediction = 0.0;
  double ground_truth = 0.0;
};

enum class SceneStatus { Included, TooSmall, Degenerate };

struct SceneMetrics {
  std::string scene_id;
  std::size_t n = 0;
  SceneStatus status = SceneStatus::Included;
  double srcc = 0.0;
  double plcc = 0.0;
  double krcc = 0.0;
  double mae = 0.0;
  FourParamLogistic fit;
  std::string note;
};

struct Averages {
  double srcc = 0.0;
  double plcc = 0.0;
  double krcc = 0.0;
  double mae = 0.0;
};

struct MetricReport {
  std::string attribute;
  std::size_t min_scene_size = 2;
  std::vector<SceneMetrics> per_scene;  // sorted by scene id
  Averages averaged;
  std::size_t scenes_used = 0;
  std::size_t scenes_excluded = 0;
};

// Four metrics per scene, then the unweighted mean over included scenes.
// Throws NoQualifyingScene.
MetricReport evaluate_grouped(std::span<const ScoredRecord> records, std::size_t min_scene_size = 2);

inline constexpr int kReportSchemaVersion = 1;

nlohmann::json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& doc);
// Structural check of a report document; returns problems found.
std::vector<std::string> validate_report_json(const nlohmann::json& doc);

}  // namespace piqa::metrics
