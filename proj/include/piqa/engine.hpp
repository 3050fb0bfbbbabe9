#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "piqa/config.hpp"
#include "piqa/dataset.hpp"
#include "piqa/metrics.hpp"
#include "piqa/model.hpp"
#include "piqa/nn.hpp"

namespace piqa::engine {

// lr_initial for epochs below lr_decay_after_epochs, lr_initial / factor after.
// Throws EpochOutOfRange.
double lr_schedule(int epoch, const TrainConfig& config);

// Produces model inputs for a record with the given crop seed.
using InputFn = std::function<ModelInputs(const dataset::PortraitRecord&, std::uint64_t seed)>;

// Thread-safe memo of PreparedImages keyed by image path. Prompt features are
// always kept; images only when `keep_images` is set.
class RecordCache {
 public:
  RecordCache(const QualityModel& model, const preprocess::FaceDetector& detector, bool keep_images);

  ModelInputs inputs(const dataset::PortraitRecord& record, preprocess::CropMode mode, std::uint64_t seed);

 private:
  const QualityModel& model_;
  const preprocess::FaceDetector& detector_;
  bool keep_images_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const PreparedImages>> entries_;
};

struct TrainState {
  QualityModel model;
  nn::Adam optimizer;
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  std::mt19937_64 rng;
  nlohmann::json metric_history = nlohmann::json::array();
  double best_srcc = -2.0;
};

TrainState make_state(const RunConfig& config);

// Forward both members of every pair, mean fidelity loss, backward and one
// Adam step. Returns the loss before the update. Throws NonFiniteLoss.
double train_step(std::span<const dataset::PairSample> batch, QualityModel& model, nn::Adam& optimizer, double lr,
                  const InputFn& inputs, std::uint64_t seed);

// Fraction of pairs with p_hat on the labelled side of 0.5, and mean loss.
struct PairAccuracy {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};
PairAccuracy pair_accuracy(std::span<const dataset::PairSample> pairs, const QualityModel& model,
                           const InputFn& inputs);

using Scorer = std::function<double(const dataset::PortraitRecord&)>;

// One score per record (scored concurrently when workers > 1), then
// per-scene metrics.
metrics::MetricReport evaluate(std::span<const dataset::PortraitRecord> records, const Scorer& scorer,
                               std::size_t min_scene_size = 2, int workers = 1);
// Center-crop inference with the given model.
metrics::MetricReport evaluate(std::span<const dataset::PortraitRecord> records, const QualityModel& model,
                               RecordCache& cache, std::size_t min_scene_size = 2, int workers = 1);

std::vector<double> score_records(std::span<const dataset::PortraitRecord> records, const Scorer& scorer,
                                  int workers);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config;  // effective RunConfig
  std::uint64_t grid_hash = 0;
  int epoch = 0;
  std::int64_t step = 0;
  std::string rng_state;
  nlohmann::json metric_history = nlohmann::json::array();
  nlohmann::json provenance = nlohmann::json::object();
  double best_srcc = -2.0;
  std::vector<double> parameters;
  std::int64_t adam_steps = 0;
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
};

Checkpoint capture(TrainState& state, const RunConfig& config);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws HashMismatch when the checkpoint was written for a different prompt
// grid, VersionMismatch for unknown formats.
Checkpoint load_checkpoint(const std::filesystem::path& path, const prompt::PromptGrid& grid);
// Rebuilds the training state (model, optimizer, counters, RNG).
TrainState restore(const Checkpoint& checkpoint, RunConfig* config_out = nullptr);

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  // Records for every split; when empty, loaded from config.paths.manifest.
  std::vector<dataset::PortraitRecord> records;
  const preprocess::FaceDetector* detector = nullptr;
};

struct TrainResult {
  std::filesystem::path run_dir;
  TrainState state;
  std::vector<double> step_losses;
};

// Full schedule. Writes config.json, prompts.txt, train_log.jsonl,
// reports/epoch_NN.json, metrics_history.json and checkpoints/{last,best}.ckpt
// under config.paths.output_dir.
TrainResult train(const RunConfig& config, const TrainOptions& options = {});

}  // namespace piqa::engine
