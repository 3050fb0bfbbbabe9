#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "piqa/backbone.hpp"
#include "piqa/dataset.hpp"
#include "piqa/preprocess.hpp"

namespace piqa {

inline constexpr int kConfigSchemaVersion = 1;

struct ModelConfig {
  bool use_full = true;
  bool use_facial = true;
  bool use_liqe = true;
  backbone::ToyBackboneConfig full_backbone{.feature_dim = 1024, .seed = 1};
  backbone::ToyBackboneConfig facial_backbone{.feature_dim = 1024, .seed = 2};
  int hidden_dim = 128;
  bool zero_init_output = false;
  int embedding_dim = 64;
  double logit_scale = 100.0;

  // Throws ConfigError.
  void validate() const;
};

struct TrainConfig {
  dataset::Attribute attribute = dataset::Attribute::Overall;
  int epochs = 10;
  int batch_size = 12;  // pairs per batch
  double lr_initial = 1e-5;
  double lr_decay_factor = 10.0;
  int lr_decay_after_epochs = 2;
  std::uint64_t seed = 0;
  // 0 means one pair per training record.
  std::size_t pairs_per_epoch = 0;
  bool deterministic = false;
  int workers = 1;
  bool cache_images = false;
  std::size_t min_scene_size = 2;

  void validate() const;
};

struct PathsConfig {
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  std::filesystem::path full_weights;
  std::filesystem::path facial_weights;
};

struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  preprocess::PreprocessConfig preprocess;
  PathsConfig paths;

  void validate() const;
};

// Strict parse: unknown keys and wrong types throw ConfigError; missing keys
// take defaults. Relative paths resolve against `base_dir` when given.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
// Effective configuration with every field present.
nlohmann::json to_json(const RunConfig& config);

}  // namespace piqa
