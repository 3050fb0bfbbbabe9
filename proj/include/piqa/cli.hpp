#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "piqa/dataset.hpp"
#include "piqa/engine.hpp"
#include "piqa/error.hpp"

namespace piqa::cli {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

// Maps a library error to the process exit code.
int exit_code_for(const Error& error);
// One JSON object on a single line.
std::string error_line(const std::string& code, const std::string& message);

struct PrepareOptions {
  std::filesystem::path manifest_in;
  std::filesystem::path images_root;  // defaults to the manifest directory
  std::filesystem::path manifest_out;
  std::string detector = "passthrough";  // or "external"
  std::string detector_command;
};

struct PrepareSummary {
  std::size_t images = 0;
  std::size_t passthrough = 0;
  std::size_t faces_found = 0;
  std::size_t fallbacks = 0;
  std::size_t errors = 0;
  std::vector<int> fallback_lines;
  std::vector<int> error_lines;
};

PrepareSummary cmd_prepare(const PrepareOptions& options, std::ostream& err);

struct TrainCommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<std::filesystem::path> resume;
};

engine::TrainResult cmd_train(const TrainCommandOptions& options);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;  // defaults to the checkpoint's training manifest
  dataset::Split split = dataset::Split::Val;
  std::filesystem::path report;    // JSON report
  std::filesystem::path scatter;   // CSV; defaults to <report stem>_scatter.csv
  int workers = 1;
  std::optional<std::size_t> min_scene_size;
};

// `scorer_override` replaces model inference (used to inject oracle scores).
metrics::MetricReport cmd_eval(const EvalOptions& options, const engine::Scorer* scorer_override = nullptr);

struct ScoreOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::optional<dataset::FaceBox> face_box;
  bool allow_fallback = false;
  bool verbose = false;
  std::string detector_command;  // empty: no detector
};

// Returns the JSON document that the command prints.
std::string cmd_score(const ScoreOptions& options, std::ostream& err);

// Full argv-style entry point (args exclude the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace piqa::cli
