#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace piqa {

enum class Errc {
  MissingFile,
  MalformedRow,
  DuplicateImageRef,
  NonFiniteInput,
  NoValidScene,
  EmptyImage,
  ImageTooSmall,
  NoFaceFound,
  ShapeMismatch,
  NonFiniteActivation,
  ChecksumMismatch,
  ArchitectureMismatch,
  DimensionMismatch,
  AllStreamsAbsent,
  DimMismatch,
  NonFiniteOutput,
  ProbabilityOutOfRange,
  LengthMismatch,
  DegenerateInput,
  FitDiverged,
  NoQualifyingScene,
  NonFiniteLoss,
  EpochOutOfRange,
  HashMismatch,
  VersionMismatch,
  ConfigError,
  EmptySplit,
  IoError,
};

std::string_view errc_name(Errc code);

// Single exception type for the library; the code identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::optional<int> row = std::nullopt);

  Errc code() const noexcept { return code_; }
  // 1-based data row number for manifest diagnostics.
  std::optional<int> row() const noexcept { return row_; }

 private:
  Errc code_;
  std::optional<int> row_;
};

}  // namespace piqa
