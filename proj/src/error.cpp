#include "piqa/error.hpp"

namespace piqa {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::DuplicateImageRef: return "DuplicateImageRef";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::NoValidScene: return "NoValidScene";
    case Errc::EmptyImage: return "EmptyImage";
    case Errc::ImageTooSmall: return "ImageTooSmall";
    case Errc::NoFaceFound: return "NoFaceFound";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteActivation: return "NonFiniteActivation";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ArchitectureMismatch: return "ArchitectureMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::AllStreamsAbsent: return "AllStreamsAbsent";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::NonFiniteOutput: return "NonFiniteOutput";
    case Errc::ProbabilityOutOfRange: return "ProbabilityOutOfRange";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::FitDiverged: return "FitDiverged";
    case Errc::NoQualifyingScene: return "NoQualifyingScene";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::EpochOutOfRange: return "EpochOutOfRange";
    case Errc::HashMismatch: return "HashMismatch";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::ConfigError: return "ConfigError";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

namespace {

std::string format_message(Errc code, const std::string& message, std::optional<int> row) {
  std::string out(errc_name(code));
  if (row) out += " (row " + std::to_string(*row) + ")";
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(Errc code, const std::string& message, std::optional<int> row)
    : std::runtime_error(format_message(code, message, row)), code_(code), row_(row) {}

}  // namespace piqa
