#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "piqa/dataset.hpp"
#include "piqa/image.hpp"

namespace piqa::preprocess {

enum class CropMode { Random, Center };

struct PreprocessConfig {
  int resize_min_dim = 448;
  int crop_size = 384;
  // Swin/ViT ImageNet statistics.
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
  // Fraction of the box size added on each side of a face box.
  double face_margin = 0.25;

  // Throws Error{ConfigError}.
  void validate() const;
};

// Scales so that min(height, width) == target, with antialiased bilinear
// (triangle) filtering. Returns the input unchanged when it already matches.
Image resize_min_side(const Image& image, int target);

struct CropWindow {
  int top = 0;
  int left = 0;
  int size = 0;
};

CropWindow crop_window(const Image& image, int size, CropMode mode, std::uint64_t seed);
Image crop(const Image& image, int size, CropMode mode, std::uint64_t seed);
Image crop_region(const Image& image, const dataset::FaceBox& region);

Tensor normalize(const Image& image, const PreprocessConfig& config);

// resize_min_side -> crop -> normalize.
Tensor prepare_input(const Image& image, const PreprocessConfig& config, CropMode mode, std::uint64_t seed);

struct Detection {
  dataset::FaceBox box;
  double confidence = 0.0;
};

// Returns detections sorted by descending confidence; may be empty.
class FaceDetector {
 public:
  virtual ~FaceDetector() = default;
  virtual std::vector<Detection> detect(const Image& image) const = 0;
};

// Relies on boxes already present in the manifest; never detects anything.
class ManifestBoxDetector final : public FaceDetector {
 public:
  std::vector<Detection> detect(const Image&) const override { return {}; }
};

// Runs `command <image.png>` and reads one "x,y,w,h,confidence" line per face
// from its stdout.
class ExternalDetector final : public FaceDetector {
 public:
  explicit ExternalDetector(std::string command);
  std::vector<Detection> detect(const Image& image) const override;

 private:
  std::string command_;
};

std::vector<Detection> parse_detections(const std::string& text);

struct FaceOptions {
  double margin = 0.25;
  bool allow_fallback = true;
};

struct FaceCrop {
  Image image;
  dataset::FaceBox region;  // area of the original image that was cropped
  bool fallback = false;
};

// Manifest box first, otherwise the detector's most confident box, otherwise
// a centred square of side min(H, W). The chosen box is grown by the margin and
// clamped to the image. Throws NoFaceFound when falling back is not allowed.
FaceCrop extract_face(const dataset::PortraitRecord& record, const Image& image, const FaceDetector& detector,
                      const FaceOptions& options = {});

dataset::FaceBox expand_box(const dataset::FaceBox& box, double margin, int height, int width);
dataset::FaceBox fallback_box(int height, int width);

}  // namespace piqa::preprocess
