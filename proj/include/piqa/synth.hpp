#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "piqa/dataset.hpp"
#include "piqa/image.hpp"

namespace piqa::synth {

// Degradations applied to a clean synthetic portrait.
struct Degradation {
  double noise = 0.0;     // Gaussian sigma in [0, 1] units
  int blur_radius = 0;    // box blur radius in pixels
  double exposure = 0.0;  // additive brightness offset
};

struct Portrait {
  Image image;
  dataset::FaceBox face;
};

// Scene-dependent background with one elliptical face.
Portrait render_portrait(int scene, int height, int width, std::uint64_t seed);
Image degrade(const Image& image, const Degradation& d, std::uint64_t seed);

// Scene-relative quality per attribute; larger is better.
double synthetic_jod(const Degradation& d, dataset::Attribute attribute, int scene);

struct SynthOptions {
  int scenes = 3;
  int per_scene = 10;
  int height = 448;
  int width = 576;
  double val_fraction = 0.3;
  std::uint64_t seed = 0;
  bool face_boxes = true;
};

// Writes PNG images and manifest.csv (rows for every attribute) into `dir`.
std::vector<dataset::ManifestRow> generate_dataset(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace piqa::synth
