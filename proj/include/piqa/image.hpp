#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace piqa {

// RGB image, interleaved rows, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // height * width * 3

  Image() = default;
  Image(int h, int w, float fill = 0.0f);

  bool empty() const noexcept { return height <= 0 || width <= 0; }
  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

// Planar 3 x H x W model input.
struct Tensor {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

struct ImageSize {
  int height = 0;
  int width = 0;
};

// Throws Error{MissingFile} when the file cannot be opened or decoded.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

// Reads only the header for PNG/JPEG; decodes the whole file for other formats.
std::optional<ImageSize> probe_image_size(const std::filesystem::path& path);

// Content key over 8-bit quantised pixels.
std::uint64_t image_checksum(const Image& image);

}  // namespace piqa
