#include "piqa/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "piqa/error.hpp"

namespace piqa::preprocess {

void PreprocessConfig::validate() const {
  if (resize_min_dim <= 0 || crop_size <= 0) throw Error(Errc::ConfigError, "preprocess sizes must be positive");
  if (crop_size > resize_min_dim) throw Error(Errc::ConfigError, "crop_size must not exceed resize_min_dim");
  for (double s : stddev)
    if (!(s > 0.0)) throw Error(Errc::ConfigError, "normalisation stddev must be positive");
  if (!(face_margin >= 0.0)) throw Error(Errc::ConfigError, "face_margin must be non-negative");
}

namespace {

struct Taps {
  std::vector<int> first;
  std::vector<int> count;
  std::vector<double> weights;  // out_size * max_taps
  int max_taps = 0;
};

// Triangle filter; its support widens with the downscale factor.
Taps make_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double filter_scale = std::max(scale, 1.0);
  const double support = filter_scale;
  Taps t;
  t.max_taps = static_cast<int>(std::ceil(support)) * 2 + 1;
  t.first.resize(out_size);
  t.count.resize(out_size);
  t.weights.assign(static_cast<std::size_t>(out_size) * t.max_taps, 0.0);
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(center - support + 0.5));
    const int hi = std::min(in_size, static_cast<int>(center + support + 0.5));
    double total = 0.0;
    double* w = &t.weights[static_cast<std::size_t>(i) * t.max_taps];
    for (int j = lo; j < hi; ++j) {
      const double d = std::abs((j - center + 0.5) / filter_scale);
      const double v = d < 1.0 ? 1.0 - d : 0.0;
      w[j - lo] = v;
      total += v;
    }
    if (total > 0.0)
      for (int k = 0; k < hi - lo; ++k) w[k] /= total;
    t.first[i] = lo;
    t.count[i] = hi - lo;
  }
  return t;
}

}  // namespace

Image resize_min_side(const Image& image, int target) {
  if (image.empty()) throw Error(Errc::EmptyImage, "cannot resize an empty image");
  if (target <= 0) throw Error(Errc::ConfigError, "resize target must be positive");
  int out_h = 0;
  int out_w = 0;
  if (image.height <= image.width) {
    out_h = target;
    out_w = static_cast<int>(std::lround(static_cast<double>(image.width) * target / image.height));
  } else {
    out_w = target;
    out_h = static_cast<int>(std::lround(static_cast<double>(image.height) * target / image.width));
  }
  out_h = std::max(out_h, 1);
  out_w = std::max(out_w, 1);
  if (out_h == image.height && out_w == image.width) return image;

  // Horizontal pass into (in_h x out_w), then vertical.
  const Taps tx = make_taps(image.width, out_w);
  Image mid(image.height, out_w);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double* w = &tx.weights[static_cast<std::size_t>(x) * tx.max_taps];
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < tx.count[x]; ++k) acc += w[k] * image.at(y, tx.first[x] + k, c);
        mid.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  const Taps ty = make_taps(image.height, out_h);
  Image out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const double* w = &ty.weights[static_cast<std::size_t>(y) * ty.max_taps];
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < ty.count[y]; ++k) acc += w[k] * mid.at(ty.first[y] + k, x, c);
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

CropWindow crop_window(const Image& image, int size, CropMode mode, std::uint64_t seed) {
  if (image.empty()) throw Error(Errc::EmptyImage, "cannot crop an empty image");
  if (image.height < size || image.width < size)
    throw Error(Errc::ImageTooSmall, std::to_string(image.height) + "x" + std::to_string(image.width) +
                                         " image is smaller than crop " + std::to_string(size));
  if (mode == CropMode::Center) return {(image.height - size) / 2, (image.width - size) / 2, size};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> top(0, image.height - size);
  std::uniform_int_distribution<int> left(0, image.width - size);
  const int t = top(rng);
  const int l = left(rng);
  return {t, l, size};
}

Image crop_region(const Image& image, const dataset::FaceBox& region) {
  if (region.x < 0 || region.y < 0 || region.w <= 0 || region.h <= 0 || region.x + region.w > image.width ||
      region.y + region.h > image.height)
    throw Error(Errc::ShapeMismatch, "crop region outside image");
  Image out(region.h, region.w);
  for (int y = 0; y < region.h; ++y) {
    const float* src = &image.pixels[(static_cast<std::size_t>(region.y + y) * image.width + region.x) * 3];
    std::copy(src, src + static_cast<std::size_t>(region.w) * 3, &out.pixels[static_cast<std::size_t>(y) * region.w * 3]);
  }
  return out;
}

Image crop(const Image& image, int size, CropMode mode, std::uint64_t seed) {
  const auto w = crop_window(image, size, mode, seed);
  if (w.top == 0 && w.left == 0 && image.height == size && image.width == size) return image;
  return crop_region(image, {w.left, w.top, size, size});
}

Tensor normalize(const Image& image, const PreprocessConfig& config) {
  Tensor t(3, image.height, image.width);
  for (int c = 0; c < 3; ++c) {
    const double m = config.mean[c];
    const double s = config.stddev[c];
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) t.at(c, y, x) = (image.at(y, x, c) - m) / s;
  }
  return t;
}

Tensor prepare_input(const Image& image, const PreprocessConfig& config, CropMode mode, std::uint64_t seed) {
  return normalize(crop(resize_min_side(image, config.resize_min_dim), config.crop_size, mode, seed), config);
}

ExternalDetector::ExternalDetector(std::string command) : command_(std::move(command)) {}

std::vector<Detection> parse_detections(const std::string& text) {
  std::vector<Detection> out;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream fields(line);
    Detection d;
    if (!(fields >> d.box.x >> d.box.y >> d.box.w >> d.box.h >> d.confidence))
      throw Error(Errc::IoError, "bad detector line: " + line);
    out.push_back(d);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  return out;
}

std::vector<Detection> ExternalDetector::detect(const Image& image) const {
  const auto tmp = std::filesystem::temp_directory_path() /
                   ("piqa_detect_" + std::to_string(image_checksum(image)) + ".png");
  save_image(image, tmp);
  const std::string cmd = command_ + " '" + tmp.string() + "'";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(tmp);
    throw Error(Errc::IoError, "cannot start detector: " + command_);
  }
  std::string output;
  char buf[512];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) output.append(buf, n);
  const int status = ::pclose(pipe);
  std::filesystem::remove(tmp);
  if (status != 0) throw Error(Errc::IoError, "detector exited with status " + std::to_string(status));
  return parse_detections(output);
}

dataset::FaceBox expand_box(const dataset::FaceBox& box, double margin, int height, int width) {
  const int dx = static_cast<int>(std::lround(margin * box.w));
  const int dy = static_cast<int>(std::lround(margin * box.h));
  const int x0 = std::clamp(box.x - dx, 0, width);
  const int y0 = std::clamp(box.y - dy, 0, height);
  const int x1 = std::clamp(box.x + box.w + dx, 0, width);
  const int y1 = std::clamp(box.y + box.h + dy, 0, height);
  return {x0, y0, x1 - x0, y1 - y0};
}

dataset::FaceBox fallback_box(int height, int width) {
  const int side = std::min(height, width);
  return {(width - side) / 2, (height - side) / 2, side, side};
}

FaceCrop extract_face(const dataset::PortraitRecord& record, const Image& image, const FaceDetector& detector,
                      const FaceOptions& options) {
  if (image.empty()) throw Error(Errc::EmptyImage, "cannot extract a face from an empty image");
  std::optional<dataset::FaceBox> box = record.face_box;
  if (!box) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& d : detector.detect(image)) {
      if (d.box.w > 0 && d.box.h > 0 && d.confidence > best) {
        best = d.confidence;
        box = d.box;
      }
    }
  }
  if (box) {
    const auto region = expand_box(*box, options.margin, image.height, image.width);
    if (region.w > 0 && region.h > 0) return {crop_region(image, region), region, false};
  }
  if (!options.allow_fallback) throw Error(Errc::NoFaceFound, "no face in " + record.image_ref.string());
  const auto region = fallback_box(image.height, image.width);
  return {crop_region(image, region), region, true};
}

}  // namespace piqa::preprocess
