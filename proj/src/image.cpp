#include "piqa/image.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "piqa/error.hpp"
#include "piqa/hash.hpp"

namespace piqa {

Image::Image(int h, int w, float fill)
    : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

Image load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(Errc::MissingFile, "cannot read image " + path.string());
  Image out(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(y, x, 0) = row[x][2] / 255.0f;
      out.at(y, x, 1) = row[x][1] / 255.0f;
      out.at(y, x, 2) = row[x][0] / 255.0f;
    }
  }
  return out;
}

namespace {

std::uint8_t quantise(float v) {
  const float clamped = std::fmin(1.0f, std::fmax(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

}  // namespace

void save_image(const Image& image, const std::filesystem::path& path) {
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      row[x][2] = quantise(image.at(y, x, 0));
      row[x][1] = quantise(image.at(y, x, 1));
      row[x][0] = quantise(image.at(y, x, 2));
    }
  }
  if (!cv::imwrite(path.string(), bgr)) throw Error(Errc::IoError, "cannot write image " + path.string());
}

namespace {

std::optional<ImageSize> png_size(std::ifstream& in) {
  std::array<unsigned char, 24> head{};
  in.seekg(0);
  if (!in.read(reinterpret_cast<char*>(head.data()), head.size())) return std::nullopt;
  auto be32 = [&](int off) {
    return (static_cast<std::uint32_t>(head[off]) << 24) | (static_cast<std::uint32_t>(head[off + 1]) << 16) |
           (static_cast<std::uint32_t>(head[off + 2]) << 8) | head[off + 3];
  };
  return ImageSize{static_cast<int>(be32(20)), static_cast<int>(be32(16))};
}

std::optional<ImageSize> jpeg_size(std::ifstream& in) {
  in.seekg(2);
  for (;;) {
    int marker = in.get();
    while (marker == 0xFF) marker = in.get();
    if (!in) return std::nullopt;
    const int hi = in.get();
    const int lo = in.get();
    if (!in) return std::nullopt;
    const int length = (hi << 8) | lo;
    const bool sof = marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 && marker != 0xCC;
    if (sof) {
      std::array<unsigned char, 5> body{};
      if (!in.read(reinterpret_cast<char*>(body.data()), body.size())) return std::nullopt;
      return ImageSize{(body[1] << 8) | body[2], (body[3] << 8) | body[4]};
    }
    in.seekg(length - 2, std::ios::cur);
  }
}

}  // namespace

std::optional<ImageSize> probe_image_size(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::array<unsigned char, 8> magic{};
  if (!in.read(reinterpret_cast<char*>(magic.data()), magic.size())) return std::nullopt;
  static constexpr std::array<unsigned char, 8> kPng{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (magic == kPng) return png_size(in);
  if (magic[0] == 0xFF && magic[1] == 0xD8) {
    if (auto size = jpeg_size(in)) return size;
  }
  cv::Mat decoded = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (decoded.empty()) return std::nullopt;
  return ImageSize{decoded.rows, decoded.cols};
}

std::uint64_t image_checksum(const Image& image) {
  Fnv1a h;
  const std::array<int, 2> dims{image.height, image.width};
  h.update(std::as_bytes(std::span(dims)));
  std::vector<std::uint8_t> q(image.pixels.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = quantise(image.pixels[i]);
  h.update(std::as_bytes(std::span(q)));
  return h.digest();
}

}  // namespace piqa
