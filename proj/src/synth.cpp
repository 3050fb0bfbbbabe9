#include "piqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "piqa/error.hpp"

namespace piqa::synth {

Portrait render_portrait(int scene, int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double hue = 0.15 + 0.7 * std::fmod(scene * 0.37, 1.0);
  const double phase = unit(rng) * 6.28318;

  Portrait p{Image(height, width), {}};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double gx = static_cast<double>(x) / width;
      const double gy = static_cast<double>(y) / height;
      const double texture = 0.08 * std::sin(18.0 * gx + phase) * std::cos(14.0 * gy + 0.5 * phase);
      p.image.at(y, x, 0) = static_cast<float>(0.25 + 0.5 * hue * gx + texture);
      p.image.at(y, x, 1) = static_cast<float>(0.3 + 0.3 * (1.0 - hue) * gy + texture);
      p.image.at(y, x, 2) = static_cast<float>(0.35 + 0.25 * hue + texture);
    }
  }
  const int fw = std::max(16, static_cast<int>(width * (0.22 + 0.1 * unit(rng))));
  const int fh = std::max(16, static_cast<int>(fw * 1.3));
  const int fx = static_cast<int>((width - fw) * (0.3 + 0.4 * unit(rng)));
  const int fy = static_cast<int>((height - fh) * (0.2 + 0.4 * unit(rng)));
  p.face = {fx, fy, fw, std::min(fh, height - fy)};
  const double cx = fx + fw / 2.0;
  const double cy = fy + fh / 2.0;
  for (int y = fy; y < fy + p.face.h; ++y) {
    for (int x = fx; x < fx + fw; ++x) {
      const double dx = (x - cx) / (fw / 2.0);
      const double dy = (y - cy) / (fh / 2.0);
      if (dx * dx + dy * dy > 1.0) continue;
      const double shade = 0.05 * std::sin(40.0 * dx) * std::sin(30.0 * dy);
      p.image.at(y, x, 0) = static_cast<float>(0.85 + shade);
      p.image.at(y, x, 1) = static_cast<float>(0.66 + shade);
      p.image.at(y, x, 2) = static_cast<float>(0.55 + shade);
    }
  }
  return p;
}

namespace {

Image box_blur(const Image& in, int radius) {
  if (radius <= 0) return in;
  Image tmp(in.height, in.width);
  Image out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        int n = 0;
        for (int k = std::max(0, x - radius); k <= std::min(in.width - 1, x + radius); ++k, ++n) acc += in.at(y, k, c);
        tmp.at(y, x, c) = static_cast<float>(acc / n);
      }
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        int n = 0;
        for (int k = std::max(0, y - radius); k <= std::min(in.height - 1, y + radius); ++k, ++n) acc += tmp.at(k, x, c);
        out.at(y, x, c) = static_cast<float>(acc / n);
      }
  return out;
}

}  // namespace

Image degrade(const Image& image, const Degradation& d, std::uint64_t seed) {
  Image out = box_blur(image, d.blur_radius);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out.pixels) {
    const double noisy = v + d.exposure + (d.noise > 0.0 ? d.noise * normal(rng) : 0.0);
    v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
  return out;
}

double synthetic_jod(const Degradation& d, dataset::Attribute attribute, int scene) {
  const double offset = 0.5 * scene;
  switch (attribute) {
    case dataset::Attribute::Overall: return offset + 3.0 - 10.0 * d.noise - 0.5 * d.blur_radius - 4.0 * std::abs(d.exposure);
    case dataset::Attribute::Details: return offset + 3.0 - 10.0 * d.noise - 0.5 * d.blur_radius;
    case dataset::Attribute::Exposure: return offset + 3.0 - 4.0 * std::abs(d.exposure);
  }
  return offset;
}

std::vector<dataset::ManifestRow> generate_dataset(const std::filesystem::path& dir, const SynthOptions& o) {
  if (o.scenes <= 0 || o.per_scene < 2) throw Error(Errc::ConfigError, "need scenes > 0 and per_scene >= 2");
  std::filesystem::create_directories(dir / "images");
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<dataset::ManifestRow> rows;
  const int n_train = std::max(1, static_cast<int>(std::lround(o.per_scene * (1.0 - o.val_fraction))));
  int line = 2;
  for (int s = 0; s < o.scenes; ++s) {
    const std::string scene = "scene_" + std::to_string(s);
    for (int i = 0; i < o.per_scene; ++i) {
      const auto base = render_portrait(s, o.height, o.width, o.seed * 1000 + s * 100 + i);
      Degradation d;
      d.noise = 0.12 * unit(rng);
      d.blur_radius = static_cast<int>(unit(rng) * 4.0);
      d.exposure = 0.3 * (unit(rng) - 0.5);
      const auto image = degrade(base.image, d, rng());
      const std::string rel = "images/" + scene + "_" + std::to_string(i) + ".png";
      save_image(image, dir / rel);
      for (auto attribute : {dataset::Attribute::Overall, dataset::Attribute::Exposure, dataset::Attribute::Details}) {
        dataset::ManifestRow row;
        row.line = line++;
        row.image_path = rel;
        row.scene_id = scene;
        row.split = i < n_train ? dataset::Split::Train : dataset::Split::Val;
        row.attribute = attribute;
        row.jod = synthetic_jod(d, attribute, s);
        if (o.face_boxes) row.face_box = base.face;
        rows.push_back(row);
      }
    }
  }
  dataset::write_manifest(dir / "manifest.csv", rows);
  return rows;
}

}  // namespace piqa::synth
