#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "piqa/preprocess.hpp"
#include "piqa/synth.hpp"

namespace piqa::testing {

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    path_ = base / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    if (std::filesystem::create_directories(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Image random_image(int height, int width, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(height, width);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double oracle_pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<long double>(a.size());
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

std::vector<double> oracle_ranks(std::span<const double> v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) less += 1;
      else if (v[j] == v[i]) equal += 1;
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

double oracle_srcc(std::span<const double> pred, std::span<const double> gt) {
  const auto a = oracle_ranks(pred);
  const auto b = oracle_ranks(gt);
  return oracle_pearson(a, b);
}

double oracle_tau_b(std::span<const double> pred, std::span<const double> gt) {
  long long concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      const double dx = pred[i] - pred[j];
      const double dy = gt[i] - gt[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) ++tie_x;
      else if (dy == 0) ++tie_y;
      else if ((dx > 0) == (dy > 0)) ++concordant;
      else ++discordant;
    }
  const long double n1 = concordant + discordant + tie_x;
  const long double n2 = concordant + discordant + tie_y;
  return static_cast<double>((concordant - discordant) / std::sqrt(n1 * n2));
}

long double oracle_phi(long double z) { return 0.5L * std::erfc(-z / std::sqrt(2.0L)); }

long double oracle_fidelity(int p, long double p_hat) {
  return 1.0L - std::sqrt(p * p_hat) - std::sqrt((1.0L - p) * (1.0L - p_hat));
}

double oracle_mean(std::span<const double> values) {
  boost::multiprecision::cpp_bin_float_100 total = 0;
  for (double v : values) total += v;
  return total.convert_to<double>() / static_cast<double>(values.size());
}

RunConfig toy_run_config(const std::filesystem::path& manifest, const std::filesystem::path& output_dir,
                         int feature_dim) {
  RunConfig c;
  c.model.full_backbone.feature_dim = feature_dim;
  c.model.facial_backbone.feature_dim = feature_dim;
  c.model.hidden_dim = 32;
  c.train.lr_initial = 1e-3;
  c.train.seed = 11;
  c.train.deterministic = true;
  c.train.cache_images = true;
  c.paths.manifest = manifest;
  c.paths.output_dir = output_dir;
  return c;
}

ToyPairProblem make_pair_problem(int scenes, int per_scene, std::size_t n_pairs, std::uint64_t seed) {
  ToyPairProblem p;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.08), exposure(-0.25, 0.25);
  std::uniform_int_distribution<int> blur(0, 4);
  for (int s = 0; s < scenes; ++s) {
    for (int i = 0; i < per_scene; ++i) {
      auto portrait = synth::render_portrait(s, 448, 576, rng());
      const synth::Degradation d{noise(rng), blur(rng), exposure(rng)};
      dataset::PortraitRecord r;
      r.image_ref = "mem/" + std::to_string(s) + "_" + std::to_string(i) + ".png";
      r.scene_id = "scene_" + std::to_string(s);
      r.jod = synth::synthetic_jod(d, dataset::Attribute::Overall, s);
      r.face_box = portrait.face;
      p.images.push_back(synth::degrade(portrait.image, d, rng()));
      p.records.push_back(r);
    }
  }
  const dataset::SceneIndex index(p.records);
  p.pairs = dataset::sample_pairs(index, p.records, n_pairs, rng());
  return p;
}

engine::InputFn cached_inputs(const QualityModel& model, const ToyPairProblem& problem) {
  auto table = std::make_shared<std::map<std::string, ModelInputs>>();
  const preprocess::ManifestBoxDetector detector;
  for (std::size_t i = 0; i < problem.records.size(); ++i) {
    const auto prepared = model.prepare(problem.records[i], problem.images[i], detector);
    (*table)[problem.records[i].image_ref.string()] =
        model.make_inputs(prepared, preprocess::CropMode::Center, 0);
  }
  return [table](const dataset::PortraitRecord& r, std::uint64_t) { return table->at(r.image_ref.string()); };
}

}  // namespace piqa::testing
