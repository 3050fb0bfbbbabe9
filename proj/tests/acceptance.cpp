// One line per acceptance criterion: "PASS [n] ..." or "FAIL [n] ...".
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "piqa/cli.hpp"
#include "piqa/engine.hpp"
#include "piqa/error.hpp"
#include "piqa/metrics.hpp"
#include "piqa/preprocess.hpp"
#include "piqa/prompt_bank.hpp"
#include "piqa/ranking.hpp"
#include "piqa/synth.hpp"
#include "support.hpp"

using namespace piqa;
using nlohmann::json;
namespace t = piqa::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

Outcome fidelity_oracle() {
  const auto start = Clock::now();
  double worst = 0;
  for (int p : {0, 1})
    for (int k = 0; k <= 10; ++k) {
      const double ph = k / 10.0;
      worst = std::max(worst, std::abs(ranking::fidelity_loss(p, ph) -
                                       static_cast<double>(t::oracle_fidelity(p, static_cast<long double>(ph)))));
    }
  const double s = seconds_since(start);
  return {worst <= 1e-9 && s < 1.0, "max err " + fmt(worst) + ", " + fmt(s) + " s"};
}

Outcome normal_cdf_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-10, 10);
  double worst = 0, anti = 0, shift = 0;
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    const long double z = (static_cast<long double>(a) - b) / std::sqrt(2.0L);
    const long double ref = 0.5L * (1.0L + std::erf(z / std::sqrt(2.0L)));
    worst = std::max(worst, std::abs(ranking::pair_probability(a, b) - static_cast<double>(ref)));
    anti = std::max(anti, std::abs(ranking::pair_probability(a, b) + ranking::pair_probability(b, a) - 1.0));
    shift = std::max(shift, std::abs(ranking::pair_probability(a + c, b + c) - ranking::pair_probability(a, b)));
  }
  return {worst <= 1e-9 && anti <= 1e-12 && shift <= 1e-12,
          "ref err " + fmt(worst) + ", antisymmetry " + fmt(anti) + ", translation " + fmt(shift)};
}

Outcome gradient_check() {
  const auto start = Clock::now();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-6, 6);
  std::bernoulli_distribution coin(0.5);
  const double h = 1e-5;
  double worst = 0;
  int used = 0;
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng), y = u(rng);
    const int label = coin(rng);
    if (std::abs(x - y) > 8) continue;
    ++used;
    const auto r = ranking::pair_loss(x, y, label);
    const double fx = (ranking::pair_loss(x + h, y, label).loss - ranking::pair_loss(x - h, y, label).loss) / (2 * h);
    const double fy = (ranking::pair_loss(x, y + h, label).loss - ranking::pair_loss(x, y - h, label).loss) / (2 * h);
    worst = std::max(worst, std::abs(r.grad_x - fx) / std::max(std::abs(fx), 1e-12));
    worst = std::max(worst, std::abs(r.grad_y - fy) / std::max(std::abs(fy), 1e-12));
  }
  const double s = seconds_since(start);
  return {worst < 1e-4 && s < 10.0, std::to_string(used) + " triples, max rel err " + fmt(worst) + ", " + fmt(s) + " s"};
}

Outcome rank_oracles() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> len(3, 50);
  std::uniform_real_distribution<double> u(-5, 5);
  std::uniform_int_distribution<int> small(0, 3);
  double worst = 0;
  int done = 0;
  while (done < 200) {
    const bool ties = done % 2;
    const auto n = len(rng);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = ties ? small(rng) : u(rng);
      b[i] = ties ? small(rng) : u(rng);
    }
    const auto constant = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    };
    if (constant(a) || constant(b)) continue;
    worst = std::max(worst, std::abs(metrics::srcc(a, b) - t::oracle_srcc(a, b)));
    worst = std::max(worst, std::abs(metrics::krcc(a, b) - t::oracle_tau_b(a, b)));
    ++done;
  }
  const std::vector<double> pred{1, 2, 3, 4, 5}, gt{1, 3, 2, 4, 5};
  const double s = metrics::srcc(pred, gt), k = metrics::krcc(pred, gt);
  return {worst <= 1e-12 && s == 0.9 && k == 0.8,
          "max err " + fmt(worst) + ", worked example SRCC " + fmt(s) + " KRCC " + fmt(k)};
}

Outcome logistic_fitting() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> hi(2, 9), lo(-4, 1), mid(-2, 2), scale(0.1, 3);
  double worst_plcc = 1.0;
  for (int draw = 0; draw < 20; ++draw) {
    const double b1 = hi(rng), b2 = lo(rng), b3 = mid(rng), b4 = scale(rng);
    std::uniform_real_distribution<double> ux(b3 - 3 * b4, b3 + 3 * b4);
    std::vector<double> x(50), y(50);
    for (int i = 0; i < 50; ++i) {
      x[i] = ux(rng);
      y[i] = b2 + (b1 - b2) / (1 + std::exp(-(x[i] - b3) / b4));
    }
    worst_plcc = std::min(worst_plcc, metrics::plcc(x, y));
  }
  std::normal_distribution<double> n(0, 1);
  std::vector<double> g(60), affine(60);
  for (int i = 0; i < 60; ++i) {
    g[i] = n(rng);
    affine[i] = 2 * g[i] + 3;
  }
  const double affine_plcc = metrics::plcc(affine, g);
  bool fallback = true;
  for (std::size_t size : {2, 3, 4}) {
    std::vector<double> p(size), q(size);
    for (std::size_t i = 0; i < size; ++i) {
      p[i] = n(rng);
      q[i] = n(rng);
    }
    fallback &= metrics::fit_logistic(p, q).fallback;
  }
  return {worst_plcc >= 0.9999 && std::abs(affine_plcc - 1.0) <= 1e-6 && fallback,
          "min 4PL PLCC " + std::to_string(worst_plcc) + ", affine PLCC " + std::to_string(affine_plcc) +
              ", fallback below 5 " + (fallback ? "yes" : "no")};
}

Outcome per_scene_protocol() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 1);
  std::vector<metrics::ScoredRecord> recs;
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < 9 + s; ++i) {
      const double g = n(rng);
      recs.push_back({"scene_" + std::to_string(s), g + 0.5 * (s + 1) * n(rng), g});
    }
  const auto report = metrics::evaluate_grouped(recs);
  std::vector<double> sv, pv, kv, mv;
  for (const auto& s : report.per_scene) {
    sv.push_back(s.srcc);
    pv.push_back(s.plcc);
    kv.push_back(s.krcc);
    mv.push_back(s.mae);
  }
  const bool exact = report.per_scene.size() == 3 && report.averaged.srcc == t::oracle_mean(sv) &&
                     report.averaged.plcc == t::oracle_mean(pv) && report.averaged.krcc == t::oracle_mean(kv) &&
                     report.averaged.mae == t::oracle_mean(mv);
  bool invariant = true;
  const auto reference = metrics::to_json(report).dump();
  for (int trial = 0; trial < 10; ++trial) {
    auto shuffled = recs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    invariant &= metrics::to_json(metrics::evaluate_grouped(shuffled)).dump() == reference;
  }
  // relabel scenes so they are visited in reverse order
  auto relabelled = recs;
  for (auto& r : relabelled) r.scene_id = "scene_" + std::to_string(2 - (r.scene_id.back() - '0'));
  const auto rev = metrics::evaluate_grouped(relabelled);
  invariant &= rev.averaged.srcc == report.averaged.srcc && rev.averaged.plcc == report.averaged.plcc &&
               rev.averaged.krcc == report.averaged.krcc && rev.averaged.mae == report.averaged.mae;
  return {exact && invariant, std::string("mean exact ") + (exact ? "yes" : "no") + ", order invariant " +
                                  (invariant ? "yes" : "no")};
}

class UniformProvider final : public prompt::EmbeddingProvider {
 public:
  std::vector<double> embed_image(const Image&) const override { return {1.0, 0.0}; }
  std::vector<double> embed_text(const std::string&) const override { return {0.6, 0.8}; }
  double logit_scale() const override { return 100.0; }
};

Outcome prompt_grid() {
  const auto grid = prompt::build_grid();
  const std::string expected = "a photo of a human with blur artifacts, which is of bad quality";
  const auto& sc = grid.scenes();
  const int human = static_cast<int>(std::find(sc.begin(), sc.end(), "human") - sc.begin());
  const bool text_ok = grid.prompts()[grid.index(human, 0, 0)] == expected;
  const auto f = prompt::compute_prompt_features(Image(4, 4, 0.5f), grid, UniformProvider{});
  const auto m = prompt::marginals(f, grid);
  double err = std::abs(m.expected_quality - 3.0);
  for (double v : m.scene) err = std::max(err, std::abs(v - 1.0 / 9));
  for (double v : m.distortion) err = std::max(err, std::abs(v - 1.0 / 11));
  for (double v : m.quality) err = std::max(err, std::abs(v - 1.0 / 5));
  return {grid.size() == 495 && text_ok && err <= 1e-6,
          std::to_string(grid.size()) + " prompts, template " + (text_ok ? "verbatim" : "differs") +
              ", marginal err " + fmt(err)};
}

Outcome overfit() {
  const auto start = Clock::now();
  const auto problem = t::make_pair_problem(4, 5, 20, 10);
  ModelConfig mc;
  mc.full_backbone.feature_dim = 16;
  mc.facial_backbone.feature_dim = 16;
  QualityModel model(mc, {}, 11);
  const auto inputs = t::cached_inputs(model, problem);
  nn::Adam adam;
  int steps = 0;
  engine::PairAccuracy acc = engine::pair_accuracy(problem.pairs, model, inputs);
  const double initial = acc.mean_loss;
  while (steps < 200 && !(acc.accuracy == 1.0 && acc.mean_loss < 0.05)) {
    std::vector<dataset::PairSample> batch;
    for (int k = 0; k < 12; ++k) batch.push_back(problem.pairs[(steps * 12 + k) % problem.pairs.size()]);
    engine::train_step(batch, model, adam, 1e-3, inputs, static_cast<std::uint64_t>(steps));
    ++steps;
    if (steps % 5 == 0 || steps == 200) acc = engine::pair_accuracy(problem.pairs, model, inputs);
  }
  const double s = seconds_since(start);
  return {acc.accuracy == 1.0 && acc.mean_loss < 0.05 && s < 60.0,
          "accuracy " + fmt(acc.accuracy) + ", loss " + fmt(initial) + " -> " + fmt(acc.mean_loss) + " after " +
              std::to_string(steps) + " steps, " + fmt(s) + " s"};
}

Outcome schedule() {
  TrainConfig c;
  bool ok = engine::lr_schedule(0, c) == 1e-5 && engine::lr_schedule(1, c) == 1e-5;
  for (int e = 2; e <= 9; ++e) ok &= engine::lr_schedule(e, c) == 1e-6;
  return {ok, "1e-5 for epochs 0-1, 1e-6 for epochs 2-9"};
}

Outcome preprocessing() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> side(448, 1100);
  preprocess::PreprocessConfig cfg;
  int shaped = 0;
  double aspect = 0;
  bool deterministic = true;
  for (int i = 0; i < 100; ++i) {
    const int h = side(rng), w = side(rng);
    const auto img = t::random_image(h, w, rng);
    const auto resized = preprocess::resize_min_side(img, cfg.resize_min_dim);
    aspect = std::max(aspect, std::abs(static_cast<double>(resized.width) * h / w - resized.height));
    const auto a = preprocess::normalize(preprocess::crop(resized, cfg.crop_size, preprocess::CropMode::Random, i), cfg);
    const auto b = preprocess::normalize(preprocess::crop(resized, cfg.crop_size, preprocess::CropMode::Random, i), cfg);
    shaped += a.channels == 3 && a.height == 384 && a.width == 384 && a.data.size() == 3u * 384 * 384;
    deterministic &= a.data == b.data;
  }
  return {shaped == 100 && aspect <= 1.0 && deterministic,
          std::to_string(shaped) + "/100 shaped 384x384x3, max aspect drift " + fmt(aspect) + " px"};
}

Outcome structural_ablation() {
  const auto problem = t::make_pair_problem(1, 3, 4, 21);
  struct Variant {
    const char* name;
    bool full, facial, liqe;
    int expected;
  };
  const Variant variants[] = {{"full", true, false, false, 1024},
                              {"facial", false, true, false, 1024},
                              {"full+facial", true, true, false, 2048},
                              {"full+facial+prompt", true, true, true, 2543}};
  bool ok = true;
  std::string dims;
  for (const auto& v : variants) {
    ModelConfig mc;
    mc.use_full = v.full;
    mc.use_facial = v.facial;
    mc.use_liqe = v.liqe;
    QualityModel model(mc, {}, 3);
    const auto inputs = t::cached_inputs(model, problem);
    nn::Adam adam;
    const double loss = engine::train_step(std::span(problem.pairs).first(4), model, adam, 1e-5, inputs, 0);
    ok &= std::isfinite(loss) && model.head_input_dim() == v.expected;
    dims += std::string(dims.empty() ? "" : ", ") + v.name + "=" + std::to_string(model.head_input_dim());
  }
  return {ok, dims};
}

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Outcome end_to_end_determinism() {
  t::TempDir dir("piqa-accept");
  if (cli_run({"--seed", "1", "synth", "--out-dir", dir.path().string()}).code != 0) return {false, "synth failed"};
  auto doc = json::parse(t::read_text(dir / "toy_config.json"));
  doc["paths"]["output_dir"] = (dir / "a").string();
  t::write_text(dir / "a.json", doc.dump());
  doc["paths"]["output_dir"] = (dir / "b").string();
  t::write_text(dir / "b.json", doc.dump());
  for (const char* name : {"a.json", "b.json"}) {
    const auto r = cli_run({"--deterministic", "--seed", "5", "train", "--config", (dir / name).string()});
    if (r.code != 0) return {false, "train failed: " + r.err};
  }
  const bool history = t::read_text(dir / "a/metrics_history.json") == t::read_text(dir / "b/metrics_history.json");
  const auto image = (dir / dataset::read_manifest(dir / "manifest.csv").front().image_path).string();
  const auto ckpt = (dir / "a/checkpoints/last.ckpt").string();
  const auto s1 = cli_run({"score", "--checkpoint", ckpt, "--image", image, "--allow-fallback", "--verbose"});
  const auto s2 = cli_run({"score", "--checkpoint", ckpt, "--image", image, "--allow-fallback", "--verbose"});
  const bool score = s1.code == 0 && s1.out == s2.out && !s1.out.empty();
  return {history && score, std::string("metric histories ") + (history ? "identical" : "differ") + ", score output " +
                                (score ? "identical" : "differs")};
}

Outcome checkpoint_round_trip() {
  t::TempDir dir("piqa-accept");
  synth::SynthOptions o;
  o.scenes = 3;
  o.per_scene = 8;
  o.seed = 2;
  synth::generate_dataset(dir / "data", o);
  auto config = t::toy_run_config(dir / "data/manifest.csv", dir / "run");
  config.train.epochs = 2;
  auto result = engine::train(config);
  const auto records = dataset::load_manifest(config.paths.manifest, config.train.attribute);
  const preprocess::ManifestBoxDetector det;
  engine::RecordCache cache(result.state.model, det, false);
  const auto before = metrics::to_json(engine::evaluate(records, result.state.model, cache)).dump();

  engine::save_checkpoint(dir / "x.ckpt", engine::capture(result.state, config));
  const auto restored = engine::restore(engine::load_checkpoint(dir / "x.ckpt", prompt::build_grid()));
  engine::RecordCache cache2(restored.model, det, false);
  const auto after = metrics::to_json(engine::evaluate(records, restored.model, cache2)).dump();
  return {before == after, before == after ? "reports identical" : "reports differ"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"fidelity loss matches extended-precision closed form", fidelity_oracle},
      {"pair probability matches reference erf", normal_cdf_oracle},
      {"pair loss gradients match central differences", gradient_check},
      {"srcc/krcc match brute-force oracles", rank_oracles},
      {"4PL fitting on logistic and affine data", logistic_fitting},
      {"per-scene averaging is exact and order free", per_scene_protocol},
      {"prompt grid size, template and uniform marginals", prompt_grid},
      {"toy model overfits 20 within-scene pairs", overfit},
      {"learning-rate schedule", schedule},
      {"preprocessing yields 384x384x3 inputs", preprocessing},
      {"ablation variants build and train one step", structural_ablation},
      {"end-to-end determinism of train and score", end_to_end_determinism},
      {"checkpoint round trip reproduces evaluation", checkpoint_round_trip},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << " (" << o.detail << ")"
              << std::endl;
  }
  std::cout << criteria.size() - failures << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
