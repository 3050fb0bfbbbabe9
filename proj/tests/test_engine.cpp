#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "piqa/backbone.hpp"
#include "piqa/engine.hpp"
#include "piqa/error.hpp"
#include "piqa/synth.hpp"
#include "support.hpp"

using namespace piqa;
using namespace piqa::engine;
using piqa::testing::TempDir;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::IoError;
}

ModelConfig toy_model(int dim = 16) {
  ModelConfig m;
  m.full_backbone.feature_dim = dim;
  m.facial_backbone.feature_dim = dim;
  m.hidden_dim = 32;
  return m;
}

RunConfig synthetic_run(const TempDir& dir, int epochs, int scenes = 3, int per_scene = 6) {
  synth::SynthOptions o;
  o.scenes = scenes;
  o.per_scene = per_scene;
  o.seed = 5;
  synth::generate_dataset(dir / "data", o);
  auto c = piqa::testing::toy_run_config(dir / "data/manifest.csv", dir / "run");
  c.train.epochs = epochs;
  return c;
}

}  // namespace

TEST(Schedule, DecayAfterTwoEpochs) {
  TrainConfig c;
  EXPECT_EQ(lr_schedule(0, c), 1e-5);
  EXPECT_EQ(lr_schedule(1, c), 1e-5);
  for (int e = 2; e < 10; ++e) EXPECT_EQ(lr_schedule(e, c), 1e-6);
  EXPECT_EQ(code_of([&] { lr_schedule(10, c); }), Errc::EpochOutOfRange);
  EXPECT_EQ(code_of([&] { lr_schedule(-1, c); }), Errc::EpochOutOfRange);
}

TEST(TrainStep, EqualImagesGiveHalfProbability) {
  const auto problem = piqa::testing::make_pair_problem(1, 2, 1, 3);
  QualityModel model(toy_model(), {}, 4);
  const auto inputs = piqa::testing::cached_inputs(model, problem);
  dataset::PairSample pair{problem.records[0], problem.records[0], 1};
  nn::Adam adam;
  const double loss = train_step(std::span(&pair, 1), model, adam, 1e-3, inputs, 0);
  EXPECT_EQ(loss, 1.0 - std::sqrt(0.5));
}

TEST(TrainStep, DeterministicLossTrace) {
  const auto problem = piqa::testing::make_pair_problem(2, 5, 24, 6);
  auto run = [&] {
    QualityModel model(toy_model(), {}, 7);
    const auto inputs = piqa::testing::cached_inputs(model, problem);
    nn::Adam adam;
    std::vector<double> trace;
    for (int step = 0; step < 6; ++step)
      trace.push_back(train_step(std::span(problem.pairs).subspan((step % 2) * 12, 12), model, adam, 1e-3, inputs,
                                 static_cast<std::uint64_t>(step)));
    return trace;
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_LT(a.back(), a.front());
}

TEST(TrainStep, SwapAndFlipLeavesLossUnchanged) {
  const auto problem = piqa::testing::make_pair_problem(2, 5, 30, 8);
  QualityModel model(toy_model(), {}, 9);
  const auto inputs = piqa::testing::cached_inputs(model, problem);
  auto swapped = problem.pairs;
  for (auto& p : swapped) {
    std::swap(p.x, p.y);
    p.label = 1 - p.label;
  }
  EXPECT_NEAR(pair_accuracy(problem.pairs, model, inputs).mean_loss, pair_accuracy(swapped, model, inputs).mean_loss,
              1e-9);
}

TEST(TrainStep, ToyProblemOverfits) {
  const auto problem = piqa::testing::make_pair_problem(4, 5, 20, 10);
  auto mc = toy_model();
  mc.hidden_dim = ModelConfig{}.hidden_dim;
  QualityModel model(mc, {}, 11);
  const auto inputs = piqa::testing::cached_inputs(model, problem);
  nn::Adam adam;
  auto acc = pair_accuracy(problem.pairs, model, inputs);
  int step = 0;
  for (; step < 200 && !(acc.accuracy == 1.0 && acc.mean_loss < 0.05); ++step) {
    std::vector<dataset::PairSample> batch;
    for (int k = 0; k < 12; ++k) batch.push_back(problem.pairs[(step * 12 + k) % 20]);
    train_step(batch, model, adam, 1e-3, inputs, step);
    acc = pair_accuracy(problem.pairs, model, inputs);
  }
  EXPECT_EQ(acc.accuracy, 1.0);
  EXPECT_LT(acc.mean_loss, 0.05);
  EXPECT_LT(step, 200);
}

TEST(Evaluate, OracleConstantAndSideEffects) {
  std::vector<dataset::PortraitRecord> recs;
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < 6; ++i) {
      dataset::PortraitRecord r;
      r.scene_id = "s" + std::to_string(s);
      r.image_ref = r.scene_id + "_" + std::to_string(i);
      r.jod = std::sin(i * 1.7 + s);
      recs.push_back(r);
    }
  const Scorer oracle = [](const dataset::PortraitRecord& r) { return r.jod; };
  const auto report = evaluate(recs, oracle, 2, 3);
  EXPECT_EQ(report.per_scene.size(), 3u);
  EXPECT_NEAR(report.averaged.srcc, 1.0, 1e-12);
  EXPECT_NEAR(report.averaged.plcc, 1.0, 1e-9);
  EXPECT_NEAR(report.averaged.mae, 0.0, 1e-6);
  EXPECT_EQ(metrics::to_json(evaluate(recs, oracle, 2, 1)), metrics::to_json(report));

  const Scorer constant = [](const dataset::PortraitRecord&) { return 0.25; };
  EXPECT_EQ(code_of([&] { evaluate(recs, constant); }), Errc::NoQualifyingScene);
  EXPECT_EQ(code_of([&] { evaluate({}, oracle); }), Errc::EmptySplit);
}

TEST(Evaluate, ModelOnSyntheticScenes) {
  TempDir dir;
  const auto config = synthetic_run(dir, 1);
  const auto records = dataset::load_manifest(config.paths.manifest, config.train.attribute);
  const auto state = make_state(config);
  const preprocess::ManifestBoxDetector det;
  RecordCache cache(state.model, det, true);
  const auto a = evaluate(records, state.model, cache);
  const auto b = evaluate(records, state.model, cache, 2, 4);
  EXPECT_EQ(a.per_scene.size(), 3u);
  EXPECT_EQ(metrics::to_json(a), metrics::to_json(b));
  std::vector<double> v;
  for (const auto& s : a.per_scene) v.push_back(s.srcc);
  EXPECT_EQ(a.averaged.srcc, piqa::testing::oracle_mean(v));
}

TEST(Checkpoint, RoundTripAndGuards) {
  TempDir dir;
  auto config = piqa::testing::toy_run_config(dir / "m.csv", dir / "run");
  auto state = make_state(config);
  state.epoch = 3;
  state.step = 17;
  state.rng.discard(5);
  auto ckpt = capture(state, config);
  save_checkpoint(dir / "a.ckpt", ckpt);
  const auto loaded = load_checkpoint(dir / "a.ckpt", prompt::build_grid());
  EXPECT_EQ(loaded.parameters, ckpt.parameters);
  EXPECT_EQ(loaded.config, ckpt.config);
  EXPECT_EQ(loaded.rng_state, ckpt.rng_state);
  RunConfig back;
  auto restored = restore(loaded, &back);
  EXPECT_EQ(backbone::flatten(restored.model.parameters()), backbone::flatten(state.model.parameters()));
  EXPECT_EQ(restored.epoch, 3);
  EXPECT_EQ(restored.step, 17);
  EXPECT_EQ(restored.rng(), state.rng());
  EXPECT_EQ(to_json(back), to_json(config));

  auto scenes = prompt::build_grid().scenes();
  std::swap(scenes[0], scenes[1]);
  const auto base = prompt::build_grid();
  const prompt::PromptGrid reordered(scenes, base.distortions(), base.levels());
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "a.ckpt", reordered); }), Errc::HashMismatch);

  {
    std::fstream f(dir / "a.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 7;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "a.ckpt", base); }), Errc::VersionMismatch);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "none.ckpt", base); }), Errc::MissingFile);
}

TEST(Train, RunDirectoryAndResume) {
  TempDir dir;
  auto config = synthetic_run(dir, 3);
  auto full = train(config);
  for (const char* f : {"config.json", "prompts.txt", "train_log.jsonl", "metrics_history.json",
                        "checkpoints/last.ckpt", "reports/epoch_00.json", "reports/epoch_02.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
  EXPECT_EQ(full.state.epoch, 3);

  // Two epochs, then resume for the third.
  auto partial = config;
  partial.paths.output_dir = dir / "run2";
  partial.train.epochs = 2;
  train(partial);
  auto rest = config;
  rest.paths.output_dir = dir / "run2";
  TrainOptions opts;
  opts.resume_from = dir / "run2/checkpoints/last.ckpt";
  auto resumed = train(rest, opts);
  EXPECT_EQ(resumed.state.metric_history, full.state.metric_history);
  EXPECT_EQ(backbone::flatten(resumed.state.model.parameters()), backbone::flatten(full.state.model.parameters()));
  EXPECT_EQ(piqa::testing::read_text(dir / "run2/train_log.jsonl"), piqa::testing::read_text(dir / "run/train_log.jsonl"));
  std::ifstream log(dir / "run2/train_log.jsonl");
  std::string line, last;
  while (std::getline(log, line)) last = line;
  EXPECT_EQ(nlohmann::json::parse(last).at("lr").get<double>(), 1e-4);
}

TEST(Train, ResumeAtEpochTwoUsesDecayedRate) {
  TempDir dir;
  auto config = synthetic_run(dir, 2, 2, 4);
  config.train.lr_initial = 1e-5;
  train(config);
  config.train.epochs = 3;
  TrainOptions opts;
  opts.resume_from = dir / "run/checkpoints/last.ckpt";
  const auto r = train(config, opts);
  ASSERT_FALSE(r.step_losses.empty());
  std::ifstream log(dir / "run/train_log.jsonl");
  std::string line;
  std::vector<nlohmann::json> entries;
  while (std::getline(log, line)) entries.push_back(nlohmann::json::parse(line));
  const auto first_resumed =
      std::find_if(entries.begin(), entries.end(), [](const auto& e) { return e.at("epoch") == 2; });
  ASSERT_NE(first_resumed, entries.end());
  EXPECT_EQ(first_resumed->at("lr").get<double>(), 1e-6);
}

TEST(Train, WeightProvenanceReachesCheckpoint) {
  TempDir dir;
  auto config = synthetic_run(dir, 1, 2, 4);
  backbone::ToyBackbone donor(config.model.facial_backbone);
  const auto blob = backbone::save_weights(donor);
  backbone::write_weights_file(dir / "facial.bin",
                               backbone::describe_weights(donor, backbone::Branch::Facial, "face-IQA-pretrained", blob),
                               blob);
  config.paths.facial_weights = dir / "facial.bin";
  train(config);
  const auto ckpt = load_checkpoint(dir / "run/checkpoints/last.ckpt", prompt::build_grid());
  EXPECT_EQ(ckpt.provenance.at("facial"), "face-IQA-pretrained");
  EXPECT_EQ(ckpt.provenance.at("full"), "random");

  config.paths.full_weights = dir / "facial.bin";
  EXPECT_EQ(code_of([&] { train(config); }), Errc::ConfigError);
}

TEST(Config, StrictParsing) {
  const nlohmann::json ok = {{"schema_version", 1}, {"train", {{"epochs", 4}}}};
  EXPECT_EQ(parse_run_config(ok).train.epochs, 4);
  EXPECT_EQ(code_of([] { parse_run_config({{"schema_version", 1}, {"trian", nlohmann::json::object()}}); }),
            Errc::ConfigError);
  EXPECT_EQ(code_of([] { parse_run_config({{"schema_version", 1}, {"train", {{"epoch", 3}}}}); }),
            Errc::ConfigError);
  EXPECT_EQ(code_of([] {
              parse_run_config(
                  {{"schema_version", 1}, {"model", {{"use_full", false}, {"use_facial", false}, {"use_liqe", false}}}});
            }),
            Errc::ConfigError);
  EXPECT_EQ(code_of([] { parse_run_config({{"schema_version", 2}}); }), Errc::ConfigError);
  EXPECT_EQ(code_of([] { parse_run_config({{"schema_version", 1}, {"train", {{"epochs", "ten"}}}}); }),
            Errc::ConfigError);

  RunConfig c = piqa::testing::toy_run_config("/x/m.csv", "/x/run");
  c.train.epochs = 7;
  c.model.use_liqe = false;
  EXPECT_EQ(to_json(parse_run_config(to_json(c))), to_json(c));
}
