#include "piqa/cli.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "piqa/error.hpp"
#include "piqa/synth.hpp"

namespace piqa::cli {

using nlohmann::json;

int exit_code_for(const Error& error) {
  switch (error.code()) {
    case Errc::ConfigError:
    case Errc::EmptySplit:
    case Errc::MissingFile:
    case Errc::MalformedRow:
    case Errc::DuplicateImageRef:
    case Errc::VersionMismatch:
    case Errc::HashMismatch:
    case Errc::ChecksumMismatch:
    case Errc::ArchitectureMismatch:
      return kUsageError;
    default:
      return kRuntimeFailure;
  }
}

std::string error_line(const std::string& code, const std::string& message) {
  return json{{"error", code}, {"message", message}}.dump();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
}

std::unique_ptr<preprocess::FaceDetector> make_detector(const std::string& command) {
  if (command.empty()) return std::make_unique<preprocess::ManifestBoxDetector>();
  return std::make_unique<preprocess::ExternalDetector>(command);
}

}  // namespace

PrepareSummary cmd_prepare(const PrepareOptions& o, std::ostream& err) {
  if (o.detector != "passthrough" && o.detector != "external")
    throw Error(Errc::ConfigError, "detector must be passthrough or external");
  if (o.detector == "external" && o.detector_command.empty())
    throw Error(Errc::ConfigError, "external detector needs --detector-cmd");
  if (o.manifest_out.empty()) throw Error(Errc::ConfigError, "--out is required");
  auto rows = dataset::read_manifest(o.manifest_in);
  const auto root = o.images_root.empty() ? o.manifest_in.parent_path() : o.images_root;
  const auto detector = make_detector(o.detector == "external" ? o.detector_command : std::string());

  struct Outcome {
    bool error = false;
    bool fallback = false;
    std::optional<dataset::FaceBox> box;
  };
  std::map<std::string, Outcome> done;
  PrepareSummary summary;
  std::vector<dataset::ManifestRow> kept;
  for (auto& row : rows) {
    auto it = done.find(row.image_path);
    if (it == done.end()) {
      Outcome outcome;
      std::filesystem::path path(row.image_path);
      if (path.is_relative()) path = root / path;
      ++summary.images;
      if (row.face_box) {
        if (!probe_image_size(path)) {
          outcome.error = true;
        } else {
          outcome.box = row.face_box;
          ++summary.passthrough;
        }
      } else {
        try {
          const auto image = load_image(path);
          const auto found = detector->detect(image);
          if (found.empty()) {
            outcome.fallback = true;
          } else {
            outcome.box = found.front().box;
            ++summary.faces_found;
          }
        } catch (const Error& e) {
          if (e.code() != Errc::MissingFile) throw;
          outcome.error = true;
        }
      }
      if (outcome.error) err << error_line("MissingFile", "cannot read image " + path.string() + " (line " +
                                                               std::to_string(row.line) + ")")
                             << '\n';
      it = done.emplace(row.image_path, outcome).first;
    }
    const auto& outcome = it->second;
    if (outcome.error) {
      ++summary.errors;
      summary.error_lines.push_back(row.line);
      continue;
    }
    if (outcome.fallback) {
      ++summary.fallbacks;
      summary.fallback_lines.push_back(row.line);
    }
    row.face_box = outcome.box;
    kept.push_back(row);
  }
  dataset::write_manifest(o.manifest_out, kept);
  json doc{{"images", summary.images},         {"passthrough", summary.passthrough},
           {"faces_found", summary.faces_found}, {"fallbacks", summary.fallbacks},
           {"errors", summary.errors},           {"fallback_lines", summary.fallback_lines},
           {"error_lines", summary.error_lines}};
  write_text(o.manifest_out.string() + ".summary.json", doc.dump(2) + "\n");
  return summary;
}

engine::TrainResult cmd_train(const TrainCommandOptions& o) {
  RunConfig config = load_run_config(o.config);
  if (o.seed) config.train.seed = *o.seed;
  if (o.deterministic) config.train.deterministic = true;
  engine::TrainOptions options;
  options.resume_from = o.resume;
  return engine::train(config, options);
}

metrics::MetricReport cmd_eval(const EvalOptions& o, const engine::Scorer* scorer_override) {
  if (o.report.empty()) throw Error(Errc::ConfigError, "--out is required");
  const auto checkpoint = engine::load_checkpoint(o.checkpoint, prompt::build_grid());
  RunConfig config;
  engine::TrainState state = engine::restore(checkpoint, &config);
  const auto manifest = o.manifest.empty() ? config.paths.manifest : o.manifest;
  const auto all = dataset::load_manifest(manifest, config.train.attribute);
  const auto records = dataset::filter_split(all, o.split);
  if (records.empty())
    throw Error(Errc::EmptySplit, "split '" + std::string(dataset::to_string(o.split)) + "' has no records");

  const preprocess::ManifestBoxDetector detector;
  engine::RecordCache cache(state.model, detector, false);
  const engine::Scorer model_scorer = [&](const dataset::PortraitRecord& r) {
    return state.model.score(cache.inputs(r, preprocess::CropMode::Center, 0));
  };
  const engine::Scorer& scorer = scorer_override ? *scorer_override : model_scorer;
  const auto scores = engine::score_records(records, scorer, o.workers);
  std::vector<metrics::ScoredRecord> scored;
  for (std::size_t i = 0; i < records.size(); ++i) scored.push_back({records[i].scene_id, scores[i], records[i].jod});
  auto report = metrics::evaluate_grouped(scored, o.min_scene_size.value_or(config.train.min_scene_size));
  report.attribute = dataset::to_string(config.train.attribute);

  write_text(o.report, metrics::to_json(report).dump(2) + "\n");

  std::map<std::string, const metrics::SceneMetrics*> by_scene;
  for (const auto& s : report.per_scene) by_scene[s.scene_id] = &s;
  std::ostringstream csv;
  csv << std::setprecision(17) << "image_path,scene_id,prediction,mapped_prediction,ground_truth\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto* s = by_scene.at(records[i].scene_id);
    csv << records[i].image_ref.string() << ',' << records[i].scene_id << ',' << scores[i] << ',';
    if (s->status == metrics::SceneStatus::Included) csv << s->fit(scores[i]);
    csv << ',' << records[i].jod << '\n';
  }
  auto scatter = o.scatter;
  if (scatter.empty()) scatter = o.report.parent_path() / (o.report.stem().string() + "_scatter.csv");
  write_text(scatter, csv.str());
  return report;
}

std::string cmd_score(const ScoreOptions& o, std::ostream& err) {
  const auto checkpoint = engine::load_checkpoint(o.checkpoint, prompt::build_grid());
  engine::TrainState state = engine::restore(checkpoint);
  const auto& model = state.model;

  dataset::PortraitRecord record;
  record.image_ref = o.image;
  record.face_box = o.face_box;
  const Image image = load_image(o.image);
  if (record.face_box) {
    const auto& b = *record.face_box;
    if (b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.x + b.w > image.width || b.y + b.h > image.height)
      throw Error(Errc::ConfigError, "face box lies outside the image");
  }
  const auto detector = make_detector(o.detector_command);
  const auto prepared = model.prepare(record, image, *detector, o.allow_fallback);
  if (prepared.face_fallback)
    err << json{{"warning", "NoFaceFound"}, {"message", "using centre square crop for the facial branch"}}.dump()
        << '\n';
  const double score = model.score(model.make_inputs(prepared, preprocess::CropMode::Center, 0));

  json doc{{"image", o.image.string()}, {"score", score}};
  if (model.facial_branch()) doc["face_fallback"] = prepared.face_fallback;
  if (o.verbose) {
    const auto resized = preprocess::resize_min_side(image, model.preprocess_config().resize_min_dim);
    const auto features = prompt::compute_prompt_features(resized, model.grid(), model.provider());
    const auto m = prompt::marginals(features, model.grid());
    auto named = [](const std::vector<std::string>& names, const std::vector<double>& values) {
      json out = json::array();
      for (std::size_t i = 0; i < names.size(); ++i) out.push_back({{"name", names[i]}, {"p", values[i]}});
      return out;
    };
    doc["marginals"] = {{"scene", named(model.grid().scenes(), m.scene)},
                        {"distortion", named(model.grid().distortions(), m.distortion)},
                        {"quality", named(model.grid().levels(), m.quality)},
                        {"expected_quality", m.expected_quality}};
  }
  return doc.dump();
}

namespace {

std::optional<dataset::FaceBox> parse_box(const std::string& text) {
  if (text.empty()) return std::nullopt;
  std::string s = text;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream in(s);
  dataset::FaceBox b;
  std::string rest;
  if (!(in >> b.x >> b.y >> b.w >> b.h) || (in >> rest))
    throw Error(Errc::ConfigError, "--face expects x,y,w,h");
  return b;
}

json toy_config(const std::filesystem::path& manifest, const std::filesystem::path& output_dir) {
  return {{"schema_version", kConfigSchemaVersion},
          {"train",
           {{"attribute", "overall"},
            {"epochs", 10},
            {"batch_size", 12},
            {"lr_initial", 1e-3},
            {"seed", 7},
            {"deterministic", true},
            {"cache_images", true}}},
          {"model",
           {{"use_full", true},
            {"use_facial", true},
            {"use_liqe", true},
            {"full_backbone", {{"feature_dim", 16}, {"seed", 1}}},
            {"facial_backbone", {{"feature_dim", 16}, {"seed", 2}}},
            {"hidden_dim", 32}}},
          {"paths", {{"manifest", manifest.string()}, {"output_dir", output_dir.string()}}}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Portrait image quality assessment: dual-branch scorer trained with a pairwise fidelity loss"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string config_path;
  app.add_option("--seed", seed, "Override the run seed");
  app.add_flag("--deterministic", deterministic, "Fix RNG streams and run single-threaded");
  app.add_option("--config", config_path, "Run configuration (JSON)");

  PrepareOptions prep;
  std::string prep_in;
  std::string prep_root;
  std::string prep_out;
  auto* prepare = app.add_subcommand("prepare", "Fill face boxes into a manifest");
  prepare->add_option("--manifest", prep_in, "Input manifest")->required();
  prepare->add_option("--images-root", prep_root, "Base directory for relative image paths");
  prepare->add_option("--out", prep_out, "Output manifest")->required();
  prepare->add_option("--detector", prep.detector, "passthrough | external");
  prepare->add_option("--detector-cmd", prep.detector_command, "Command printing x,y,w,h,confidence lines");

  std::string resume;
  auto* train = app.add_subcommand("train", "Train a model from --config");
  train->add_option("--resume", resume, "Checkpoint to resume from");

  EvalOptions ev;
  std::string ev_ckpt;
  std::string ev_manifest;
  std::string ev_split = "val";
  std::string ev_out;
  std::string ev_scatter;
  std::optional<std::size_t> ev_min;
  auto* eval = app.add_subcommand("eval", "Per-scene SRCC/PLCC/KRCC/MAE on a split");
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  eval->add_option("--manifest", ev_manifest, "Manifest (defaults to the training manifest)");
  eval->add_option("--split", ev_split, "train | val | test");
  eval->add_option("--out", ev_out, "Report JSON path")->required();
  eval->add_option("--scatter", ev_scatter, "Scatter CSV path");
  eval->add_option("--workers", ev.workers, "Scoring threads");
  eval->add_option("--min-scene-size", ev_min, "Smallest scene included in the average");

  ScoreOptions sc;
  std::string sc_ckpt;
  std::string sc_image;
  std::string sc_face;
  auto* score = app.add_subcommand("score", "Score one image");
  score->add_option("--checkpoint", sc_ckpt, "Checkpoint file")->required();
  score->add_option("--image", sc_image, "Image file")->required();
  score->add_option("--face", sc_face, "Face box x,y,w,h");
  score->add_flag("--allow-fallback", sc.allow_fallback, "Use a centre crop when no face is found");
  score->add_flag("--verbose", sc.verbose, "Print prompt marginals");
  score->add_option("--detector-cmd", sc.detector_command, "External face detector command");

  synth::SynthOptions so;
  std::string synth_dir;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic toy dataset and config");
  synth_cmd->add_option("--out-dir", synth_dir, "Output directory")->required();
  synth_cmd->add_option("--scenes", so.scenes, "Number of scenes");
  synth_cmd->add_option("--per-scene", so.per_scene, "Images per scene");
  synth_cmd->add_option("--height", so.height, "Image height");
  synth_cmd->add_option("--width", so.width, "Image width");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_line("UsageError", e.what()) << '\n';
    return kUsageError;
  }

  try {
    if (prepare->parsed()) {
      prep.manifest_in = prep_in;
      prep.images_root = prep_root;
      prep.manifest_out = prep_out;
      const auto s = cmd_prepare(prep, err);
      out << json{{"images", s.images},
                  {"passthrough", s.passthrough},
                  {"faces_found", s.faces_found},
                  {"fallbacks", s.fallbacks},
                  {"errors", s.errors}}
                 .dump()
          << '\n';
      return s.errors ? kRuntimeFailure : kOk;
    }
    if (train->parsed()) {
      if (config_path.empty()) throw Error(Errc::ConfigError, "train needs --config");
      TrainCommandOptions t{config_path, seed, deterministic, std::nullopt};
      if (!resume.empty()) t.resume = resume;
      const auto result = cmd_train(t);
      out << json{{"run_dir", result.run_dir.string()},
                  {"epochs", result.state.epoch},
                  {"steps", result.state.step},
                  {"best_val_srcc", result.state.best_srcc}}
                 .dump()
          << '\n';
      return kOk;
    }
    if (eval->parsed()) {
      ev.checkpoint = ev_ckpt;
      ev.manifest = ev_manifest;
      try {
        ev.split = dataset::parse_split(ev_split);
      } catch (const Error& e) {
        throw Error(Errc::ConfigError, e.what());
      }
      ev.report = ev_out;
      ev.scatter = ev_scatter;
      ev.min_scene_size = ev_min;
      const auto report = cmd_eval(ev);
      out << json{{"report", ev.report.string()}, {"averaged", metrics::to_json(report).at("averaged")}}.dump()
          << '\n';
      return kOk;
    }
    if (score->parsed()) {
      sc.checkpoint = sc_ckpt;
      sc.image = sc_image;
      sc.face_box = parse_box(sc_face);
      out << cmd_score(sc, err) << '\n';
      return kOk;
    }
    if (synth_cmd->parsed()) {
      const std::filesystem::path dir = std::filesystem::absolute(synth_dir);
      if (seed) so.seed = *seed;
      const auto rows = synth::generate_dataset(dir, so);
      write_text(dir / "toy_config.json", toy_config(dir / "manifest.csv", dir / "run").dump(2) + "\n");
      out << json{{"manifest", (dir / "manifest.csv").string()},
                  {"config", (dir / "toy_config.json").string()},
                  {"rows", rows.size()}}
                 .dump()
          << '\n';
      return kOk;
    }
  } catch (const Error& e) {
    err << error_line(std::string(errc_name(e.code())), e.what()) << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << error_line("RuntimeError", e.what()) << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace piqa::cli
