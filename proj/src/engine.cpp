#include "piqa/engine.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "piqa/error.hpp"
#include "piqa/hash.hpp"
#include "piqa/ranking.hpp"

namespace piqa::engine {

using nlohmann::json;

double lr_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs)
    throw Error(Errc::EpochOutOfRange,
                "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
  if (epoch < config.lr_decay_after_epochs) return config.lr_initial;
  // 1e-5 / 10 is one ulp above 1e-6; snap to the nearest 15-digit decimal.
  char text[32];
  std::snprintf(text, sizeof(text), "%.15g", config.lr_initial / config.lr_decay_factor);
  return std::strtod(text, nullptr);
}

RecordCache::RecordCache(const QualityModel& model, const preprocess::FaceDetector& detector, bool keep_images)
    : model_(model), detector_(detector), keep_images_(keep_images) {}

ModelInputs RecordCache::inputs(const dataset::PortraitRecord& record, preprocess::CropMode mode,
                                std::uint64_t seed) {
  if (!keep_images_) return model_.make_inputs(model_.prepare(record, detector_), mode, seed);
  const std::string key = record.image_ref.string();
  std::shared_ptr<const PreparedImages> prepared;
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) prepared = it->second;
  }
  if (!prepared) {
    prepared = std::make_shared<const PreparedImages>(model_.prepare(record, detector_));
    std::lock_guard lock(mutex_);
    entries_.emplace(key, prepared);
  }
  return model_.make_inputs(*prepared, mode, seed);
}

TrainState make_state(const RunConfig& config) {
  config.validate();
  return TrainState{QualityModel(config.model, config.preprocess, config.train.seed), nn::Adam{}, 0, 0,
                    std::mt19937_64(derive_seed(config.train.seed, {0x7a11})), json::array(), -2.0};
}

double train_step(std::span<const dataset::PairSample> batch, QualityModel& model, nn::Adam& optimizer, double lr,
                  const InputFn& inputs, std::uint64_t seed) {
  if (batch.empty()) throw Error(Errc::LengthMismatch, "train_step needs a non-empty batch");
  const auto params = model.parameters();
  nn::zero_grads(params);

  // Pairs are independent under the mean reduction, so each one is
  // forwarded and back-propagated before the next is loaded.
  const std::size_t n = batch.size();
  const double inv = 1.0 / static_cast<double>(n);
  double mean = 0.0;
  ForwardTrace x_trace;
  ForwardTrace y_trace;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pair = batch[i];
    if (pair.x.scene_id != pair.y.scene_id)
      throw Error(Errc::NoValidScene, "pair spans scenes " + pair.x.scene_id + " and " + pair.y.scene_id);
    const ModelInputs x_in = inputs(pair.x, derive_seed(seed, {i, 0}));
    const ModelInputs y_in = inputs(pair.y, derive_seed(seed, {i, 1}));
    const double qx = model.forward(x_in, x_trace);
    const double qy = model.forward(y_in, y_trace);
    if (!std::isfinite(qx) || !std::isfinite(qy)) {
      std::ostringstream diag;
      diag << "non-finite score in pair " << i << ": (" << qx << ", " << qy << ")";
      throw Error(Errc::NonFiniteLoss, diag.str());
    }
    const auto p = ranking::pair_loss(qx, qy, pair.label);
    mean += p.loss * inv;
    model.backward(x_in, x_trace, p.grad_x * inv);
    model.backward(y_in, y_trace, p.grad_y * inv);
  }
  if (!std::isfinite(mean)) throw Error(Errc::NonFiniteLoss, "non-finite batch loss");
  optimizer.step(params, lr);
  return mean;
}

PairAccuracy pair_accuracy(std::span<const dataset::PairSample> pairs, const QualityModel& model,
                           const InputFn& inputs) {
  PairAccuracy out;
  if (pairs.empty()) return out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double qx = model.score(inputs(pairs[i].x, derive_seed(0, {i, 0})));
    const double qy = model.score(inputs(pairs[i].y, derive_seed(0, {i, 1})));
    const auto p = ranking::pair_loss(qx, qy, pairs[i].label);
    if ((pairs[i].label == 1 && p.p_hat > 0.5) || (pairs[i].label == 0 && p.p_hat < 0.5)) ++correct;
    out.mean_loss += p.loss;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
  out.mean_loss /= static_cast<double>(pairs.size());
  return out;
}

std::vector<double> score_records(std::span<const dataset::PortraitRecord> records, const Scorer& scorer,
                                  int workers) {
  std::vector<double> scores(records.size());
  const auto n_workers = static_cast<std::size_t>(std::max(1, std::min<int>(workers, static_cast<int>(records.size()))));
  if (n_workers <= 1) {
    for (std::size_t i = 0; i < records.size(); ++i) scores[i] = scorer(records[i]);
    return scores;
  }
  std::vector<std::exception_ptr> errors(records.size());
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
          try {
            scores[i] = scorer(records[i]);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return scores;
}

metrics::MetricReport evaluate(std::span<const dataset::PortraitRecord> records, const Scorer& scorer,
                               std::size_t min_scene_size, int workers) {
  if (records.empty()) throw Error(Errc::EmptySplit, "no records to evaluate");
  const auto scores = score_records(records, scorer, workers);
  std::vector<metrics::ScoredRecord> scored;
  scored.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) scored.push_back({records[i].scene_id, scores[i], records[i].jod});
  auto report = metrics::evaluate_grouped(scored, min_scene_size);
  report.attribute = dataset::to_string(records.front().attribute);
  return report;
}

metrics::MetricReport evaluate(std::span<const dataset::PortraitRecord> records, const QualityModel& model,
                               RecordCache& cache, std::size_t min_scene_size, int workers) {
  return evaluate(
      records,
      [&](const dataset::PortraitRecord& r) { return model.score(cache.inputs(r, preprocess::CropMode::Center, 0)); },
      min_scene_size, workers);
}

Checkpoint capture(TrainState& state, const RunConfig& config) {
  Checkpoint c;
  c.config = to_json(config);
  c.grid_hash = state.model.grid().hash();
  c.epoch = state.epoch;
  c.step = state.step;
  std::ostringstream rng;
  rng << state.rng;
  c.rng_state = rng.str();
  c.metric_history = state.metric_history;
  if (const auto* b = state.model.full_branch()) c.provenance["full"] = b->source();
  if (const auto* b = state.model.facial_branch()) c.provenance["facial"] = b->source();
  c.best_srcc = state.best_srcc;
  c.parameters = backbone::flatten(state.model.parameters());
  c.adam_steps = state.optimizer.steps();
  c.adam_m = state.optimizer.first_moment();
  c.adam_v = state.optimizer.second_moment();
  return c;
}

namespace {

constexpr char kMagic[8] = {'P', 'I', 'Q', 'A', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw Error(Errc::VersionMismatch, "truncated checkpoint");
  return value;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (std::uint64_t{1} << 34)) throw Error(Errc::VersionMismatch, "corrupt checkpoint");
  std::vector<double> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw Error(Errc::VersionMismatch, "truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  json meta{{"config", c.config},
            {"grid_hash", to_hex(c.grid_hash)},
            {"epoch", c.epoch},
            {"step", c.step},
            {"rng_state", c.rng_state},
            {"metric_history", c.metric_history},
            {"provenance", c.provenance},
            {"best_srcc", c.best_srcc},
            {"adam_steps", c.adam_steps}};
  const std::string text = meta.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_doubles(out, c.parameters);
    put<std::uint64_t>(out, c.adam_m.size());
    for (std::size_t k = 0; k < c.adam_m.size(); ++k) {
      put_doubles(out, c.adam_m[k]);
      put_doubles(out, c.adam_v[k]);
    }
    if (!out) throw Error(Errc::IoError, "failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const prompt::PromptGrid& grid) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, "cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error(Errc::VersionMismatch, path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw Error(Errc::VersionMismatch, "checkpoint version " + std::to_string(version) + " is not supported");
  const auto len = get<std::uint64_t>(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw Error(Errc::VersionMismatch, "truncated checkpoint");

  Checkpoint c;
  try {
    const json meta = json::parse(text);
    c.config = meta.at("config");
    const auto hash = meta.at("grid_hash").get<std::string>();
    if (hash != to_hex(grid.hash()))
      throw Error(Errc::HashMismatch, "checkpoint prompt grid " + hash + " differs from " + to_hex(grid.hash()));
    c.grid_hash = grid.hash();
    c.epoch = meta.at("epoch").get<int>();
    c.step = meta.at("step").get<std::int64_t>();
    c.rng_state = meta.at("rng_state").get<std::string>();
    c.metric_history = meta.at("metric_history");
    c.provenance = meta.at("provenance");
    c.best_srcc = meta.at("best_srcc").get<double>();
    c.adam_steps = meta.at("adam_steps").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw Error(Errc::VersionMismatch, std::string("bad checkpoint metadata: ") + e.what());
  }
  c.parameters = get_doubles(in);
  const auto slots = get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < slots; ++k) {
    c.adam_m.push_back(get_doubles(in));
    c.adam_v.push_back(get_doubles(in));
  }
  return c;
}

TrainState restore(const Checkpoint& checkpoint, RunConfig* config_out) {
  const RunConfig config = parse_run_config(checkpoint.config);
  TrainState state = make_state(config);
  if (state.model.grid().hash() != checkpoint.grid_hash)
    throw Error(Errc::HashMismatch, "checkpoint prompt grid differs from this build");
  const auto params = state.model.parameters();
  if (checkpoint.parameters.size() != nn::total_size(params))
    throw Error(Errc::ArchitectureMismatch, "checkpoint parameter count does not match its config");
  backbone::unflatten(params, checkpoint.parameters);
  if (!checkpoint.adam_m.empty()) state.optimizer.restore(checkpoint.adam_steps, checkpoint.adam_m, checkpoint.adam_v);
  state.epoch = checkpoint.epoch;
  state.step = checkpoint.step;
  std::istringstream rng(checkpoint.rng_state);
  rng >> state.rng;
  state.metric_history = checkpoint.metric_history;
  state.best_srcc = checkpoint.best_srcc;
  if (auto* b = state.model.full_branch(); b && checkpoint.provenance.contains("full"))
    b->set_source(checkpoint.provenance.at("full").get<std::string>());
  if (auto* b = state.model.facial_branch(); b && checkpoint.provenance.contains("facial"))
    b->set_source(checkpoint.provenance.at("facial").get<std::string>());
  if (config_out) *config_out = config;
  return state;
}

namespace {

void load_branch_weights(QualityModel& model, const PathsConfig& paths) {
  auto load = [](backbone::FeatureExtractor* branch, const std::filesystem::path& path, backbone::Branch expected) {
    if (path.empty() || !branch) return;
    auto [manifest, blob] = backbone::read_weights_file(path);
    if (manifest.branch != expected)
      throw Error(Errc::ConfigError, path.string() + " holds " + std::string(backbone::to_string(manifest.branch)) +
                                         " weights");
    backbone::load_weights(*branch, manifest, blob);
  };
  load(model.full_branch(), paths.full_weights, backbone::Branch::Full);
  load(model.facial_branch(), paths.facial_weights, backbone::Branch::Facial);
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
}

}  // namespace

TrainResult train(const RunConfig& input_config, const TrainOptions& options) {
  RunConfig config = input_config;
  config.validate();
  if (config.train.deterministic) config.train.workers = 1;

  std::vector<dataset::PortraitRecord> records = options.records;
  if (records.empty()) records = dataset::load_manifest(config.paths.manifest, config.train.attribute);
  const auto train_records = dataset::filter_split(records, dataset::Split::Train);
  auto val_records = dataset::filter_split(records, dataset::Split::Val);
  if (train_records.empty()) throw Error(Errc::EmptySplit, "no training records");
  if (val_records.empty()) val_records = train_records;

  std::optional<TrainState> resumed;
  if (options.resume_from) resumed.emplace(restore(load_checkpoint(*options.resume_from, prompt::build_grid())));
  TrainResult result{config.paths.output_dir, resumed ? std::move(*resumed) : make_state(config), {}};
  TrainState& state = result.state;
  if (!options.resume_from) load_branch_weights(state.model, config.paths);

  const auto& run_dir = result.run_dir;
  if (run_dir.empty()) throw Error(Errc::ConfigError, "paths.output_dir is required");
  std::filesystem::create_directories(run_dir / "checkpoints");
  std::filesystem::create_directories(run_dir / "reports");
  write_json(run_dir / "config.json", to_json(config));
  prompt::export_grid(state.model.grid(), run_dir / "prompts.txt");

  std::ofstream log(run_dir / "train_log.jsonl", options.resume_from ? std::ios::app : std::ios::trunc);
  if (!log) throw Error(Errc::IoError, "cannot write training log");

  const preprocess::ManifestBoxDetector manifest_boxes;
  const preprocess::FaceDetector& detector = options.detector ? *options.detector : manifest_boxes;
  RecordCache cache(state.model, detector, config.train.cache_images);
  const InputFn train_inputs = [&](const dataset::PortraitRecord& r, std::uint64_t seed) {
    return cache.inputs(r, preprocess::CropMode::Random, seed);
  };

  const dataset::SceneIndex index(train_records);
  const std::size_t pairs_per_epoch = config.train.pairs_per_epoch ? config.train.pairs_per_epoch : train_records.size();
  const auto batch = static_cast<std::size_t>(config.train.batch_size);

  for (int epoch = state.epoch; epoch < config.train.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config.train);
    const auto pairs = dataset::sample_pairs(index, train_records, pairs_per_epoch, state.rng());
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < pairs.size(); begin += batch) {
      const auto count = std::min(batch, pairs.size() - begin);
      const double loss = train_step(std::span(pairs).subspan(begin, count), state.model, state.optimizer, lr,
                                     train_inputs, state.rng());
      ++state.step;
      ++steps;
      loss_sum += loss;
      result.step_losses.push_back(loss);
      log << json{{"step", state.step}, {"epoch", epoch}, {"lr", lr}, {"loss", loss}}.dump() << '\n';
      log.flush();
    }
    state.epoch = epoch + 1;

    json entry{{"epoch", epoch}, {"lr", lr}, {"train_loss", loss_sum / static_cast<double>(steps)}};
    json report_doc;
    std::optional<double> val_srcc;
    try {
      const auto report = evaluate(val_records, state.model, cache, config.train.min_scene_size, config.train.workers);
      report_doc = metrics::to_json(report);
      entry["val"] = report_doc.at("averaged");
      val_srcc = report.averaged.srcc;
    } catch (const Error& e) {
      if (e.code() != Errc::NoQualifyingScene) throw;
      report_doc = {{"schema_version", metrics::kReportSchemaVersion}, {"error", e.what()}};
      entry["val"] = nullptr;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%02d.json", epoch);
    write_json(run_dir / "reports" / name, report_doc);
    state.metric_history.push_back(entry);
    write_json(run_dir / "metrics_history.json", state.metric_history);

    const bool improved = val_srcc && *val_srcc > state.best_srcc;
    if (improved) state.best_srcc = *val_srcc;
    const auto checkpoint = capture(state, config);
    if (improved) save_checkpoint(run_dir / "checkpoints" / "best.ckpt", checkpoint);
    save_checkpoint(run_dir / "checkpoints" / "last.ckpt", checkpoint);
  }
  return result;
}

}  // namespace piqa::engine
