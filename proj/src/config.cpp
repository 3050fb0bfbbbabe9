#include "piqa/config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "piqa/error.hpp"

namespace piqa {

using nlohmann::json;

void ModelConfig::validate() const {
  if (!use_full && !use_facial && !use_liqe)
    throw Error(Errc::ConfigError, "at least one of use_full, use_facial, use_liqe must be true");
  full_backbone.validate();
  facial_backbone.validate();
  if (hidden_dim <= 0) throw Error(Errc::ConfigError, "hidden_dim must be positive");
  if (embedding_dim <= 0) throw Error(Errc::ConfigError, "embedding_dim must be positive");
  if (!(logit_scale > 0.0)) throw Error(Errc::ConfigError, "logit_scale must be positive");
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw Error(Errc::ConfigError, "epochs must be positive");
  if (batch_size <= 0) throw Error(Errc::ConfigError, "batch_size must be positive");
  if (!(lr_initial > 0.0)) throw Error(Errc::ConfigError, "lr_initial must be positive");
  if (!(lr_decay_factor > 0.0)) throw Error(Errc::ConfigError, "lr_decay_factor must be positive");
  if (lr_decay_after_epochs < 0) throw Error(Errc::ConfigError, "lr_decay_after_epochs must be non-negative");
  if (workers <= 0) throw Error(Errc::ConfigError, "workers must be positive");
}

void RunConfig::validate() const {
  train.validate();
  model.validate();
  preprocess.validate();
  if (model.full_backbone.input_size != preprocess.crop_size || model.facial_backbone.input_size != preprocess.crop_size)
    throw Error(Errc::ConfigError, "backbone input_size must equal preprocess crop_size");
}

namespace {

// Reads a JSON object, rejecting keys that nobody asked for.
class Section {
 public:
  Section(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw Error(Errc::ConfigError, where_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(Errc::ConfigError, where_ + key + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!seen_.contains(key)) throw Error(Errc::ConfigError, "unknown key " + where_ + key);
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_backbone(const json& obj, const std::string& where, backbone::ToyBackboneConfig& b) {
  Section s(obj, where);
  std::string kind = "toy";
  s.read("kind", kind);
  if (kind != "toy") throw Error(Errc::ConfigError, where + "kind must be \"toy\"");
  s.read("input_size", b.input_size);
  s.read("pool_stride", b.pool_stride);
  s.read("patch_size", b.patch_size);
  s.read("embed_dim", b.embed_dim);
  s.read("feature_dim", b.feature_dim);
  s.read("seed", b.seed);
  s.finish();
}

json backbone_json(const backbone::ToyBackboneConfig& b) {
  return {{"kind", "toy"},           {"input_size", b.input_size}, {"pool_stride", b.pool_stride},
          {"patch_size", b.patch_size}, {"embed_dim", b.embed_dim},   {"feature_dim", b.feature_dim},
          {"seed", b.seed}};
}

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  Section root(doc, "");
  int version = 0;
  root.read("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw Error(Errc::ConfigError, "schema_version must be " + std::to_string(kConfigSchemaVersion));

  if (const json* t = root.child("train")) {
    Section s(*t, "train.");
    std::string attribute(dataset::to_string(cfg.train.attribute));
    s.read("attribute", attribute);
    cfg.train.attribute = dataset::parse_attribute(attribute);
    s.read("epochs", cfg.train.epochs);
    s.read("batch_size", cfg.train.batch_size);
    s.read("lr_initial", cfg.train.lr_initial);
    s.read("lr_decay_factor", cfg.train.lr_decay_factor);
    s.read("lr_decay_after_epochs", cfg.train.lr_decay_after_epochs);
    s.read("seed", cfg.train.seed);
    s.read("pairs_per_epoch", cfg.train.pairs_per_epoch);
    s.read("deterministic", cfg.train.deterministic);
    s.read("workers", cfg.train.workers);
    s.read("cache_images", cfg.train.cache_images);
    s.read("min_scene_size", cfg.train.min_scene_size);
    s.finish();
  }
  if (const json* m = root.child("model")) {
    Section s(*m, "model.");
    s.read("use_full", cfg.model.use_full);
    s.read("use_facial", cfg.model.use_facial);
    s.read("use_liqe", cfg.model.use_liqe);
    if (const json* b = s.child("full_backbone")) read_backbone(*b, "model.full_backbone.", cfg.model.full_backbone);
    if (const json* b = s.child("facial_backbone"))
      read_backbone(*b, "model.facial_backbone.", cfg.model.facial_backbone);
    s.read("hidden_dim", cfg.model.hidden_dim);
    s.read("zero_init_output", cfg.model.zero_init_output);
    s.finish();
  }
  if (const json* p = root.child("prompt")) {
    Section s(*p, "prompt.");
    std::string provider = "stub";
    s.read("provider", provider);
    if (provider != "stub") throw Error(Errc::ConfigError, "prompt.provider must be \"stub\"");
    s.read("embedding_dim", cfg.model.embedding_dim);
    s.read("logit_scale", cfg.model.logit_scale);
    s.finish();
  }
  if (const json* p = root.child("preprocess")) {
    Section s(*p, "preprocess.");
    s.read("resize_min_dim", cfg.preprocess.resize_min_dim);
    s.read("crop_size", cfg.preprocess.crop_size);
    s.read("mean", cfg.preprocess.mean);
    s.read("std", cfg.preprocess.stddev);
    s.read("face_margin", cfg.preprocess.face_margin);
    s.finish();
  }
  if (const json* p = root.child("paths")) {
    Section s(*p, "paths.");
    std::string manifest;
    std::string output_dir;
    std::string full_weights;
    std::string facial_weights;
    s.read("manifest", manifest);
    s.read("output_dir", output_dir);
    s.read("full_weights", full_weights);
    s.read("facial_weights", facial_weights);
    s.finish();
    cfg.paths = {resolve(manifest, base_dir), resolve(output_dir, base_dir), resolve(full_weights, base_dir),
                 resolve(facial_weights, base_dir)};
  }
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(doc, std::filesystem::absolute(path).parent_path());
}

json to_json(const RunConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"train",
           {{"attribute", dataset::to_string(c.train.attribute)},
            {"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"lr_initial", c.train.lr_initial},
            {"lr_decay_factor", c.train.lr_decay_factor},
            {"lr_decay_after_epochs", c.train.lr_decay_after_epochs},
            {"seed", c.train.seed},
            {"pairs_per_epoch", c.train.pairs_per_epoch},
            {"deterministic", c.train.deterministic},
            {"workers", c.train.workers},
            {"cache_images", c.train.cache_images},
            {"min_scene_size", c.train.min_scene_size}}},
          {"model",
           {{"use_full", c.model.use_full},
            {"use_facial", c.model.use_facial},
            {"use_liqe", c.model.use_liqe},
            {"full_backbone", backbone_json(c.model.full_backbone)},
            {"facial_backbone", backbone_json(c.model.facial_backbone)},
            {"hidden_dim", c.model.hidden_dim},
            {"zero_init_output", c.model.zero_init_output}}},
          {"prompt", {{"provider", "stub"}, {"embedding_dim", c.model.embedding_dim}, {"logit_scale", c.model.logit_scale}}},
          {"preprocess",
           {{"resize_min_dim", c.preprocess.resize_min_dim},
            {"crop_size", c.preprocess.crop_size},
            {"mean", c.preprocess.mean},
            {"std", c.preprocess.stddev},
            {"face_margin", c.preprocess.face_margin}}},
          {"paths",
           {{"manifest", c.paths.manifest.string()},
            {"output_dir", c.paths.output_dir.string()},
            {"full_weights", c.paths.full_weights.string()},
            {"facial_weights", c.paths.facial_weights.string()}}}};
}

}  // namespace piqa
