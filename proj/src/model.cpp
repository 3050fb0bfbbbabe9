#include "piqa/model.hpp"

#include <cmath>

#include "piqa/error.hpp"

namespace piqa {

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  for (auto p : parts) h = mix(h ^ mix(p));
  return h;
}

namespace {

std::unique_ptr<backbone::FeatureExtractor> make_branch(backbone::ToyBackboneConfig cfg, std::uint64_t seed,
                                                        std::uint64_t branch) {
  cfg.seed = derive_seed(seed, {branch, cfg.seed});
  return std::make_unique<backbone::ToyBackbone>(cfg);
}

int head_width(const ModelConfig& c) {
  return (c.use_full ? c.full_backbone.feature_dim : 0) + (c.use_facial ? c.facial_backbone.feature_dim : 0) +
         (c.use_liqe ? prompt::kPromptCount : 0);
}

}  // namespace

QualityModel::QualityModel(const ModelConfig& config, const preprocess::PreprocessConfig& preprocess,
                           std::uint64_t seed)
    : config_(config), preprocess_(preprocess), grid_(prompt::build_grid()) {
  config_.validate();
  preprocess_.validate();
  if (config_.use_full) full_ = make_branch(config_.full_backbone, seed, 1);
  if (config_.use_facial) facial_ = make_branch(config_.facial_backbone, seed, 2);
  head_ = head::RegressionHead({head_width(config_), config_.hidden_dim}, derive_seed(seed, {0x4845ad}));
  if (config_.zero_init_output) head_.zero_output_layer();
  provider_ = std::make_shared<prompt::StubEmbeddingProvider>(config_.embedding_dim, config_.logit_scale);
}

QualityModel::QualityModel(const QualityModel& other)
    : config_(other.config_),
      preprocess_(other.preprocess_),
      full_(other.full_ ? other.full_->clone() : nullptr),
      facial_(other.facial_ ? other.facial_->clone() : nullptr),
      head_(other.head_),
      grid_(other.grid_),
      provider_(other.provider_) {}

QualityModel& QualityModel::operator=(const QualityModel& other) {
  if (this != &other) *this = QualityModel(other);
  return *this;
}

head::FusionLayout QualityModel::layout() const {
  head::FusionLayout l;
  if (full_) l.full = full_->feature_dim();
  if (facial_) l.facial = facial_->feature_dim();
  if (config_.use_liqe) l.prompt = static_cast<int>(grid_.size());
  return l;
}

PreparedImages QualityModel::prepare(const dataset::PortraitRecord& record, const preprocess::FaceDetector& detector,
                                     bool allow_fallback) const {
  return prepare(record, load_image(record.image_ref), detector, allow_fallback);
}

PreparedImages QualityModel::prepare(const dataset::PortraitRecord& record, const Image& image,
                                     const preprocess::FaceDetector& detector, bool allow_fallback) const {
  PreparedImages out;
  if (full_ || config_.use_liqe) {
    Image resized = preprocess::resize_min_side(image, preprocess_.resize_min_dim);
    if (config_.use_liqe) {
      const auto f = prompt::compute_prompt_features(resized, grid_, *provider_);
      out.prompt = Eigen::Map<const nn::Vector>(f.probs.data(), static_cast<Eigen::Index>(f.probs.size()));
    }
    if (full_) out.full = std::move(resized);
  }
  if (facial_) {
    auto face = preprocess::extract_face(record, image, detector, {preprocess_.face_margin, allow_fallback});
    out.face_fallback = face.fallback;
    out.face_region = face.region;
    out.facial = preprocess::resize_min_side(face.image, preprocess_.resize_min_dim);
  }
  return out;
}

ModelInputs QualityModel::make_inputs(const PreparedImages& prepared, preprocess::CropMode mode,
                                      std::uint64_t seed) const {
  ModelInputs in;
  const int size = preprocess_.crop_size;
  if (full_) {
    if (!prepared.full) throw Error(Errc::ShapeMismatch, "prepared images lack the full image");
    in.full = std::make_shared<const Tensor>(
        preprocess::normalize(preprocess::crop(*prepared.full, size, mode, derive_seed(seed, {1})), preprocess_));
  }
  if (facial_) {
    if (!prepared.facial) throw Error(Errc::ShapeMismatch, "prepared images lack the face crop");
    in.facial = std::make_shared<const Tensor>(
        preprocess::normalize(preprocess::crop(*prepared.facial, size, mode, derive_seed(seed, {2})), preprocess_));
  }
  if (config_.use_liqe) {
    if (!prepared.prompt) throw Error(Errc::ShapeMismatch, "prepared images lack prompt features");
    in.prompt = prepared.prompt;
  }
  return in;
}

head::FeatureBundle QualityModel::features(const ModelInputs& inputs, ForwardTrace* trace) const {
  std::optional<nn::Vector> full;
  std::optional<nn::Vector> facial;
  if (full_) {
    if (!inputs.full) throw Error(Errc::ShapeMismatch, "missing full-image input");
    full = full_->forward(*inputs.full, trace ? &trace->full : nullptr);
    if (!full->allFinite()) throw Error(Errc::NonFiniteActivation, "full branch produced non-finite features");
  }
  if (facial_) {
    if (!inputs.facial) throw Error(Errc::ShapeMismatch, "missing facial input");
    facial = facial_->forward(*inputs.facial, trace ? &trace->facial : nullptr);
    if (!facial->allFinite()) throw Error(Errc::NonFiniteActivation, "facial branch produced non-finite features");
  }
  std::optional<nn::Vector> prompt;
  if (config_.use_liqe) prompt = inputs.prompt;
  return head::fuse(std::move(full), std::move(facial), std::move(prompt), layout());
}

double QualityModel::score(const ModelInputs& inputs) const { return head::predict_score(features(inputs), head_); }

double QualityModel::forward(const ModelInputs& inputs, ForwardTrace& trace) const {
  trace.bundle = features(inputs, &trace);
  const double s = head_.forward(trace.bundle.concat, &trace.head);
  if (!std::isfinite(s)) throw Error(Errc::NonFiniteOutput, "head produced a non-finite score");
  return s;
}

void QualityModel::backward(const ModelInputs& inputs, const ForwardTrace& trace, double grad_score) {
  const nn::Vector grad = head_.backward(trace.bundle.concat, trace.head, grad_score);
  Eigen::Index offset = 0;
  if (full_) {
    const auto d = full_->feature_dim();
    full_->backward(*inputs.full, trace.full, grad.segment(offset, d), nullptr);
    offset += d;
  }
  if (facial_) {
    const auto d = facial_->feature_dim();
    facial_->backward(*inputs.facial, trace.facial, grad.segment(offset, d), nullptr);
  }
}

std::vector<nn::ParamView> QualityModel::parameters() {
  std::vector<nn::ParamView> out;
  auto add = [&](std::vector<nn::ParamView> params, const std::string& prefix) {
    for (auto& p : params) {
      p.name = prefix + p.name;
      out.push_back(std::move(p));
    }
  };
  if (full_) add(full_->parameters(), "full.");
  if (facial_) add(facial_->parameters(), "facial.");
  add(head_.parameters(), "");
  return out;
}

}  // namespace piqa
