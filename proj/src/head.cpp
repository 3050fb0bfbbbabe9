#include "piqa/head.hpp"

#include <cmath>

#include "piqa/error.hpp"

namespace piqa::head {

namespace {

void check_stream(const std::optional<nn::Vector>& stream, const std::optional<int>& expected, const char* name) {
  if (stream.has_value() != expected.has_value())
    throw Error(Errc::DimMismatch, std::string(name) + " stream presence differs from the configured layout");
  if (stream && stream->size() != *expected)
    throw Error(Errc::DimMismatch, std::string(name) + " stream has " + std::to_string(stream->size()) +
                                       " dims, expected " + std::to_string(*expected));
}

}  // namespace

FeatureBundle fuse(std::optional<nn::Vector> full, std::optional<nn::Vector> facial, std::optional<nn::Vector> prompt,
                   const std::optional<FusionLayout>& layout) {
  if (!full && !facial && !prompt) throw Error(Errc::AllStreamsAbsent, "at least one feature stream is required");
  if (layout) {
    check_stream(full, layout->full, "full");
    check_stream(facial, layout->facial, "facial");
    check_stream(prompt, layout->prompt, "prompt");
  }
  FeatureBundle b{std::move(full), std::move(facial), std::move(prompt), {}};
  const Eigen::Index n = (b.full ? b.full->size() : 0) + (b.facial ? b.facial->size() : 0) +
                         (b.prompt ? b.prompt->size() : 0);
  b.concat.resize(n);
  Eigen::Index offset = 0;
  for (const auto* s : {&b.full, &b.facial, &b.prompt}) {
    if (!*s) continue;
    b.concat.segment(offset, (*s)->size()) = **s;
    offset += (*s)->size();
  }
  return b;
}

RegressionHead::RegressionHead(const HeadConfig& config, std::uint64_t seed)
    : config_(config), hidden_(config.input_dim, config.hidden_dim), output_(config.hidden_dim, 1) {
  if (config.input_dim <= 0 || config.hidden_dim <= 0) throw Error(Errc::ConfigError, "head dims must be positive");
  hidden_.init_uniform(seed * 2 + 11);
  output_.init_uniform(seed * 2 + 12);
}

double RegressionHead::forward(const nn::Vector& features, HeadActivations* cache) const {
  if (features.size() != config_.input_dim)
    throw Error(Errc::DimMismatch, "head expects " + std::to_string(config_.input_dim) + " inputs, got " +
                                       std::to_string(features.size()));
  nn::Vector pre = hidden_.forward(features);
  nn::Vector act = pre.unaryExpr([](double v) { return nn::gelu(v); });
  const double score = output_.forward(act)(0);
  if (cache) {
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(act);
  }
  return score;
}

nn::Vector RegressionHead::backward(const nn::Vector& features, const HeadActivations& cache, double grad_out) {
  nn::Vector g(1);
  g(0) = grad_out;
  nn::Vector grad_hidden = output_.backward(cache.hidden, g);
  grad_hidden.array() *= cache.hidden_pre.unaryExpr([](double v) { return nn::gelu_grad(v); }).array();
  return hidden_.backward(features, grad_hidden);
}

void RegressionHead::zero_output_layer() {
  output_.weight.setZero();
  output_.bias.setZero();
}

std::vector<nn::ParamView> RegressionHead::parameters() {
  std::vector<nn::ParamView> out;
  hidden_.append_params("head.hidden", out);
  output_.append_params("head.output", out);
  return out;
}

double predict_score(const FeatureBundle& bundle, const RegressionHead& head) {
  const double score = head.forward(bundle.concat);
  if (!std::isfinite(score)) throw Error(Errc::NonFiniteOutput, "head produced a non-finite score");
  return score;
}

}  // namespace piqa::head
