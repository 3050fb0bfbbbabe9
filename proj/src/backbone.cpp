#include "piqa/backbone.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "piqa/error.hpp"
#include "piqa/hash.hpp"

namespace piqa::backbone {

static_assert(std::endian::native == std::endian::little, "weights blobs are little-endian");

std::string_view to_string(Branch b) { return b == Branch::Full ? "full" : "facial"; }

Branch parse_branch(std::string_view text) {
  if (text == "full") return Branch::Full;
  if (text == "facial") return Branch::Facial;
  throw Error(Errc::ConfigError, "unknown branch '" + std::string(text) + "'");
}

void FeatureExtractor::check_input(const Tensor& input) const {
  if (input.channels != 3 || input.height != input_size() || input.width != input_size())
    throw Error(Errc::ShapeMismatch, "expected 3x" + std::to_string(input_size()) + "x" +
                                         std::to_string(input_size()) + " input, got " +
                                         std::to_string(input.channels) + "x" + std::to_string(input.height) + "x" +
                                         std::to_string(input.width));
}

nn::Matrix FeatureExtractor::extract(std::span<const Tensor> batch) const {
  nn::Matrix out(static_cast<Eigen::Index>(batch.size()), feature_dim());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_input(batch[i]);
    const nn::Vector f = forward(batch[i], nullptr);
    if (!f.allFinite()) throw Error(Errc::NonFiniteActivation, "non-finite features; weights may be corrupt");
    out.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  return out;
}

void ToyBackboneConfig::validate() const {
  if (input_size <= 0 || pool_stride <= 0 || patch_size <= 0 || embed_dim <= 0 || feature_dim <= 0)
    throw Error(Errc::ConfigError, "toy backbone sizes must be positive");
  if (input_size % (pool_stride * patch_size) != 0)
    throw Error(Errc::ConfigError, "input_size must be a multiple of pool_stride * patch_size");
}

ToyBackbone::ToyBackbone(const ToyBackboneConfig& config)
    : config_(config),
      embed_(3 * config.patch_size * config.patch_size, config.embed_dim),
      project_(config.embed_dim, config.feature_dim) {
  config_.validate();
  embed_.init_uniform(config.seed * 2 + 1);
  project_.init_uniform(config.seed * 2 + 2);
}

std::string ToyBackbone::architecture() const {
  return "toy-v1:in=" + std::to_string(config_.input_size) + ",stride=" + std::to_string(config_.pool_stride) +
         ",patch=" + std::to_string(config_.patch_size) + ",embed=" + std::to_string(config_.embed_dim) +
         ",dim=" + std::to_string(config_.feature_dim);
}

// Columns are patches, rows are (channel, dy, dx) of the pooled stem.
nn::Matrix ToyBackbone::tokens(const Tensor& input) const {
  const int stride = config_.pool_stride;
  const int patch = config_.patch_size;
  const int pooled = config_.input_size / stride;
  const int grid = pooled / patch;
  const double inv_area = 1.0 / (stride * stride);
  nn::Matrix u(3 * patch * patch, grid * grid);
  for (int c = 0; c < 3; ++c) {
    for (int py = 0; py < pooled; ++py) {
      for (int px = 0; px < pooled; ++px) {
        double acc = 0.0;
        for (int dy = 0; dy < stride; ++dy) {
          const double* row = &input.data[(static_cast<std::size_t>(c) * input.height + py * stride + dy) *
                                              input.width + px * stride];
          for (int dx = 0; dx < stride; ++dx) acc += row[dx];
        }
        const int token = (py / patch) * grid + px / patch;
        const int feature = (c * patch + py % patch) * patch + px % patch;
        u(feature, token) = acc * inv_area;
      }
    }
  }
  return u;
}

nn::Vector ToyBackbone::forward(const Tensor& input, Activations* cache) const {
  check_input(input);
  nn::Matrix u = tokens(input);
  nn::Matrix h = embed_.weight * u;
  h.colwise() += embed_.bias;
  const nn::Matrix a = h.unaryExpr([](double v) { return nn::gelu(v); });
  const nn::Vector pooled = a.rowwise().mean();
  nn::Vector out = project_.forward(pooled);
  if (cache) {
    cache->values.clear();
    cache->values.push_back(std::move(u));
    cache->values.push_back(std::move(h));
    cache->values.push_back(pooled);
  }
  return out;
}

void ToyBackbone::backward(const Tensor& input, const Activations& cache, const nn::Vector& grad_out,
                           Tensor* grad_input) {
  const nn::Matrix& u = cache.values.at(0);
  const nn::Matrix& h = cache.values.at(1);
  const nn::Vector& pooled = cache.values.at(2);
  const nn::Vector grad_pooled = project_.backward(pooled, grad_out);
  const double inv_tokens = 1.0 / static_cast<double>(h.cols());
  nn::Matrix grad_h = h.unaryExpr([](double v) { return nn::gelu_grad(v); });
  grad_h.array().colwise() *= grad_pooled.array() * inv_tokens;
  embed_.weight_grad.noalias() += grad_h * u.transpose();
  embed_.bias_grad += grad_h.rowwise().sum();
  if (!grad_input) return;

  const nn::Matrix grad_u = embed_.weight.transpose() * grad_h;
  const int stride = config_.pool_stride;
  const int patch = config_.patch_size;
  const int pooled_size = config_.input_size / stride;
  const int grid = pooled_size / patch;
  const double inv_area = 1.0 / (stride * stride);
  *grad_input = Tensor(3, input.height, input.width);
  for (int c = 0; c < 3; ++c) {
    for (int py = 0; py < pooled_size; ++py) {
      for (int px = 0; px < pooled_size; ++px) {
        const int token = (py / patch) * grid + px / patch;
        const int feature = (c * patch + py % patch) * patch + px % patch;
        const double g = grad_u(feature, token) * inv_area;
        for (int dy = 0; dy < stride; ++dy)
          for (int dx = 0; dx < stride; ++dx) grad_input->at(c, py * stride + dy, px * stride + dx) = g;
      }
    }
  }
}

std::vector<nn::ParamView> ToyBackbone::parameters() {
  std::vector<nn::ParamView> out;
  embed_.append_params("embed", out);
  project_.append_params("project", out);
  return out;
}

std::unique_ptr<FeatureExtractor> ToyBackbone::clone() const { return std::make_unique<ToyBackbone>(*this); }

std::vector<double> flatten(std::span<const nn::ParamView> params) {
  std::vector<double> out;
  out.reserve(nn::total_size(params));
  for (const auto& p : params) out.insert(out.end(), p.value.begin(), p.value.end());
  return out;
}

void unflatten(std::span<const nn::ParamView> params, std::span<const double> values) {
  if (values.size() != nn::total_size(params)) throw Error(Errc::ArchitectureMismatch, "parameter count differs");
  std::size_t offset = 0;
  for (const auto& p : params) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), p.value.size(), p.value.begin());
    offset += p.value.size();
  }
}

std::vector<std::byte> save_weights(FeatureExtractor& extractor) {
  const auto values = flatten(extractor.parameters());
  const auto bytes = std::as_bytes(std::span(values));
  return {bytes.begin(), bytes.end()};
}

BranchWeightsManifest describe_weights(FeatureExtractor& extractor, Branch branch, std::string source,
                                       std::span<const std::byte> blob) {
  return {branch, std::move(source), extractor.architecture(), extractor.feature_dim(), to_hex(fnv1a(blob))};
}

void load_weights(FeatureExtractor& extractor, const BranchWeightsManifest& manifest,
                  std::span<const std::byte> blob) {
  if (to_hex(fnv1a(blob)) != manifest.checksum)
    throw Error(Errc::ChecksumMismatch, "weights blob does not match checksum " + manifest.checksum);
  if (manifest.architecture != extractor.architecture() || manifest.feature_dim != extractor.feature_dim())
    throw Error(Errc::ArchitectureMismatch,
                "weights are for '" + manifest.architecture + "', extractor is '" + extractor.architecture() + "'");
  const auto params = extractor.parameters();
  if (blob.size() != nn::total_size(params) * sizeof(double))
    throw Error(Errc::ArchitectureMismatch, "weights blob has the wrong size");
  std::vector<double> values(nn::total_size(params));
  std::memcpy(values.data(), blob.data(), blob.size());
  for (double v : values)
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteActivation, "weights blob holds non-finite values");
  unflatten(params, values);
  extractor.set_source(manifest.source);
}

void write_weights_file(const std::filesystem::path& path, const BranchWeightsManifest& manifest,
                        std::span<const std::byte> blob) {
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  }
  nlohmann::json meta{{"branch", to_string(manifest.branch)},
                      {"source", manifest.source},
                      {"architecture", manifest.architecture},
                      {"feature_dim", manifest.feature_dim},
                      {"checksum", manifest.checksum}};
  std::ofstream out(path.string() + ".json");
  out << meta.dump(2) << '\n';
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string() + ".json");
}

std::pair<BranchWeightsManifest, std::vector<std::byte>> read_weights_file(const std::filesystem::path& path) {
  std::ifstream meta_in(path.string() + ".json");
  if (!meta_in) throw Error(Errc::MissingFile, "missing weights manifest " + path.string() + ".json");
  BranchWeightsManifest manifest;
  try {
    const auto meta = nlohmann::json::parse(meta_in);
    manifest.branch = parse_branch(meta.at("branch").get<std::string>());
    manifest.source = meta.at("source").get<std::string>();
    manifest.architecture = meta.at("architecture").get<std::string>();
    manifest.feature_dim = meta.at("feature_dim").get<int>();
    manifest.checksum = meta.at("checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("bad weights manifest: ") + e.what());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, "missing weights blob " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> blob(raw.size());
  std::memcpy(blob.data(), raw.data(), raw.size());
  return {manifest, blob};
}

}  // namespace piqa::backbone
