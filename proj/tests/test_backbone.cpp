#include <gtest/gtest.h>

#include <cmath>

#include "piqa/backbone.hpp"
#include "piqa/error.hpp"
#include "piqa/model.hpp"
#include "piqa/nn.hpp"
#include "support.hpp"

using namespace piqa;
using namespace piqa::backbone;

namespace {

Tensor random_tensor(int size, std::mt19937_64& rng) {
  Tensor t(3, size, size);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.data) v = n(rng);
  return t;
}

ToyBackbone toy(int dim, std::uint64_t seed, int size = 384) {
  ToyBackboneConfig c;
  c.feature_dim = dim;
  c.seed = seed;
  c.input_size = size;
  return ToyBackbone(c);
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::IoError;
}

}  // namespace

TEST(Backbone, ShapeContract) {
  auto net = toy(16, 1);
  std::vector<Tensor> zeros(2, Tensor(3, 384, 384));
  const auto out = net.extract(zeros);
  EXPECT_EQ(out.rows(), 2);
  EXPECT_EQ(out.cols(), 16);
  EXPECT_TRUE(out.allFinite());

  std::mt19937_64 rng(4);
  std::vector<Tensor> batch;
  for (int i = 0; i < 12; ++i) batch.push_back(random_tensor(384, rng));
  EXPECT_EQ(net.extract(batch).rows(), 12);
  EXPECT_EQ(net.extract(std::span(batch).first(1)).cols(), 16);

  auto wide = toy(1024, 1);
  EXPECT_EQ(wide.extract(zeros).cols(), 1024);
  EXPECT_EQ(wide.feature_dim(), 1024);

  std::vector<Tensor> wrong{Tensor(3, 224, 224)};
  EXPECT_EQ(code_of([&] { net.extract(wrong); }), Errc::ShapeMismatch);
  std::vector<Tensor> gray{Tensor(1, 384, 384)};
  EXPECT_EQ(code_of([&] { net.extract(gray); }), Errc::ShapeMismatch);
}

TEST(Backbone, DeterministicAndSeedDependent) {
  std::mt19937_64 rng(5);
  std::vector<Tensor> batch{random_tensor(384, rng)};
  const auto a = toy(16, 1), b = toy(16, 2);
  const auto first = a.extract(batch);
  const auto second = a.extract(batch);
  EXPECT_EQ(first, second);
  EXPECT_GT((first - b.extract(batch)).norm(), 1e-6);
}

TEST(Backbone, CorruptWeightsAreReported) {
  auto net = toy(16, 1);
  net.parameters()[0].value[3] = std::numeric_limits<double>::quiet_NaN();
  std::vector<Tensor> zeros(1, Tensor(3, 384, 384));
  EXPECT_EQ(code_of([&] { net.extract(zeros); }), Errc::NonFiniteActivation);
}

TEST(Backbone, InputGradientMatchesFiniteDifferences) {
  auto net = toy(16, 3, 64);
  std::mt19937_64 rng(6);
  Tensor x = random_tensor(64, rng);
  nn::Vector w = nn::Vector::Random(16);
  Activations cache;
  net.forward(x, &cache);
  Tensor grad;
  net.backward(x, cache, w, &grad);
  std::uniform_int_distribution<int> pix(0, 63), ch(0, 2);
  const double h = 1e-4;
  for (int k = 0; k < 40; ++k) {
    const int c = ch(rng), y = pix(rng), xx = pix(rng);
    Tensor p = x, m = x;
    p.at(c, y, xx) += h;
    m.at(c, y, xx) -= h;
    const double fd = (w.dot(net.forward(p, nullptr)) - w.dot(net.forward(m, nullptr))) / (2 * h);
    const double an = grad.at(c, y, xx);
    EXPECT_LE(std::abs(fd - an), 1e-3 * std::max(std::abs(fd), 1e-6)) << c << "," << y << "," << xx;
  }
}

TEST(Backbone, ParameterGradientMatchesFiniteDifferences) {
  auto net = toy(8, 4, 64);
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor(64, rng);
  const nn::Vector w = nn::Vector::Random(8);
  auto params = net.parameters();
  nn::zero_grads(params);
  Activations cache;
  net.forward(x, &cache);
  net.backward(x, cache, w, nullptr);
  const double h = 1e-5;
  for (auto& p : params) {
    std::uniform_int_distribution<std::size_t> pick(0, p.value.size() - 1);
    for (int k = 0; k < 10; ++k) {
      const auto i = pick(rng);
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double fp = w.dot(net.forward(x, nullptr));
      p.value[i] = orig - h;
      const double fm = w.dot(net.forward(x, nullptr));
      p.value[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      EXPECT_NEAR(p.grad[i], fd, 1e-3 * std::max(std::abs(fd), 1e-4)) << p.name << "[" << i << "]";
    }
  }
}

TEST(Backbone, BranchesHoldDisjointParameters) {
  QualityModel model(ModelConfig{.full_backbone{.feature_dim = 16, .seed = 1},
                                 .facial_backbone{.feature_dim = 16, .seed = 1}},
                     {}, 9);
  std::mt19937_64 rng(8);
  std::vector<Tensor> batch{random_tensor(384, rng)};
  const auto full_before = model.full_branch()->extract(batch);
  const auto facial_before = model.facial_branch()->extract(batch);
  // same config seed, still independent initialisations
  EXPECT_GT((full_before - facial_before).norm(), 1e-6);
  for (auto& p : model.facial_branch()->parameters())
    for (auto& v : p.value) v *= 1.5;
  EXPECT_EQ(model.full_branch()->extract(batch), full_before);
  EXPECT_NE(model.facial_branch()->extract(batch), facial_before);
}

TEST(Weights, RoundTripAndGuards) {
  auto src = toy(16, 21);
  const auto blob = save_weights(src);
  const auto manifest = describe_weights(src, Branch::Facial, "face-IQA-pretrained", blob);
  auto dst = toy(16, 99);
  load_weights(dst, manifest, blob);
  EXPECT_EQ(save_weights(dst), blob);
  EXPECT_EQ(dst.source(), "face-IQA-pretrained");
  EXPECT_EQ(dst.feature_dim(), 16);

  auto bad = blob;
  bad[17] ^= std::byte{0x40};
  EXPECT_EQ(code_of([&] { load_weights(dst, manifest, bad); }), Errc::ChecksumMismatch);

  auto big = toy(1024, 1);
  const auto big_blob = save_weights(big);
  const auto big_manifest = describe_weights(big, Branch::Full, "general-VQA-pretrained", big_blob);
  EXPECT_EQ(code_of([&] { load_weights(dst, big_manifest, big_blob); }), Errc::ArchitectureMismatch);

  piqa::testing::TempDir dir;
  write_weights_file(dir / "w.bin", manifest, blob);
  const auto [m2, b2] = read_weights_file(dir / "w.bin");
  EXPECT_EQ(b2, blob);
  EXPECT_EQ(m2.checksum, manifest.checksum);
  EXPECT_EQ(m2.source, manifest.source);
  EXPECT_EQ(m2.branch, Branch::Facial);
}

TEST(Nn, GeluMatchesErfForm) {
  for (double x = -8; x <= 8; x += 0.37) {
    const long double ref = 0.5L * x * (1.0L + std::erf(static_cast<long double>(x) / std::sqrt(2.0L)));
    EXPECT_NEAR(nn::gelu(x), static_cast<double>(ref), 1e-14);
    const double fd = (nn::gelu(x + 1e-6) - nn::gelu(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(nn::gelu_grad(x), fd, 1e-7);
  }
}

TEST(Nn, AdamFirstStepsByHand) {
  std::vector<double> value{1.0, -2.0};
  std::vector<double> grad{0.5, -0.1};
  std::vector<nn::ParamView> params{{"p", value, grad}};
  nn::Adam adam;
  adam.step(params, 0.1);
  // first bias-corrected step moves each coordinate by lr * sign(g)
  EXPECT_NEAR(value[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(value[1], -2.0 + 0.1 * 0.1 / (0.1 + 1e-8), 1e-12);
  grad = {0.25, 0.3};
  adam.step(params, 0.1);
  const double m = 0.9 * 0.1 * 0.5 + 0.1 * 0.25;
  const double v = 0.999 * 0.001 * 0.25 + 0.001 * 0.0625;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(value[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
  EXPECT_EQ(adam.steps(), 2);
}
