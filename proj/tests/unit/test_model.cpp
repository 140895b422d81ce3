#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "glfeat/errors.hpp"
#include "glfeat/layers.hpp"
#include "glfeat/model.hpp"
#include "model_checks.hpp"
#include "oracles.hpp"

using namespace glfeat;
using namespace glfeat::model;

namespace {

template <typename T>
FeatureMap<T> random_map(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureMap<T> m(c, h, w);
  for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = static_cast<T>(n(rng));
  return m;
}

}  // namespace

TEST(Layers, OneByOneConvIsMatrixProduct) {
  ParamLayout layout;
  const auto conv = layers::Conv2d::create(layout, "c", 5, 3, 1);
  ParameterStore<double> p(layout);
  p[conv.weight].values = Vector<double>::LinSpaced(15, -1.0, 1.0);
  p[conv.bias].values << 0.5, -0.5, 2.0;
  const auto x = random_map<double>(5, 4, 6, 1);
  const auto y = conv.forward<double>(x, p, nullptr);
  const Eigen::Map<const RowMatrix<double>> w(p[conv.weight].values.data(), 3, 5);
  const RowMatrix<double> want = (w * x.data).colwise() + p[conv.bias].values;
  EXPECT_LT((y.data - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Layers, ThreeByThreeConvZeroPadsBorders) {
  ParamLayout layout;
  const auto conv = layers::Conv2d::create(layout, "c", 1, 1, 3);
  ParameterStore<double> p(layout);
  p[conv.weight].values.setOnes();
  FeatureMap<double> x(1, 3, 3);
  x.data.setOnes();
  const auto y = conv.forward<double>(x, p, nullptr);
  EXPECT_EQ(y.at(0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 1), 6.0);
  EXPECT_EQ(y.at(0, 1, 1), 9.0);
}

TEST(Layers, ParamCountOfAbsentConvIsZero) {
  ParamLayout layout;
  EXPECT_EQ(layers::Conv2d::create(layout, "a", 0, 4, 3).param_count(), 0u);
  EXPECT_EQ(layers::Conv2d::create(layout, "b", 4, 0, 1).param_count(), 0u);
  EXPECT_EQ(layers::Conv2d::create(layout, "c", 4, 2, 3).param_count(), 74u);
}

TEST(Layers, MaxPoolTiesPickFirstPixel) {
  FeatureMap<double> x(1, 2, 2);
  x.data << 1, 3, 3, 0;
  layers::MaxPoolCache<double> cache;
  const auto y = layers::max_pool(x, 2, &cache);
  EXPECT_EQ(y.at(0, 0, 0), 3.0);
  FeatureMap<double> dy(1, 1, 1);
  dy.data << 1.0;
  const auto dx = layers::max_pool_backward(dy, cache);
  EXPECT_EQ(dx.at(0, 0, 1), 1.0);
  EXPECT_EQ(dx.at(0, 1, 0), 0.0);
}

TEST(Layers, UpsampleSameSizeIsIdentityAndConstantPreserving) {
  const auto x = random_map<double>(2, 5, 7, 2);
  EXPECT_LT((layers::upsample_bilinear(x, 5, 7).data - x.data).cwiseAbs().maxCoeff(), 1e-15);
  FeatureMap<double> c(1, 2, 3);
  c.data.setConstant(0.7);
  const auto u = layers::upsample_bilinear(c, 16, 24);
  EXPECT_LT((u.data.array() - 0.7).abs().maxCoeff(), 1e-15);
}

TEST(Layers, UpsampleBackwardIsAdjoint) {
  const auto x = random_map<double>(3, 2, 4, 3);
  const auto dy = random_map<double>(3, 8, 16, 4);
  const double lhs = layers::upsample_bilinear(x, 8, 16).data.cwiseProduct(dy.data).sum();
  const double rhs = x.data.cwiseProduct(layers::upsample_bilinear_backward(dy, 2, 4).data).sum();
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(PositionalEmbedding, ValuesAndRange) {
  const auto pe = positional_embedding(3, 5, 8);
  EXPECT_EQ(pe.at(0, 2, 0), 0.0);
  EXPECT_EQ(pe.at(1, 2, 0), 1.0);
  EXPECT_DOUBLE_EQ(pe.at(0, 0, 3), std::sin(3.0));
  EXPECT_DOUBLE_EQ(pe.at(3, 2, 1), std::cos(2.0));
  const double w1 = 1.0 / std::pow(10000.0, 4.0 / 8);
  EXPECT_DOUBLE_EQ(pe.at(4, 0, 3), std::sin(w1 * 3));
  EXPECT_DOUBLE_EQ(pe.at(6, 2, 0), std::sin(w1 * 2));
  EXPECT_LE(pe.data.cwiseAbs().maxCoeff(), 1.0);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int k = 0; k < 2; ++k) {
        const double s = pe.at(4 * k, y, x), c = pe.at(4 * k + 1, y, x);
        EXPECT_NEAR(s * s + c * c, 1.0, 1e-15);
      }
    }
  }
  EXPECT_THROW(positional_embedding(2, 2, 6), ArgumentError);
}

TEST(ModelConfig, DigestTracksCanonicalForm) {
  ModelConfig a, b;
  EXPECT_EQ(a.digest(), b.digest());
  b.global_enhancement = false;
  EXPECT_NE(a.digest(), b.digest());
  b = a;
  b.widths[3] = 130;
  EXPECT_THROW(b.validate(), ArgumentError);
  b.widths[3] = 0;
  EXPECT_THROW(b.validate(), ArgumentError);
}

TEST(ParamCount, DefaultModel) {
  ModelConfig with, without;
  without.global_enhancement = false;
  EXPECT_EQ(param_count(with), 362033u);
  EXPECT_EQ(param_count(without), 328945u);
  EXPECT_EQ(param_count(with) - param_count(without), 33088u);
  EXPECT_EQ(GLFeatNet(with).param_breakdown().global_enhancement, 33088u);
  EXPECT_EQ(GLFeatNet(with).layout().scalar_count(), 362033u);
}

TEST(ParamCount, MatchesClosedFormOverConfigs) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> width(1, 40);
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig c;
    for (int& w : c.widths) w = width(rng);
    c.widths[3] = 4 * width(rng);
    c.fusion_width = width(rng);
    c.descriptor_dim = width(rng);
    c.encoder_kernel = 1 + 2 * (trial % 3);
    c.global_enhancement = trial % 2;
    const long want = oracle::param_count({c.widths[0], c.widths[1], c.widths[2], c.widths[3]},
                                          c.fusion_width, c.descriptor_dim, c.encoder_kernel,
                                          c.global_enhancement);
    EXPECT_EQ(static_cast<long>(param_count(c)), want);
  }
}

class ModelShapes : public ::testing::TestWithParam<std::pair<int, int>> {};

TEST_P(ModelShapes, PyramidAndOutputs) {
  const auto [h, w] = GetParam();
  const GLFeatNet net;
  const auto p = net.init_parameters<float>(1);
  const auto img = random_map<float>(3, h, w, 2);
  const auto pyr = net.encode(img, p);
  EXPECT_EQ(pyr.f1.channels, 16);
  EXPECT_EQ(pyr.f1.height, h);
  EXPECT_EQ(pyr.f2.channels, 32);
  EXPECT_EQ(pyr.f2.height, h / 2);
  EXPECT_EQ(pyr.f2.width, w / 2);
  EXPECT_EQ(pyr.f3.channels, 64);
  EXPECT_EQ(pyr.f3.height, h / 8);
  EXPECT_EQ(pyr.f4.channels, 128);
  EXPECT_EQ(pyr.f4.height, h / 32);
  EXPECT_EQ(pyr.f4.width, w / 32);
  const auto fg = net.global_enhance(pyr.f4, p);
  EXPECT_TRUE(fg.same_shape(pyr.f4));
  const auto fused = net.fuse(pyr, fg, p);
  EXPECT_EQ(fused.channels, 129);
  EXPECT_EQ(fused.height, h);
  EXPECT_EQ(fused.width, w);
  const auto out = net.forward(img, p);
  EXPECT_EQ(out.score.channels, 1);
  EXPECT_EQ(out.descriptors.channels, 128);
  EXPECT_EQ(out.descriptors.height, h);
  const Vector<float> norms = out.descriptors.data.colwise().norm();
  EXPECT_LT((norms.array() - 1.0f).abs().maxCoeff(), 1e-5f);
}

INSTANTIATE_TEST_SUITE_P(Sizes, ModelShapes,
                         ::testing::Values(std::pair{32, 32}, std::pair{64, 96},
                                           std::pair{128, 128}));

TEST(Model, RejectsBadImages) {
  const GLFeatNet net;
  const auto p = net.init_parameters<float>(1);
  EXPECT_THROW(net.forward(FeatureMap<float>(3, 48, 64), p), ShapeError);
  EXPECT_THROW(net.forward(FeatureMap<float>(1, 32, 32), p), ShapeError);
}

TEST(Model, InitializationIsSeededAndBounded) {
  const GLFeatNet net;
  const auto a = net.init_parameters<float>(3), b = net.init_parameters<float>(3);
  const auto c = net.init_parameters<float>(4);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int k = static_cast<int>(i);
    EXPECT_EQ(a[k].values, b[k].values);
    differs |= a[k].values != c[k].values;
    const auto& shape = a[k].shape;
    if (shape.size() == 4) {
      const float bound = 1.0f / std::sqrt(float(shape[1] * shape[2] * shape[3]));
      EXPECT_LE(a[k].values.cwiseAbs().maxCoeff(), bound);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(GlobalEnhance, ZeroOutputProjectionIsIdentity) {
  const GLFeatNet net;
  auto p = net.init_parameters<double>(6);
  p[p.index_of("gem.out.weight")].values.setZero();
  p[p.index_of("gem.out.bias")].values.setZero();
  const auto f4 = random_map<double>(128, 3, 4, 7);
  EXPECT_EQ(net.global_enhance(f4, p).data, f4.data);
}

TEST(GlobalEnhance, MatchesPerPixelOracle) {
  const GLFeatNet net;
  const auto p = net.init_parameters<double>(8);
  for (auto [h, w] : {std::pair{2, 2}, std::pair{3, 5}}) {
    const auto f4 = random_map<double>(128, h, w, 9);
    const auto got = net.global_enhance(f4, p);
    const auto want = check::attention_oracle(net, f4, p);
    EXPECT_LT((got.data - want.data).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GlobalEnhance, AttentionRowsSumToOne) {
  const GLFeatNet net;
  const auto p = net.init_parameters<double>(10);
  GlobalEnhanceCache<double> cache;
  net.global_enhance(random_map<double>(128, 2, 3, 11), p, &cache);
  ASSERT_EQ(cache.attention.rows(), 6);
  EXPECT_LT((cache.attention.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(GlobalEnhance, DisabledPassesThrough) {
  ModelConfig c;
  c.global_enhancement = false;
  const GLFeatNet net(c);
  const auto p = net.init_parameters<double>(1);
  const auto f4 = random_map<double>(128, 1, 1, 2);
  EXPECT_EQ(net.global_enhance(f4, p).data, f4.data);
  EXPECT_EQ(p.index_of("gem.theta.weight"), -1);
}

TEST(Gradients, MatchFiniteDifferencesPerSubmodule) {
  const GLFeatNet net;
  for (const char* prefix : {"encoder.block1", "encoder.block2", "encoder.block3",
                             "encoder.block4", "gem", "fusion"}) {
    for (const auto& s : check::gradient_check(net, prefix, 4, 12, 32)) {
      EXPECT_LT(s.rel_error(), 1e-4) << s.name << "[" << s.index << "] analytic "
                                     << s.analytic << " numeric " << s.numeric;
    }
  }
}

TEST(Gradients, FloatBackwardAgreesWithDouble) {
  const GLFeatNet net;
  const auto pd = net.init_parameters<double>(13);
  const auto pf = pd.cast<float>();
  const auto img = check::random_image(32, 32, 14);
  const check::LinearLoss loss(128, 32, 32, 15);
  ForwardCache<double> cd;
  ForwardCache<float> cf;
  net.forward(img, pd, &cd);
  net.forward(img.cast<float>(), pf, &cf);
  auto gd = pd.zeros_like();
  auto gf = pf.zeros_like();
  net.backward(cd, loss.ws, loss.wd, pd, gd);
  net.backward(cf, loss.ws.cast<float>(), loss.wd.cast<float>(), pf, gf);
  for (std::size_t i = 0; i < gd.size(); ++i) {
    const int k = static_cast<int>(i);
    const double scale = gd[k].values.cwiseAbs().maxCoeff() + 1e-12;
    EXPECT_LT((gf[k].values.cast<double>() - gd[k].values).cwiseAbs().maxCoeff() / scale, 1e-3)
        << gd[k].name;
  }
}
