#include "glfeat/model.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "glfeat/errors.hpp"

namespace glfeat::model {

using layers::Conv2d;
using layers::ResidualBlock;

std::string ModelConfig::canonical() const {
  return fmt::format(
      "glfeat;widths={},{},{},{};fusion={};desc={};kernel={};pe_base={:.17g};gem={}",
      widths[0], widths[1], widths[2], widths[3], fusion_width, descriptor_dim,
      encoder_kernel, embedding_base, global_enhancement ? 1 : 0);
}

std::uint64_t ModelConfig::digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void ModelConfig::validate() const {
  for (int w : widths) {
    if (w <= 0) throw ArgumentError("encoder widths must be positive");
  }
  if (fusion_width <= 0 || descriptor_dim <= 0) {
    throw ArgumentError("fusion width and descriptor dim must be positive");
  }
  if (encoder_kernel <= 0 || encoder_kernel % 2 == 0) {
    throw ArgumentError("encoder kernel must be a positive odd size");
  }
  if (global_enhancement && widths[3] % 4 != 0) {
    throw ArgumentError("positional embedding needs F4 width divisible by 4");
  }
}

FeatureMap<double> positional_embedding(int h, int w, int channels, double base) {
  if (channels % 4 != 0) {
    throw ArgumentError(
        fmt::format("positional embedding channels ({}) must be divisible by 4",
                    channels));
  }
  FeatureMap<double> pe(channels, h, w);
  for (int k = 0; k < channels / 4; ++k) {
    const double omega = 1.0 / std::pow(base, 4.0 * k / channels);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        pe.at(4 * k, y, x) = std::sin(omega * x);
        pe.at(4 * k + 1, y, x) = std::cos(omega * x);
        pe.at(4 * k + 2, y, x) = std::sin(omega * y);
        pe.at(4 * k + 3, y, x) = std::cos(omega * y);
      }
    }
  }
  return pe;
}

template <typename T>
void check_image_shape(const FeatureMap<T>& image) {
  if (image.channels != 3) {
    throw ShapeError(fmt::format("expected a 3-channel image, got {}", image.channels));
  }
  if (image.height <= 0 || image.width <= 0 || image.height % 32 != 0 ||
      image.width % 32 != 0) {
    throw ShapeError(fmt::format(
        "image size {}x{} (HxW) is not a positive multiple of 32", image.height,
        image.width));
  }
}

GLFeatNet::GLFeatNet(ModelConfig config) : config_(config) {
  const auto& c = config_.widths;
  const int k = config_.encoder_kernel;
  stem1_ = Conv2d::create(layout_, "encoder.block1.conv1", 3, c[0], k);
  stem2_ = Conv2d::create(layout_, "encoder.block1.conv2", c[0], c[0], k);
  block2_ = ResidualBlock::create(layout_, "encoder.block2", c[0], c[1]);
  block3_ = ResidualBlock::create(layout_, "encoder.block3", c[1], c[2]);
  block4_ = ResidualBlock::create(layout_, "encoder.block4", c[2], c[3]);
  if (config_.global_enhancement) {
    const int inner = c[3] / 2;
    theta_ = Conv2d::create(layout_, "gem.theta", c[3], inner, 1);
    phi_ = Conv2d::create(layout_, "gem.phi", c[3], inner, 1);
    g_ = Conv2d::create(layout_, "gem.g", c[3], inner, 1);
    out_ = Conv2d::create(layout_, "gem.out", inner, c[3], 1);
  }
  for (int i = 0; i < 4; ++i) {
    branch_[i] = Conv2d::create(layout_, fmt::format("fusion.branch{}", i + 1), c[i],
                                config_.fusion_width, 1);
  }
  merge_ = Conv2d::create(layout_, "fusion.merge", 4 * config_.fusion_width,
                          config_.fused_channels(), 1);
}

ParamBreakdown GLFeatNet::param_breakdown() const {
  ParamBreakdown b;
  b.encoder = stem1_.param_count() + stem2_.param_count() + block2_.param_count() +
              block3_.param_count() + block4_.param_count();
  if (config_.global_enhancement) {
    b.global_enhancement = theta_.param_count() + phi_.param_count() +
                           g_.param_count() + out_.param_count();
  }
  for (const auto& br : branch_) b.fusion += br.param_count();
  // The merge layer still has output channels when the fusion width is zero;
  // without inputs it is absent.
  b.fusion += merge_.param_count();
  return b;
}

std::size_t param_count(const ModelConfig& config) {
  return GLFeatNet(config).param_breakdown().total();
}

template <typename T>
ParameterStore<T> GLFeatNet::init_parameters(std::uint64_t seed) const {
  ParameterStore<T> p(layout_);
  std::mt19937_64 rng(seed);
  auto fill = [&](const Conv2d& conv) {
    const double fan_in =
        static_cast<double>(conv.in_channels) * conv.kernel * conv.kernel;
    const double bound = fan_in > 0 ? 1.0 / std::sqrt(fan_in) : 0.0;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : p[conv.weight].values) v = static_cast<T>(dist(rng));
    for (auto& v : p[conv.bias].values) v = static_cast<T>(dist(rng));
  };
  fill(stem1_);
  fill(stem2_);
  for (const auto* b : {&block2_, &block3_, &block4_}) {
    fill(b->conv1);
    fill(b->conv2);
    if (b->has_shortcut) fill(b->shortcut);
  }
  if (config_.global_enhancement) {
    fill(theta_);
    fill(phi_);
    fill(g_);
    fill(out_);
  }
  for (const auto& br : branch_) fill(br);
  fill(merge_);
  return p;
}

template <typename T>
EncoderPyramid<T> GLFeatNet::encode(const FeatureMap<T>& image,
                                    const ParameterStore<T>& p,
                                    EncoderCache<T>* cache) const {
  check_image_shape(image);
  EncoderPyramid<T> pyr;
  FeatureMap<T> h = stem1_.forward(image, p, cache ? &cache->stem1 : nullptr);
  layers::relu_inplace(h);
  pyr.f1 = stem2_.forward(h, p, cache ? &cache->stem2 : nullptr);
  layers::relu_inplace(pyr.f1);
  if (cache) cache->stem_hidden = std::move(h);

  FeatureMap<T> x = layers::max_pool(pyr.f1, 2, cache ? &cache->pool2 : nullptr);
  pyr.f2 = block2_.forward(x, p, cache ? &cache->block2 : nullptr);
  x = layers::max_pool(pyr.f2, 4, cache ? &cache->pool3 : nullptr);
  pyr.f3 = block3_.forward(x, p, cache ? &cache->block3 : nullptr);
  x = layers::max_pool(pyr.f3, 4, cache ? &cache->pool4 : nullptr);
  pyr.f4 = block4_.forward(x, p, cache ? &cache->block4 : nullptr);
  return pyr;
}

template <typename T>
FeatureMap<T> GLFeatNet::global_enhance(const FeatureMap<T>& f4,
                                        const ParameterStore<T>& p,
                                        GlobalEnhanceCache<T>* cache) const {
  if (!config_.global_enhancement) return f4;
  if (f4.channels != config_.widths[3]) {
    throw ShapeError("global enhancement input has the wrong channel count");
  }
  FeatureMap<T> x = f4;
  x.data += positional_embedding(f4.height, f4.width, f4.channels,
                                 config_.embedding_base)
                .data.template cast<T>();
  FeatureMap<T> theta = theta_.forward(x, p, cache ? &cache->theta : nullptr);
  FeatureMap<T> phi = phi_.forward(x, p, cache ? &cache->phi : nullptr);
  FeatureMap<T> g = g_.forward(x, p, cache ? &cache->g : nullptr);

  RowMatrix<T> attention = theta.data.transpose() * phi.data;
  layers::softmax_rows_inplace(attention);

  FeatureMap<T> z(theta.channels, f4.height, f4.width);
  z.data.noalias() = g.data * attention.transpose();
  FeatureMap<T> y = out_.forward(z, p, cache ? &cache->out : nullptr);
  y.data += f4.data;
  if (cache) {
    cache->theta_x = std::move(theta.data);
    cache->phi_x = std::move(phi.data);
    cache->g_x = std::move(g.data);
    cache->attention = std::move(attention);
    cache->height = f4.height;
    cache->width = f4.width;
  }
  return y;
}

template <typename T>
FeatureMap<T> GLFeatNet::global_enhance_backward(const FeatureMap<T>& d_out,
                                                 const GlobalEnhanceCache<T>& cache,
                                                 const ParameterStore<T>& p,
                                                 ParameterStore<T>& grads) const {
  if (!config_.global_enhancement) return d_out;
  FeatureMap<T> d_f4 = d_out;  // residual path
  const FeatureMap<T> dz = out_.backward(d_out, cache.out, p, grads);
  const RowMatrix<T>& a = cache.attention;

  FeatureMap<T> dg(dz.channels, cache.height, cache.width);
  dg.data.noalias() = dz.data * a;
  RowMatrix<T> da = dz.data.transpose() * cache.g_x;
  // Softmax backward per row.
  RowMatrix<T> dl(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const T inner = da.row(r).dot(a.row(r));
    dl.row(r) = a.row(r).cwiseProduct((da.row(r).array() - inner).matrix());
  }
  FeatureMap<T> dtheta(dz.channels, cache.height, cache.width);
  FeatureMap<T> dphi(dz.channels, cache.height, cache.width);
  dtheta.data.noalias() = cache.phi_x * dl.transpose();
  dphi.data.noalias() = cache.theta_x * dl;

  d_f4.data += theta_.backward(dtheta, cache.theta, p, grads).data;
  d_f4.data += phi_.backward(dphi, cache.phi, p, grads).data;
  d_f4.data += g_.backward(dg, cache.g, p, grads).data;
  return d_f4;
}

template <typename T>
FeatureMap<T> GLFeatNet::fuse(const EncoderPyramid<T>& pyramid, const FeatureMap<T>& fg,
                              const ParameterStore<T>& p, FusionCache<T>* cache) const {
  const int h = pyramid.f1.height;
  const int w = pyramid.f1.width;
  const int fw = config_.fusion_width;
  const std::array<const FeatureMap<T>*, 4> inputs{&pyramid.f1, &pyramid.f2,
                                                   &pyramid.f3, &fg};
  FeatureMap<T> concat(4 * fw, h, w);
  for (int i = 0; i < 4; ++i) {
    FeatureMap<T> b = branch_[i].forward(*inputs[i], p, cache ? &cache->branch[i] : nullptr);
    layers::relu_inplace(b);
    concat.data.middleRows(static_cast<Eigen::Index>(i) * fw, fw) =
        layers::upsample_bilinear(b, h, w).data;
    if (cache) cache->activated[i] = std::move(b);
  }
  return merge_.forward(concat, p, cache ? &cache->merge : nullptr);
}

template <typename T>
DenseOutput<T> GLFeatNet::forward(const FeatureMap<T>& image, const ParameterStore<T>& p,
                                  ForwardCache<T>* cache) const {
  EncoderPyramid<T> local;
  EncoderPyramid<T>& pyr = cache ? cache->pyramid : local;
  pyr = encode(image, p, cache ? &cache->encoder : nullptr);
  const FeatureMap<T> fg = global_enhance(pyr.f4, p, cache ? &cache->gem : nullptr);
  FeatureMap<T> fused = fuse(pyr, fg, p, cache ? &cache->fusion : nullptr);

  const int dim = config_.descriptor_dim;
  DenseOutput<T> out;
  out.score = FeatureMap<T>(1, fused.height, fused.width);
  out.score.data = fused.data.row(dim);
  out.descriptors = FeatureMap<T>(dim, fused.height, fused.width);
  out.descriptors.data = fused.data.topRows(dim);
  out.raw_norm = FeatureMap<T>(1, fused.height, fused.width);
  out.raw_norm.data = out.descriptors.data.colwise().norm();
  for (Eigen::Index i = 0; i < out.raw_norm.data.cols(); ++i) {
    const T n = out.raw_norm.data(0, i);
    if (n > T(0)) {
      out.descriptors.data.col(i) /= n;
    } else {
      out.descriptors.data.col(i).setZero();
      ++out.zero_norm_pixels;
    }
  }
  if (cache) cache->output = out;
  return out;
}

template <typename T>
void GLFeatNet::backward(const ForwardCache<T>& cache, const FeatureMap<T>& d_score,
                         const FeatureMap<T>& d_descriptors, const ParameterStore<T>& p,
                         ParameterStore<T>& grads) const {
  const DenseOutput<T>& out = cache.output;
  const int dim = config_.descriptor_dim;
  const int h = out.score.height;
  const int w = out.score.width;
  if (d_score.pixels() != h * w || d_descriptors.pixels() != h * w ||
      d_descriptors.channels != dim) {
    throw ShapeError("output gradient shape mismatch");
  }

  FeatureMap<T> d_fused(config_.fused_channels(), h, w);
  d_fused.data.row(dim) = d_score.data.row(0);
  for (Eigen::Index i = 0; i < d_fused.data.cols(); ++i) {
    const T n = out.raw_norm.data(0, i);
    if (!(n > T(0))) continue;
    const auto d = out.descriptors.data.col(i);
    const auto g = d_descriptors.data.col(i);
    d_fused.data.col(i).head(dim) = (g - d * d.dot(g)) / n;
  }

  // Fusion.
  const int fw = config_.fusion_width;
  const FeatureMap<T> d_concat = merge_.backward(d_fused, cache.fusion.merge, p, grads);
  std::array<FeatureMap<T>, 4> d_inputs;
  for (int i = 0; i < 4; ++i) {
    const FeatureMap<T>& act = cache.fusion.activated[i];
    FeatureMap<T> slice(fw, h, w);
    slice.data = d_concat.data.middleRows(static_cast<Eigen::Index>(i) * fw, fw);
    FeatureMap<T> d_act = layers::upsample_bilinear_backward(slice, act.height, act.width);
    layers::relu_backward_inplace(d_act, act);
    d_inputs[i] = branch_[i].backward(d_act, cache.fusion.branch[i], p, grads);
  }

  // Global enhancement then encoder, deepest first.
  FeatureMap<T> d = global_enhance_backward(d_inputs[3], cache.gem, p, grads);
  d = block4_.backward(d, cache.encoder.block4, p, grads);
  d = layers::max_pool_backward(d, cache.encoder.pool4);
  d.data += d_inputs[2].data;
  d = block3_.backward(d, cache.encoder.block3, p, grads);
  d = layers::max_pool_backward(d, cache.encoder.pool3);
  d.data += d_inputs[1].data;
  d = block2_.backward(d, cache.encoder.block2, p, grads);
  d = layers::max_pool_backward(d, cache.encoder.pool2);
  d.data += d_inputs[0].data;
  layers::relu_backward_inplace(d, cache.pyramid.f1);
  d = stem2_.backward(d, cache.encoder.stem2, p, grads);
  layers::relu_backward_inplace(d, cache.encoder.stem_hidden);
  stem1_.backward(d, cache.encoder.stem1, p, grads, /*input_grad=*/false);
}

#define GLFEAT_INSTANTIATE_MODEL(T)                                                  \
  template void check_image_shape<T>(const FeatureMap<T>&);                          \
  template ParameterStore<T> GLFeatNet::init_parameters<T>(std::uint64_t) const;     \
  template EncoderPyramid<T> GLFeatNet::encode<T>(                                   \
      const FeatureMap<T>&, const ParameterStore<T>&, EncoderCache<T>*) const;       \
  template FeatureMap<T> GLFeatNet::global_enhance<T>(                               \
      const FeatureMap<T>&, const ParameterStore<T>&, GlobalEnhanceCache<T>*) const; \
  template FeatureMap<T> GLFeatNet::global_enhance_backward<T>(                      \
      const FeatureMap<T>&, const GlobalEnhanceCache<T>&, const ParameterStore<T>&,  \
      ParameterStore<T>&) const;                                                     \
  template FeatureMap<T> GLFeatNet::fuse<T>(const EncoderPyramid<T>&,                \
                                            const FeatureMap<T>&,                    \
                                            const ParameterStore<T>&,                \
                                            FusionCache<T>*) const;                  \
  template DenseOutput<T> GLFeatNet::forward<T>(                                     \
      const FeatureMap<T>&, const ParameterStore<T>&, ForwardCache<T>*) const;       \
  template void GLFeatNet::backward<T>(const ForwardCache<T>&, const FeatureMap<T>&, \
                                       const FeatureMap<T>&,                         \
                                       const ParameterStore<T>&,                     \
                                       ParameterStore<T>&) const;

GLFEAT_INSTANTIATE_MODEL(float)
GLFEAT_INSTANTIATE_MODEL(double)

#undef GLFEAT_INSTANTIATE_MODEL

}  // namespace glfeat::model
