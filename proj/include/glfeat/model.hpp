#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "glfeat/layers.hpp"
#include "glfeat/tensor.hpp"

namespace glfeat::model {

struct ModelConfig {
  // Encoder widths of F1..F4.
  std::array<int, 4> widths{16, 32, 64, 128};
  int fusion_width = 32;
  int descriptor_dim = 128;
  int encoder_kernel = 3;
  double embedding_base = 10000.0;
  bool global_enhancement = true;

  int fused_channels() const { return descriptor_dim + 1; }
  // Stable textual form; the digest is FNV-1a over it.
  std::string canonical() const;
  std::uint64_t digest() const;
  void validate() const;
};

template <typename T>
struct EncoderPyramid {
  FeatureMap<T> f1;  // H x W x c1
  FeatureMap<T> f2;  // H/2
  FeatureMap<T> f3;  // H/8
  FeatureMap<T> f4;  // H/32
};

template <typename T>
struct DenseOutput {
  FeatureMap<T> score;        // 1 channel of raw logits
  FeatureMap<T> descriptors;  // descriptor_dim channels, unit norm per pixel
  FeatureMap<T> raw_norm;     // 1 channel, pre-normalization descriptor norm
  int zero_norm_pixels = 0;   // descriptors that could not be normalized
};

template <typename T>
struct EncoderCache {
  layers::Conv2d::Cache<T> stem1;
  layers::Conv2d::Cache<T> stem2;
  FeatureMap<T> stem_hidden;
  layers::MaxPoolCache<T> pool2;
  layers::MaxPoolCache<T> pool3;
  layers::MaxPoolCache<T> pool4;
  layers::ResidualBlock::Cache<T> block2;
  layers::ResidualBlock::Cache<T> block3;
  layers::ResidualBlock::Cache<T> block4;
};

template <typename T>
struct GlobalEnhanceCache {
  layers::Conv2d::Cache<T> theta;
  layers::Conv2d::Cache<T> phi;
  layers::Conv2d::Cache<T> g;
  layers::Conv2d::Cache<T> out;
  RowMatrix<T> theta_x;    // C/2 x N
  RowMatrix<T> phi_x;      // C/2 x N
  RowMatrix<T> g_x;        // C/2 x N
  RowMatrix<T> attention;  // N x N, rows sum to one
  int height = 0;
  int width = 0;
};

template <typename T>
struct FusionCache {
  std::array<layers::Conv2d::Cache<T>, 4> branch;
  std::array<FeatureMap<T>, 4> activated;  // post-ReLU, pre-upsample
  layers::Conv2d::Cache<T> merge;
};

template <typename T>
struct ForwardCache {
  EncoderCache<T> encoder;
  EncoderPyramid<T> pyramid;
  GlobalEnhanceCache<T> gem;
  FusionCache<T> fusion;
  DenseOutput<T> output;
};

struct ParamBreakdown {
  std::size_t encoder = 0;
  std::size_t global_enhancement = 0;
  std::size_t fusion = 0;
  std::size_t total() const { return encoder + global_enhancement + fusion; }
};

// Sinusoidal 2-D embedding, channels x (h * w). Channel 4k/4k+1 carry
// sin/cos of w_k * x (column), 4k+2/4k+3 sin/cos of w_k * y (row), with
// w_k = base^(-4k / channels).
FeatureMap<double> positional_embedding(int h, int w, int channels,
                                        double base = 10000.0);

class GLFeatNet {
 public:
  explicit GLFeatNet(ModelConfig config = {});

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  ParamBreakdown param_breakdown() const;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  template <typename T>
  ParameterStore<T> init_parameters(std::uint64_t seed) const;

  template <typename T>
  EncoderPyramid<T> encode(const FeatureMap<T>& image, const ParameterStore<T>& p,
                           EncoderCache<T>* cache = nullptr) const;

  template <typename T>
  FeatureMap<T> global_enhance(const FeatureMap<T>& f4, const ParameterStore<T>& p,
                               GlobalEnhanceCache<T>* cache = nullptr) const;

  // Fused map F_m with fused_channels() channels at the resolution of F1.
  template <typename T>
  FeatureMap<T> fuse(const EncoderPyramid<T>& pyramid, const FeatureMap<T>& fg,
                     const ParameterStore<T>& p, FusionCache<T>* cache = nullptr) const;

  template <typename T>
  DenseOutput<T> forward(const FeatureMap<T>& image, const ParameterStore<T>& p,
                         ForwardCache<T>* cache = nullptr) const;

  // Back-propagates gradients of the dense outputs (score: 1 channel,
  // descriptors: descriptor_dim channels, both H x W) into `grads`.
  template <typename T>
  void backward(const ForwardCache<T>& cache, const FeatureMap<T>& d_score,
                const FeatureMap<T>& d_descriptors, const ParameterStore<T>& p,
                ParameterStore<T>& grads) const;

  template <typename T>
  FeatureMap<T> global_enhance_backward(const FeatureMap<T>& d_out,
                                        const GlobalEnhanceCache<T>& cache,
                                        const ParameterStore<T>& p,
                                        ParameterStore<T>& grads) const;

 private:
  ModelConfig config_;
  ParamLayout layout_;
  layers::Conv2d stem1_;
  layers::Conv2d stem2_;
  layers::ResidualBlock block2_;
  layers::ResidualBlock block3_;
  layers::ResidualBlock block4_;
  layers::Conv2d theta_;
  layers::Conv2d phi_;
  layers::Conv2d g_;
  layers::Conv2d out_;
  std::array<layers::Conv2d, 4> branch_;
  layers::Conv2d merge_;
};

std::size_t param_count(const ModelConfig& config);

// Throws ShapeError unless the image is 3-channel with H, W multiples of 32.
template <typename T>
void check_image_shape(const FeatureMap<T>& image);

}  // namespace glfeat::model
