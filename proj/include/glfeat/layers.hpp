#pragma once

#include <string>
#include <vector>

#include "glfeat/tensor.hpp"

// Differentiable building blocks of the network. Every layer is a small
// value type holding its dimensions and the indices of its parameters in a
// ParameterStore; forward passes optionally record a cache that the matching
// backward pass consumes. Backward passes accumulate (+=) into `grads`.
namespace glfeat::layers {

// Square kernel, stride 1, zero padding kernel / 2.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int weight = -1;
  int bias = -1;

  static Conv2d create(ParamLayout& layout, const std::string& name, int in,
                       int out, int kernel);
  std::size_t param_count() const;

  template <typename T>
  struct Cache {
    RowMatrix<T> columns;
    int height = 0;
    int width = 0;
  };

  template <typename T>
  FeatureMap<T> forward(const FeatureMap<T>& x, const ParameterStore<T>& p,
                        Cache<T>* cache) const;
  template <typename T>
  FeatureMap<T> backward(const FeatureMap<T>& dy, const Cache<T>& cache,
                         const ParameterStore<T>& p, ParameterStore<T>& grads,
                         bool input_grad = true) const;
};

template <typename T>
void relu_inplace(FeatureMap<T>& x);

// Zeroes dy wherever the ReLU output y was not positive.
template <typename T>
void relu_backward_inplace(FeatureMap<T>& dy, const FeatureMap<T>& y);

// Non-overlapping max pooling (kernel = stride). Ties pick the first pixel in
// row-major order.
template <typename T>
struct MaxPoolCache {
  std::vector<int> argmax;
  int in_height = 0;
  int in_width = 0;
};

template <typename T>
FeatureMap<T> max_pool(const FeatureMap<T>& x, int stride, MaxPoolCache<T>* cache);
template <typename T>
FeatureMap<T> max_pool_backward(const FeatureMap<T>& dy, const MaxPoolCache<T>& cache);

// Bilinear resize with half-pixel centres (corner alignment disabled);
// source coordinates below zero clamp to the first pixel.
template <typename T>
FeatureMap<T> upsample_bilinear(const FeatureMap<T>& x, int out_height, int out_width);
template <typename T>
FeatureMap<T> upsample_bilinear_backward(const FeatureMap<T>& dy, int in_height,
                                         int in_width);

// Two-convolution basic residual block with a 1x1 projection shortcut when the
// channel count changes: relu(conv2(relu(conv1(x))) + shortcut(x)).
struct ResidualBlock {
  Conv2d conv1;
  Conv2d conv2;
  Conv2d shortcut;
  bool has_shortcut = false;

  static ResidualBlock create(ParamLayout& layout, const std::string& name,
                              int in, int out);
  std::size_t param_count() const;

  template <typename T>
  struct Cache {
    Conv2d::Cache<T> c1;
    Conv2d::Cache<T> c2;
    Conv2d::Cache<T> sc;
    FeatureMap<T> hidden;
    FeatureMap<T> output;
  };

  template <typename T>
  FeatureMap<T> forward(const FeatureMap<T>& x, const ParameterStore<T>& p,
                        Cache<T>* cache) const;
  template <typename T>
  FeatureMap<T> backward(const FeatureMap<T>& dy, const Cache<T>& cache,
                         const ParameterStore<T>& p, ParameterStore<T>& grads) const;
};

// Row-wise softmax, max-subtracted.
template <typename T>
void softmax_rows_inplace(RowMatrix<T>& m);

}  // namespace glfeat::layers
