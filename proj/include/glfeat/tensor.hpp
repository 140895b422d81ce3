#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace glfeat {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Channel-major feature map: `data` is channels x (height * width) with
// pixels in row-major order, so 1x1 convolutions are plain matrix products.
template <typename T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  RowMatrix<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(RowMatrix<T>::Zero(c, static_cast<Eigen::Index>(h) * w)) {}

  int pixels() const { return height * width; }
  T& at(int c, int y, int x) { return data(c, y * width + x); }
  const T& at(int c, int y, int x) const { return data(c, y * width + x); }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <typename U>
  FeatureMap<U> cast() const {
    FeatureMap<U> out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data = data.template cast<U>();
    return out;
  }
};

struct ParamSpec {
  std::string name;
  std::vector<int> shape;

  std::size_t count() const;
};

// Names and shapes of every learnable tensor, in registration order.
class ParamLayout {
 public:
  // Returns the index of the new tensor.
  int add(std::string name, std::vector<int> shape);
  const std::vector<ParamSpec>& specs() const { return specs_; }
  std::size_t scalar_count() const;

 private:
  std::vector<ParamSpec> specs_;
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  Vector<T> values;
};

template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  explicit ParameterStore(const ParamLayout& layout) {
    tensors_.reserve(layout.specs().size());
    for (const auto& spec : layout.specs()) {
      tensors_.push_back(
          {spec.name, spec.shape,
           Vector<T>::Zero(static_cast<Eigen::Index>(spec.count()))});
    }
  }

  std::size_t size() const { return tensors_.size(); }
  ParamTensor<T>& operator[](int i) { return tensors_[i]; }
  const ParamTensor<T>& operator[](int i) const { return tensors_[i]; }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  // -1 when absent.
  int index_of(std::string_view name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.values.size());
    return n;
  }

  void set_zero() {
    for (auto& t : tensors_) t.values.setZero();
  }

  ParameterStore zeros_like() const {
    ParameterStore out = *this;
    out.set_zero();
    return out;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& t : tensors_) {
      out.push_back({t.name, t.shape, t.values.template cast<U>()});
    }
    return out;
  }

  void push_back(ParamTensor<T> t) { tensors_.push_back(std::move(t)); }

 private:
  std::vector<ParamTensor<T>> tensors_;
};

}  // namespace glfeat
