#include "glfeat/layers.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "glfeat/errors.hpp"

namespace glfeat::layers {

namespace {

template <typename T>
Eigen::Map<const RowMatrix<T>> weight_matrix(const ParameterStore<T>& p,
                                             const Conv2d& c) {
  return {p[c.weight].values.data(), c.out_channels,
          static_cast<Eigen::Index>(c.in_channels) * c.kernel * c.kernel};
}

template <typename T>
Eigen::Map<RowMatrix<T>> weight_matrix(ParameterStore<T>& p, const Conv2d& c) {
  return {p[c.weight].values.data(), c.out_channels,
          static_cast<Eigen::Index>(c.in_channels) * c.kernel * c.kernel};
}

template <typename T>
RowMatrix<T> im2col(const FeatureMap<T>& x, int k) {
  const int pad = k / 2;
  const int h = x.height;
  const int w = x.width;
  RowMatrix<T> cols(static_cast<Eigen::Index>(x.channels) * k * k,
                    static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols.row((c * k + ky) * k + kx).data();
        const int oy = ky - pad;
        const int ox = kx - pad;
        const int x_lo = std::max(0, -ox);
        const int x_hi = std::min(w, w - ox);
        for (int y = 0; y < h; ++y) {
          T* drow = dst + static_cast<std::ptrdiff_t>(y) * w;
          const int sy = y + oy;
          if (sy < 0 || sy >= h) {
            std::fill(drow, drow + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::ptrdiff_t>(sy) * w + ox;
          std::fill(drow, drow + x_lo, T(0));
          std::copy(srow + x_lo, srow + x_hi, drow + x_lo);
          std::fill(drow + x_hi, drow + w, T(0));
        }
      }
    }
  }
  return cols;
}

template <typename T>
FeatureMap<T> col2im(const RowMatrix<T>& cols, int channels, int h, int w, int k) {
  const int pad = k / 2;
  FeatureMap<T> out(channels, h, w);
  for (int c = 0; c < channels; ++c) {
    T* dst = out.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols.row((c * k + ky) * k + kx).data();
        const int oy = ky - pad;
        const int ox = kx - pad;
        const int x_lo = std::max(0, -ox);
        const int x_hi = std::min(w, w - ox);
        for (int y = 0; y < h; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= h) continue;
          const T* srow = src + static_cast<std::ptrdiff_t>(y) * w;
          T* drow = dst + static_cast<std::ptrdiff_t>(sy) * w + ox;
          for (int x = x_lo; x < x_hi; ++x) drow[x] += srow[x];
        }
      }
    }
  }
  return out;
}

struct Taps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> w_hi;
};

Taps bilinear_taps(int in, int out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w_hi.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    t.lo[o] = i0;
    t.hi[o] = std::min(i0 + 1, in - 1);
    t.w_hi[o] = src - i0;
  }
  return t;
}

}  // namespace

Conv2d Conv2d::create(ParamLayout& layout, const std::string& name, int in,
                      int out, int kernel) {
  Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.weight = layout.add(name + ".weight", {out, in, kernel, kernel});
  c.bias = layout.add(name + ".bias", {out});
  return c;
}

std::size_t Conv2d::param_count() const {
  // A layer with no inputs or no outputs is absent from the network.
  if (in_channels == 0 || out_channels == 0) return 0;
  return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel +
         static_cast<std::size_t>(out_channels);
}

template <typename T>
FeatureMap<T> Conv2d::forward(const FeatureMap<T>& x, const ParameterStore<T>& p,
                              Cache<T>* cache) const {
  if (x.channels != in_channels) {
    throw ShapeError(fmt::format("conv expects {} input channels, got {}",
                                 in_channels, x.channels));
  }
  FeatureMap<T> y(out_channels, x.height, x.width);
  const auto w = weight_matrix(p, *this);
  const auto& b = p[bias].values;
  if (kernel == 1) {
    y.data.noalias() = w * x.data;
    if (cache) cache->columns = x.data;
  } else {
    RowMatrix<T> cols = im2col(x, kernel);
    y.data.noalias() = w * cols;
    if (cache) cache->columns = std::move(cols);
  }
  y.data.colwise() += b;
  if (cache) {
    cache->height = x.height;
    cache->width = x.width;
  }
  return y;
}

template <typename T>
FeatureMap<T> Conv2d::backward(const FeatureMap<T>& dy, const Cache<T>& cache,
                               const ParameterStore<T>& p, ParameterStore<T>& grads,
                               bool input_grad) const {
  auto gw = weight_matrix(grads, *this);
  gw.noalias() += dy.data * cache.columns.transpose();
  grads[bias].values += dy.data.rowwise().sum().transpose();
  if (!input_grad) return {};
  const auto w = weight_matrix(p, *this);
  if (kernel == 1) {
    FeatureMap<T> dx(in_channels, cache.height, cache.width);
    dx.data.noalias() = w.transpose() * dy.data;
    return dx;
  }
  RowMatrix<T> dcols = w.transpose() * dy.data;
  return col2im(dcols, in_channels, cache.height, cache.width, kernel);
}

template <typename T>
void relu_inplace(FeatureMap<T>& x) {
  x.data = x.data.cwiseMax(T(0));
}

template <typename T>
void relu_backward_inplace(FeatureMap<T>& dy, const FeatureMap<T>& y) {
  dy.data = (y.data.array() > T(0)).select(dy.data, T(0));
}

template <typename T>
FeatureMap<T> max_pool(const FeatureMap<T>& x, int stride, MaxPoolCache<T>* cache) {
  if (x.height % stride != 0 || x.width % stride != 0) {
    throw ShapeError(fmt::format("max pool stride {} does not divide {}x{}",
                                 stride, x.height, x.width));
  }
  const int oh = x.height / stride;
  const int ow = x.width / stride;
  FeatureMap<T> y(x.channels, oh, ow);
  if (cache) {
    cache->argmax.assign(static_cast<std::size_t>(x.channels) * oh * ow, 0);
    cache->in_height = x.height;
    cache->in_width = x.width;
  }
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.data.row(c).data();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int best = oy * stride * x.width + ox * stride;
        T best_v = src[best];
        for (int ky = 0; ky < stride; ++ky) {
          const int row = (oy * stride + ky) * x.width + ox * stride;
          for (int kx = 0; kx < stride; ++kx) {
            if (src[row + kx] > best_v) {
              best_v = src[row + kx];
              best = row + kx;
            }
          }
        }
        y.data(c, oy * ow + ox) = best_v;
        if (cache) cache->argmax[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = best;
      }
    }
  }
  return y;
}

template <typename T>
FeatureMap<T> max_pool_backward(const FeatureMap<T>& dy, const MaxPoolCache<T>& cache) {
  FeatureMap<T> dx(dy.channels, cache.in_height, cache.in_width);
  const int n = dy.pixels();
  for (int c = 0; c < dy.channels; ++c) {
    for (int i = 0; i < n; ++i) {
      dx.data(c, cache.argmax[static_cast<std::size_t>(c) * n + i]) += dy.data(c, i);
    }
  }
  return dx;
}

template <typename T>
FeatureMap<T> upsample_bilinear(const FeatureMap<T>& x, int out_height, int out_width) {
  if (x.height == out_height && x.width == out_width) return x;
  const Taps ty = bilinear_taps(x.height, out_height);
  const Taps tx = bilinear_taps(x.width, out_width);
  FeatureMap<T> y(x.channels, out_height, out_width);
  std::vector<T> rowbuf(x.width);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.data.row(c).data();
    T* dst = y.data.row(c).data();
    for (int oy = 0; oy < out_height; ++oy) {
      const T wy1 = static_cast<T>(ty.w_hi[oy]);
      const T wy0 = T(1) - wy1;
      const T* r0 = src + static_cast<std::ptrdiff_t>(ty.lo[oy]) * x.width;
      const T* r1 = src + static_cast<std::ptrdiff_t>(ty.hi[oy]) * x.width;
      for (int ix = 0; ix < x.width; ++ix) rowbuf[ix] = wy0 * r0[ix] + wy1 * r1[ix];
      T* drow = dst + static_cast<std::ptrdiff_t>(oy) * out_width;
      for (int ox = 0; ox < out_width; ++ox) {
        const T wx1 = static_cast<T>(tx.w_hi[ox]);
        drow[ox] = (T(1) - wx1) * rowbuf[tx.lo[ox]] + wx1 * rowbuf[tx.hi[ox]];
      }
    }
  }
  return y;
}

template <typename T>
FeatureMap<T> upsample_bilinear_backward(const FeatureMap<T>& dy, int in_height,
                                         int in_width) {
  if (dy.height == in_height && dy.width == in_width) return dy;
  const Taps ty = bilinear_taps(in_height, dy.height);
  const Taps tx = bilinear_taps(in_width, dy.width);
  FeatureMap<T> dx(dy.channels, in_height, in_width);
  std::vector<T> rowbuf(in_width);
  for (int c = 0; c < dy.channels; ++c) {
    const T* src = dy.data.row(c).data();
    T* dst = dx.data.row(c).data();
    for (int oy = 0; oy < dy.height; ++oy) {
      std::fill(rowbuf.begin(), rowbuf.end(), T(0));
      const T* grow = src + static_cast<std::ptrdiff_t>(oy) * dy.width;
      for (int ox = 0; ox < dy.width; ++ox) {
        const T wx1 = static_cast<T>(tx.w_hi[ox]);
        rowbuf[tx.lo[ox]] += (T(1) - wx1) * grow[ox];
        rowbuf[tx.hi[ox]] += wx1 * grow[ox];
      }
      const T wy1 = static_cast<T>(ty.w_hi[oy]);
      const T wy0 = T(1) - wy1;
      T* r0 = dst + static_cast<std::ptrdiff_t>(ty.lo[oy]) * in_width;
      T* r1 = dst + static_cast<std::ptrdiff_t>(ty.hi[oy]) * in_width;
      for (int ix = 0; ix < in_width; ++ix) {
        r0[ix] += wy0 * rowbuf[ix];
        r1[ix] += wy1 * rowbuf[ix];
      }
    }
  }
  return dx;
}

ResidualBlock ResidualBlock::create(ParamLayout& layout, const std::string& name,
                                    int in, int out) {
  ResidualBlock b;
  b.conv1 = Conv2d::create(layout, name + ".conv1", in, out, 3);
  b.conv2 = Conv2d::create(layout, name + ".conv2", out, out, 3);
  b.has_shortcut = in != out;
  if (b.has_shortcut) b.shortcut = Conv2d::create(layout, name + ".shortcut", in, out, 1);
  return b;
}

std::size_t ResidualBlock::param_count() const {
  return conv1.param_count() + conv2.param_count() +
         (has_shortcut ? shortcut.param_count() : 0);
}

template <typename T>
FeatureMap<T> ResidualBlock::forward(const FeatureMap<T>& x, const ParameterStore<T>& p,
                                     Cache<T>* cache) const {
  FeatureMap<T> h = conv1.forward(x, p, cache ? &cache->c1 : nullptr);
  relu_inplace(h);
  FeatureMap<T> y = conv2.forward(h, p, cache ? &cache->c2 : nullptr);
  if (has_shortcut) {
    y.data += shortcut.forward(x, p, cache ? &cache->sc : nullptr).data;
  } else {
    y.data += x.data;
  }
  relu_inplace(y);
  if (cache) {
    cache->hidden = std::move(h);
    cache->output = y;
  }
  return y;
}

template <typename T>
FeatureMap<T> ResidualBlock::backward(const FeatureMap<T>& dy, const Cache<T>& cache,
                                      const ParameterStore<T>& p,
                                      ParameterStore<T>& grads) const {
  FeatureMap<T> d = dy;
  relu_backward_inplace(d, cache.output);
  FeatureMap<T> dh = conv2.backward(d, cache.c2, p, grads);
  relu_backward_inplace(dh, cache.hidden);
  FeatureMap<T> dx = conv1.backward(dh, cache.c1, p, grads);
  if (has_shortcut) {
    dx.data += shortcut.backward(d, cache.sc, p, grads).data;
  } else {
    dx.data += d.data;
  }
  return dx;
}

template <typename T>
void softmax_rows_inplace(RowMatrix<T>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

#define GLFEAT_INSTANTIATE_LAYERS(T)                                               \
  template FeatureMap<T> Conv2d::forward<T>(const FeatureMap<T>&,                  \
                                            const ParameterStore<T>&, Cache<T>*)   \
      const;                                                                       \
  template FeatureMap<T> Conv2d::backward<T>(const FeatureMap<T>&, const Cache<T>&, \
                                             const ParameterStore<T>&,             \
                                             ParameterStore<T>&, bool) const;      \
  template void relu_inplace<T>(FeatureMap<T>&);                                   \
  template void relu_backward_inplace<T>(FeatureMap<T>&, const FeatureMap<T>&);    \
  template FeatureMap<T> max_pool<T>(const FeatureMap<T>&, int, MaxPoolCache<T>*); \
  template FeatureMap<T> max_pool_backward<T>(const FeatureMap<T>&,                \
                                              const MaxPoolCache<T>&);             \
  template FeatureMap<T> upsample_bilinear<T>(const FeatureMap<T>&, int, int);     \
  template FeatureMap<T> upsample_bilinear_backward<T>(const FeatureMap<T>&, int,  \
                                                       int);                       \
  template FeatureMap<T> ResidualBlock::forward<T>(                                \
      const FeatureMap<T>&, const ParameterStore<T>&, Cache<T>*) const;            \
  template FeatureMap<T> ResidualBlock::backward<T>(                               \
      const FeatureMap<T>&, const Cache<T>&, const ParameterStore<T>&,             \
      ParameterStore<T>&) const;                                                   \
  template void softmax_rows_inplace<T>(RowMatrix<T>&);

GLFEAT_INSTANTIATE_LAYERS(float)
GLFEAT_INSTANTIATE_LAYERS(double)

#undef GLFEAT_INSTANTIATE_LAYERS

}  // namespace glfeat::layers
