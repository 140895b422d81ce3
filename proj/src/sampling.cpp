#include "glfeat/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "glfeat/errors.hpp"

namespace glfeat::sampling {

template <typename T>
ScoreMap to_score_map(const FeatureMap<T>& score) {
  ScoreMap s(score.height, score.width);
  for (int y = 0; y < score.height; ++y) {
    for (int x = 0; x < score.width; ++x) s(y, x) = static_cast<double>(score.at(0, y, x));
  }
  return s;
}

template ScoreMap to_score_map<float>(const FeatureMap<float>&);
template ScoreMap to_score_map<double>(const FeatureMap<double>&);

CellGrid::Cell CellGrid::cell(int index) const {
  const int r = index / cols();
  const int c = index % cols();
  const int x0 = c * cell_size;
  const int y0 = r * cell_size;
  return {x0, y0, std::min(cell_size, width - x0), std::min(cell_size, height - y0)};
}

std::vector<double> relative_saliency(std::span<const double> cell_logits) {
  if (cell_logits.empty()) throw ArgumentError("empty cell");
  const double mx = *std::max_element(cell_logits.begin(), cell_logits.end());
  std::vector<double> p(cell_logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(cell_logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

double acceptance_prob(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double log_one_minus_sigmoid(double x) { return log_sigmoid(-x); }

std::vector<KeypointSample> sample_keypoints(const ScoreMap& s, const CellGrid& grid,
                                             std::mt19937_64& rng) {
  if (grid.height != s.rows() || grid.width != s.cols()) {
    throw ShapeError("cell grid does not match the score map");
  }
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<KeypointSample> samples;
  samples.reserve(grid.count());
  std::vector<double> logits;
  for (int idx = 0; idx < grid.count(); ++idx) {
    const auto c = grid.cell(idx);
    logits.clear();
    for (int y = 0; y < c.h; ++y) {
      for (int x = 0; x < c.w; ++x) logits.push_back(s(c.y0 + y, c.x0 + x));
    }
    const auto probs = relative_saliency(logits);
    const double u = uniform(rng);
    std::size_t pick = probs.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    KeypointSample k;
    k.cell = idx;
    k.pixel = {c.x0 + static_cast<int>(pick) % c.w, c.y0 + static_cast<int>(pick) / c.w};
    k.log_prob_select = std::log(probs[pick]);
    const double logit = logits[pick];
    k.accepted = uniform(rng) < acceptance_prob(logit);
    k.log_prob_accept = k.accepted ? log_sigmoid(logit) : log_one_minus_sigmoid(logit);
    samples.push_back(k);
  }
  return samples;
}

namespace {

// Maximum over [i - r, i + r] clipped, along rows then columns.
ScoreMap window_max(const ScoreMap& s, int r) {
  const int h = static_cast<int>(s.rows());
  const int w = static_cast<int>(s.cols());
  ScoreMap horiz(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int lo = std::max(0, x - r);
      const int hi = std::min(w - 1, x + r);
      horiz(y, x) = s.row(y).segment(lo, hi - lo + 1).maxCoeff();
    }
  }
  ScoreMap out(h, w);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      const int lo = std::max(0, y - r);
      const int hi = std::min(h - 1, y + r);
      out(y, x) = horiz.col(x).segment(lo, hi - lo + 1).maxCoeff();
    }
  }
  return out;
}

}  // namespace

std::vector<Pixel> nms_detect(const ScoreMap& s, const NmsOptions& options) {
  if (options.radius < 1) throw ArgumentError("NMS radius must be at least 1");
  const int h = static_cast<int>(s.rows());
  const int w = static_cast<int>(s.cols());
  const int r = options.radius;
  const ScoreMap mx = window_max(s, r);

  std::vector<Pixel> kept;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = s(y, x);
      if (!(v > options.min_score) || v != mx(y, x)) continue;
      // Equal scores earlier in row-major order win the tie.
      bool dominated = false;
      for (int yy = std::max(0, y - r); yy <= y && !dominated; ++yy) {
        const int x_hi = yy < y ? std::min(w - 1, x + r) : x - 1;
        for (int xx = std::max(0, x - r); xx <= x_hi; ++xx) {
          if (s(yy, xx) == v) {
            dominated = true;
            break;
          }
        }
      }
      if (!dominated) kept.push_back({x, y});
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [&](const Pixel& a, const Pixel& b) {
    return s(a.y, a.x) > s(b.y, b.x);
  });
  if (options.max_keypoints >= 0 &&
      kept.size() > static_cast<std::size_t>(options.max_keypoints)) {
    kept.resize(options.max_keypoints);
  }
  return kept;
}

FeatureSet gather_features(const model::DenseOutput<float>& out,
                           std::span<const Pixel> pixels) {
  const int h = out.score.height;
  const int w = out.score.width;
  const int dim = out.descriptors.channels;
  FeatureSet fs;
  fs.keypoints.resize(static_cast<Eigen::Index>(pixels.size()), 2);
  fs.scores.resize(static_cast<Eigen::Index>(pixels.size()));
  fs.descriptors.resize(static_cast<Eigen::Index>(pixels.size()), dim);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Pixel p = pixels[i];
    if (p.x < 0 || p.y < 0 || p.x >= w || p.y >= h) {
      throw ArgumentError(fmt::format("pixel ({}, {}) outside {}x{} map", p.x, p.y, w, h));
    }
    const int idx = p.y * w + p.x;
    const auto row = static_cast<Eigen::Index>(i);
    fs.keypoints(row, 0) = static_cast<float>(p.x);
    fs.keypoints(row, 1) = static_cast<float>(p.y);
    fs.scores(row) = out.score.data(0, idx);
    fs.descriptors.row(row) = out.descriptors.data.col(idx).transpose();
  }
  return fs;
}

}  // namespace glfeat::sampling
