#pragma once

#include <random>
#include <span>
#include <vector>

#include "glfeat/model.hpp"
#include "glfeat/tensor.hpp"

namespace glfeat::sampling {

// H x W score logits.
using ScoreMap = RowMatrix<double>;

template <typename T>
ScoreMap to_score_map(const FeatureMap<T>& score);

struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
};

// Square cells over a score map; cells on the right/bottom border may be
// smaller when the map size is not a multiple of the cell size.
struct CellGrid {
  int cell_size = 8;
  int height = 0;
  int width = 0;

  int rows() const { return (height + cell_size - 1) / cell_size; }
  int cols() const { return (width + cell_size - 1) / cell_size; }
  int count() const { return rows() * cols(); }

  struct Cell {
    int x0, y0, w, h;
  };
  Cell cell(int index) const;
};

struct KeypointSample {
  Pixel pixel;
  int cell = 0;
  double log_prob_select = 0.0;  // log P_s(p | cell)
  bool accepted = false;
  double log_prob_accept = 0.0;  // log sigmoid(s) if accepted, else log(1 - sigmoid(s))

  double log_prob() const { return log_prob_select + log_prob_accept; }
};

struct FeatureSet {
  RowMatrix<float> keypoints;    // N x 2, (x, y) in pixels
  Vector<float> scores;          // N
  RowMatrix<float> descriptors;  // N x D

  int size() const { return static_cast<int>(keypoints.rows()); }
};

// Softmax over a cell's logits, max-subtracted.
std::vector<double> relative_saliency(std::span<const double> cell_logits);

// Numerically stable sigmoid.
double acceptance_prob(double logit);
// log sigmoid(x) and log(1 - sigmoid(x)), stable for large |x|.
double log_sigmoid(double x);
double log_one_minus_sigmoid(double x);

// One draw per cell: a pixel from the cell softmax, then a Bernoulli
// acceptance with the sigmoid of its logit. Rejected draws are returned too.
std::vector<KeypointSample> sample_keypoints(const ScoreMap& s, const CellGrid& grid,
                                             std::mt19937_64& rng);

struct NmsOptions {
  int radius = 2;
  int max_keypoints = 5000;
  double min_score = 0.0;
};

// Pixels that dominate their clipped (2r+1)^2 window: every other pixel in
// the window is lower, or equal and later in row-major order. Sorted by
// descending score (row-major order among equal scores), then truncated.
std::vector<Pixel> nms_detect(const ScoreMap& s, const NmsOptions& options);

FeatureSet gather_features(const model::DenseOutput<float>& out,
                           std::span<const Pixel> pixels);

}  // namespace glfeat::sampling
