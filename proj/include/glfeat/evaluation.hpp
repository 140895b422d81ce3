#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "glfeat/data.hpp"
#include "glfeat/geometry.hpp"
#include "glfeat/image.hpp"
#include "glfeat/matching.hpp"
#include "glfeat/sampling.hpp"

namespace glfeat::evaluation {

struct Frame {
  int width = 0;
  int height = 0;

  // Pixel centres span [0, width - 1] x [0, height - 1].
  bool contains(const geometry::Vec2& p) const;
};

// Keypoint coordinates as an N x 2 (x, y) matrix.
using Keypoints = RowMatrix<float>;

struct RepeatabilityCounts {
  int covisible_a = 0;
  int covisible_b = 0;
  int repeated_a = 0;
  int repeated_b = 0;

  // (repeated_a + repeated_b) / (covisible_a + covisible_b); empty when no
  // keypoint is covisible.
  std::optional<double> value() const;
};

// A keypoint of A is covisible when H maps it inside B's frame and repeated
// when that mapping lies within eps of some keypoint of B; symmetrically for B
// through H^-1.
RepeatabilityCounts repeatability_counts(const Keypoints& ka, const Keypoints& kb,
                                         const geometry::Homography& h, double eps,
                                         const Frame& frame_a, const Frame& frame_b);
std::optional<double> repeatability(const Keypoints& ka, const Keypoints& kb,
                                    const geometry::Homography& h, double eps,
                                    const Frame& frame_a, const Frame& frame_b);

// Number of matches with ||H p_a - p_b|| <= eps.
int count_correct(const matching::MatchSet& matches, const Keypoints& ka, const Keypoints& kb,
                  const geometry::Homography& h, double eps);

// |correct| / |matches|; empty for an empty match set.
std::optional<double> mma_pair(const matching::MatchSet& matches, const Keypoints& ka,
                               const Keypoints& kb, const geometry::Homography& h, double eps);

// |correct| / min(covisible A, covisible B); empty when that is zero.
std::optional<double> matching_score(const matching::MatchSet& matches, const Keypoints& ka,
                                     const Keypoints& kb, const geometry::Homography& h,
                                     double eps, const Frame& frame_a, const Frame& frame_b);

struct HomographyCheck {
  bool ok = false;
  double corner_error = std::numeric_limits<double>::infinity();
};

// Robust fit on the matched points, scored by the mean distance between the
// estimated and true images of A's four frame corners.
HomographyCheck mha_pair(const matching::MatchSet& matches, const Keypoints& ka,
                         const Keypoints& kb, const geometry::Homography& h_gt,
                         const Frame& frame_a, double accept_eps,
                         const geometry::RansacOptions& ransac);

struct EvalConfig {
  double eps = 3.0;       // correctness / repeatability threshold, px
  double mha_eps = 3.0;   // mean corner error accepted for MHA, px
  geometry::RansacOptions ransac;
};

struct PairEvalResult {
  std::string id;
  int n_feats_a = 0;
  int n_feats_b = 0;
  int n_covisible_a = 0;
  int n_covisible_b = 0;
  int n_repeated_a = 0;
  int n_repeated_b = 0;
  int n_matches = 0;
  int n_correct = 0;
  bool homography_ok = false;
  double corner_error = std::numeric_limits<double>::infinity();

  std::optional<double> rep() const;
  std::optional<double> ms() const;
  std::optional<double> mma() const;
};

struct MetricsSummary {
  double nf = 0.0;
  double rep = 0.0;
  double ms = 0.0;
  double mma = 0.0;
  double mha = 0.0;
  double fps = 0.0;  // filled by the benchmark, 0 otherwise
  int n_pairs = 0;
  int n_rep_pairs = 0;
  int n_ms_pairs = 0;
  int n_mma_pairs = 0;
};

PairEvalResult evaluate_pair(const sampling::FeatureSet& fa, const sampling::FeatureSet& fb,
                             const geometry::Homography& h, const Frame& frame_a,
                             const Frame& frame_b, const EvalConfig& cfg);

// Means over pairs where each metric is defined; MHA over all pairs.
MetricsSummary summarize(const std::vector<PairEvalResult>& results);

struct ImageFeatures {
  sampling::FeatureSet features;
  Frame frame;
};

// Produces the features of one image of the manifest; throws on failure.
using FeatureProvider = std::function<ImageFeatures(const std::string& image_path)>;

struct EvaluationReport {
  MetricsSummary summary;
  std::vector<PairEvalResult> pairs;
  std::vector<std::string> failures;  // "<id>: <reason>"
};

// Evaluates every record carrying a homography; others are ignored.
EvaluationReport evaluate_dataset(const std::vector<data::PairRecord>& records,
                                  const FeatureProvider& provider, const EvalConfig& cfg);

struct FpsReport {
  int n_images = 0;
  int width = 0;
  int height = 0;
  double fps = 0.0;      // n_images / total seconds
  double fps_std = 0.0;  // standard deviation of per-image rates
  double mean_ms = 0.0;
  double std_ms = 0.0;
};

FpsReport bench_fps(const std::function<void(const Image&)>& run, int width, int height,
                    int n_images, int warmup_n, std::uint64_t seed = 0);

void write_pair_csv(std::ostream& out, const std::vector<PairEvalResult>& pairs);
void write_summary(std::ostream& out, const MetricsSummary& s);

}  // namespace glfeat::evaluation
