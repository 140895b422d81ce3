#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace glfeat::geometry {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Mat3 matrix() const;
  void validate() const;
};

// Maps points from camera A to camera B: X_B = rotation * X_A + translation.
struct RelativePose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::UnitX();

  void validate() const;
};

// Satisfies p_B^T F p_A = 0 for homogeneous pixel coordinates.
struct FundamentalMatrix {
  Mat3 matrix = Mat3::Zero();
};

struct Homography {
  Mat3 matrix = Mat3::Identity();

  // Scales so that H(2,2) = 1 when that entry is non-zero.
  static Homography normalized(const Mat3& h);
  Homography inverse() const;
};

struct TwoViewGeometry {
  CameraIntrinsics intrinsics_a;
  CameraIntrinsics intrinsics_b;
  RelativePose pose;
  FundamentalMatrix fundamental;

  // Geometry of the swapped pair (B, A).
  TwoViewGeometry swapped() const;
};

// ax + by + c = 0
struct Line {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

enum class MatchLabel { kCorrect, kIncorrect };

struct PointPair {
  Vec2 a;
  Vec2 b;
};

// Returns F = K_B^-T [t]x R K_A^-1 scaled to unit Frobenius norm.
FundamentalMatrix fundamental_from_pose(const CameraIntrinsics& k_a,
                                        const CameraIntrinsics& k_b,
                                        const RelativePose& pose);

TwoViewGeometry make_two_view(const CameraIntrinsics& k_a,
                              const CameraIntrinsics& k_b,
                              const RelativePose& pose);

// Epipolar line F * (x, y, 1) in the other view, (a, b) scaled to unit norm.
Line epipolar_line(const FundamentalMatrix& f, const Vec2& p);

double point_line_distance(const Vec2& p, const Line& l);

// Symmetric epipolar test: the distance of p_b to F p_a and of p_a to
// F^T p_b must both be within eps. Degenerate lines are labelled incorrect.
MatchLabel annotate_match(const Vec2& p_a, const Vec2& p_b,
                          const FundamentalMatrix& f, double eps);

// Labels of every pair (a_i, b_j) under annotate_match; true = correct.
using LabelMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
LabelMatrix annotate_all_pairs(std::span<const Vec2> points_a, std::span<const Vec2> points_b,
                               const FundamentalMatrix& f, double eps);

Vec2 apply_homography(const Homography& h, const Vec2& p);

// Normalized direct linear transform over >= 4 correspondences (a -> b).
Homography fit_homography_dlt(std::span<const PointPair> pairs);

struct RansacOptions {
  double inlier_eps = 3.0;
  int iterations = 2000;
  std::uint64_t seed = 0;
};

struct RobustHomography {
  Homography homography;
  std::vector<bool> inlier_mask;
  int num_inliers = 0;
};

RobustHomography estimate_homography_robust(std::span<const PointPair> matches,
                                            const RansacOptions& options);

Mat3 cross_matrix(const Vec3& v);

}  // namespace glfeat::geometry
