#include "glfeat/geometry.hpp"

#include <array>
#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "glfeat/errors.hpp"

namespace glfeat::geometry {

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ArgumentError(
        fmt::format("focal lengths must be positive (fx={}, fy={})", fx, fy));
  }
}

void RelativePose::validate() const {
  const double orth = (rotation.transpose() * rotation - Mat3::Identity())
                          .cwiseAbs()
                          .maxCoeff();
  if (orth > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw ArgumentError("rotation is not a proper orthonormal matrix");
  }
  if (!(translation.norm() > 0.0)) {
    throw ArgumentError("no epipolar geometry for pure rotation");
  }
}

Homography Homography::normalized(const Mat3& h) {
  Homography out;
  out.matrix = h;
  if (h(2, 2) != 0.0) out.matrix /= h(2, 2);
  return out;
}

Homography Homography::inverse() const {
  return normalized(matrix.inverse());
}

TwoViewGeometry TwoViewGeometry::swapped() const {
  TwoViewGeometry out;
  out.intrinsics_a = intrinsics_b;
  out.intrinsics_b = intrinsics_a;
  out.pose.rotation = pose.rotation.transpose();
  out.pose.translation = -(pose.rotation.transpose() * pose.translation);
  out.fundamental.matrix = fundamental.matrix.transpose();
  return out;
}

Mat3 cross_matrix(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

FundamentalMatrix fundamental_from_pose(const CameraIntrinsics& k_a,
                                        const CameraIntrinsics& k_b,
                                        const RelativePose& pose) {
  k_a.validate();
  k_b.validate();
  pose.validate();
  const Mat3 essential = cross_matrix(pose.translation) * pose.rotation;
  Mat3 f = k_b.matrix().inverse().transpose() * essential *
           k_a.matrix().inverse();
  // The essential matrix is rank 2 up to rounding; project it exactly.
  Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sv = svd.singularValues();
  sv(2) = 0.0;
  f = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  FundamentalMatrix out;
  out.matrix = f / f.norm();
  return out;
}

TwoViewGeometry make_two_view(const CameraIntrinsics& k_a,
                              const CameraIntrinsics& k_b,
                              const RelativePose& pose) {
  TwoViewGeometry g;
  g.intrinsics_a = k_a;
  g.intrinsics_b = k_b;
  g.pose = pose;
  g.fundamental = fundamental_from_pose(k_a, k_b, pose);
  return g;
}

Line epipolar_line(const FundamentalMatrix& f, const Vec2& p) {
  const Vec3 l = f.matrix * Vec3(p.x(), p.y(), 1.0);
  const double n = std::hypot(l.x(), l.y());
  if (n == 0.0 || !std::isfinite(n)) {
    throw NumericalError("degenerate epipolar line");
  }
  return {l.x() / n, l.y() / n, l.z() / n};
}

double point_line_distance(const Vec2& p, const Line& l) {
  const double n = std::hypot(l.a, l.b);
  if (n == 0.0) throw NumericalError("degenerate line");
  return std::abs(l.a * p.x() + l.b * p.y() + l.c) / n;
}

MatchLabel annotate_match(const Vec2& p_a, const Vec2& p_b,
                          const FundamentalMatrix& f, double eps) {
  const Vec3 ha(p_a.x(), p_a.y(), 1.0);
  const Vec3 hb(p_b.x(), p_b.y(), 1.0);
  const Vec3 line_b = f.matrix * ha;
  const Vec3 line_a = f.matrix.transpose() * hb;
  const double nb = std::hypot(line_b.x(), line_b.y());
  const double na = std::hypot(line_a.x(), line_a.y());
  if (!(nb > 0.0) || !(na > 0.0)) return MatchLabel::kIncorrect;
  const double dist_b = std::abs(line_b.dot(hb)) / nb;
  const double dist_a = std::abs(line_a.dot(ha)) / na;
  return (dist_a <= eps && dist_b <= eps) ? MatchLabel::kCorrect
                                          : MatchLabel::kIncorrect;
}

LabelMatrix annotate_all_pairs(std::span<const Vec2> points_a, std::span<const Vec2> points_b,
                               const FundamentalMatrix& f, double eps) {
  const auto na = static_cast<Eigen::Index>(points_a.size());
  const auto nb = static_cast<Eigen::Index>(points_b.size());
  // Same arithmetic as annotate_match, with the lines hoisted out of the loop.
  std::vector<Vec3> lines_b(points_a.size()), lines_a(points_b.size());
  std::vector<double> norms_b(points_a.size()), norms_a(points_b.size());
  for (Eigen::Index i = 0; i < na; ++i) {
    lines_b[i] = f.matrix * Vec3(points_a[i].x(), points_a[i].y(), 1.0);
    norms_b[i] = std::hypot(lines_b[i].x(), lines_b[i].y());
  }
  for (Eigen::Index j = 0; j < nb; ++j) {
    lines_a[j] = f.matrix.transpose() * Vec3(points_b[j].x(), points_b[j].y(), 1.0);
    norms_a[j] = std::hypot(lines_a[j].x(), lines_a[j].y());
  }
  LabelMatrix out(na, nb);
  for (Eigen::Index i = 0; i < na; ++i) {
    const Vec3 ha(points_a[i].x(), points_a[i].y(), 1.0);
    for (Eigen::Index j = 0; j < nb; ++j) {
      const Vec3 hb(points_b[j].x(), points_b[j].y(), 1.0);
      if (!(norms_b[i] > 0.0) || !(norms_a[j] > 0.0)) {
        out(i, j) = false;
        continue;
      }
      const double dist_b = std::abs(lines_b[i].dot(hb)) / norms_b[i];
      const double dist_a = std::abs(lines_a[j].dot(ha)) / norms_a[j];
      out(i, j) = dist_a <= eps && dist_b <= eps;
    }
  }
  return out;
}

Vec2 apply_homography(const Homography& h, const Vec2& p) {
  const Vec3 q = h.matrix * Vec3(p.x(), p.y(), 1.0);
  if (std::abs(q.z()) < 1e-12) throw NumericalError("point at infinity");
  return {q.x() / q.z(), q.y() / q.z()};
}

namespace {

// Similarity that maps the centroid to the origin and the mean distance to
// sqrt(2).
Mat3 normalizing_transform(std::span<const Vec2> pts) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 t;
  t << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return t;
}

bool collinear(const Vec2& a, const Vec2& b, const Vec2& c) {
  const Vec2 u = b - a;
  const Vec2 v = c - a;
  const double cross = u.x() * v.y() - u.y() * v.x();
  return std::abs(cross) <= 1e-9 * (u.squaredNorm() + v.squaredNorm() + 1.0);
}

bool degenerate_sample(std::span<const PointPair> s) {
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      for (int k = j + 1; k < 4; ++k) {
        if (collinear(s[i].a, s[j].a, s[k].a) ||
            collinear(s[i].b, s[j].b, s[k].b)) {
          return true;
        }
      }
    }
  }
  return false;
}

double transfer_error(const Mat3& h, const PointPair& m) {
  const Vec3 q = h * Vec3(m.a.x(), m.a.y(), 1.0);
  if (std::abs(q.z()) < 1e-12) return std::numeric_limits<double>::infinity();
  return (Vec2(q.x() / q.z(), q.y() / q.z()) - m.b).norm();
}

}  // namespace

Homography fit_homography_dlt(std::span<const PointPair> pairs) {
  const auto n = pairs.size();
  if (n < 4) throw NumericalError("estimation failed: fewer than 4 points");
  std::vector<Vec2> src(n), dst(n);
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = pairs[i].a;
    dst[i] = pairs[i].b;
  }
  const Mat3 t_src = normalizing_transform(src);
  const Mat3 t_dst = normalizing_transform(dst);

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = t_src * Vec3(src[i].x(), src[i].y(), 1.0);
    const Vec3 q = t_dst * Vec3(dst[i].x(), dst[i].y(), 1.0);
    const double x = p.x() / p.z(), y = p.y() / p.z();
    const double u = q.x() / q.z(), v = q.y() / q.z();
    a.row(2 * i) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
  }
  Eigen::VectorXd h;
  if (n == 4) {
    // Square system padded with a zero row so the SVD exposes the null space.
    Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(9, 9);
    padded.topRows(8) = a;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(padded, Eigen::ComputeFullV);
    h = svd.matrixV().col(8);
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    h = svd.matrixV().col(8);
  }
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Mat3 full = t_dst.inverse() * hn * t_src;
  if (!full.allFinite() || std::abs(full.determinant()) < 1e-15) {
    throw NumericalError("estimation failed: singular homography");
  }
  return Homography::normalized(full);
}

RobustHomography estimate_homography_robust(std::span<const PointPair> matches,
                                            const RansacOptions& options) {
  const int n = static_cast<int>(matches.size());
  if (n < 4) throw NumericalError("estimation failed");

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  int best_count = 0;
  Mat3 best = Mat3::Identity();

  std::array<PointPair, 4> sample;
  for (int it = 0; it < options.iterations; ++it) {
    std::array<int, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        idx[k] = pick(rng);
        fresh = true;
        for (int j = 0; j < k; ++j) fresh = fresh && idx[j] != idx[k];
      }
      sample[k] = matches[idx[k]];
    }
    if (degenerate_sample(sample)) continue;
    Mat3 h;
    try {
      h = fit_homography_dlt(sample).matrix;
    } catch (const NumericalError&) {
      continue;
    }
    int count = 0;
    for (const auto& m : matches) {
      if (transfer_error(h, m) <= options.inlier_eps) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best = h;
    }
  }
  if (best_count < 4) throw NumericalError("estimation failed");

  std::vector<PointPair> inliers;
  for (const auto& m : matches) {
    if (transfer_error(best, m) <= options.inlier_eps) inliers.push_back(m);
  }
  RobustHomography out;
  out.homography = fit_homography_dlt(inliers);
  out.inlier_mask.resize(n);
  for (int i = 0; i < n; ++i) {
    out.inlier_mask[i] =
        transfer_error(out.homography.matrix, matches[i]) <= options.inlier_eps;
    out.num_inliers += out.inlier_mask[i] ? 1 : 0;
  }
  return out;
}

}  // namespace glfeat::geometry
