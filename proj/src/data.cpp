#include "glfeat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <fmt/format.h>

#include "binary_io.hpp"
#include "glfeat/errors.hpp"

namespace glfeat::data {

namespace fs = std::filesystem;
using geometry::CameraIntrinsics;
using geometry::Homography;
using geometry::Mat3;
using geometry::PointPair;
using geometry::RelativePose;
using geometry::TwoViewGeometry;
using geometry::Vec2;
using geometry::Vec3;

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError(fmt::format("unknown split '{}'", s));
}

std::string PairRecord::scene() const { return id.substr(0, id.find(':')); }

void PairRecord::validate() const {
  if (homography.has_value() == two_view.has_value()) {
    throw DataError(fmt::format("record {}: exactly one ground-truth kind is required", id));
  }
}

bool PairRecord::operator==(const PairRecord& o) const {
  if (id != o.id || split != o.split || path_a != o.path_a || path_b != o.path_b) return false;
  if (homography.has_value() != o.homography.has_value()) return false;
  if (two_view.has_value() != o.two_view.has_value()) return false;
  if (homography && homography->matrix != o.homography->matrix) return false;
  if (two_view) {
    const auto& a = *two_view;
    const auto& b = *o.two_view;
    auto same_k = [](const CameraIntrinsics& x, const CameraIntrinsics& y) {
      return x.fx == y.fx && x.fy == y.fy && x.cx == y.cx && x.cy == y.cy;
    };
    return same_k(a.intrinsics_a, b.intrinsics_a) && same_k(a.intrinsics_b, b.intrinsics_b) &&
           a.pose.rotation == b.pose.rotation && a.pose.translation == b.pose.translation &&
           a.fundamental.matrix == b.fundamental.matrix;
  }
  return true;
}

void SyntheticSceneConfig::validate() const {
  if (texture_size < 160) throw ArgumentError("texture_size must be at least 160");
  if (crop_size <= 0 || crop_size % 32 != 0) {
    throw ArgumentError("crop_size must be a positive multiple of 32");
  }
  if (crop_size > texture_size) throw ArgumentError("crop_size exceeds texture_size");
  if (perspective_jitter < 0.0 || perspective_jitter > 0.25) {
    throw ArgumentError("perspective_jitter must lie in [0, 0.25]");
  }
  if (min_baseline <= 0.0 || max_baseline < min_baseline) {
    throw ArgumentError("baseline range must be positive and ordered");
  }
  if (max_roll_deg < 0.0 || max_roll_deg > 180.0) {
    throw ArgumentError("max_roll_deg must lie in [0, 180]");
  }
  if (!(max_zoom >= 1.0 && max_zoom <= 2.0)) throw ArgumentError("max_zoom must lie in [1, 2]");
}

std::mt19937_64 sub_generator(std::uint64_t master_seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = master_seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return std::mt19937_64(z);
}

// ---------------------------------------------------------------------------
// Textures

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Shape {
  enum Kind { kRect, kEllipse, kTriangle, kLine, kChecker } kind;
  double cx, cy, a, b, angle;
  Vec2 p0 = Vec2::Zero(), p1 = Vec2::Zero(), p2 = Vec2::Zero();
  float color[3];
  float color2[3];

  bool inside(double x, double y, float out[3]) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    bool hit = false;
    const float* col = color;
    switch (kind) {
      case kRect: hit = std::abs(u) <= a && std::abs(v) <= b; break;
      case kEllipse: hit = (u * u) / (a * a) + (v * v) / (b * b) <= 1.0; break;
      case kTriangle: {
        auto edge = [](const Vec2& p, const Vec2& q, double x0, double y0) {
          return (q.x() - p.x()) * (y0 - p.y()) - (q.y() - p.y()) * (x0 - p.x());
        };
        const double e0 = edge(p0, p1, x, y), e1 = edge(p1, p2, x, y), e2 = edge(p2, p0, x, y);
        hit = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        break;
      }
      case kLine: {
        const Vec2 d = p1 - p0;
        const double t = std::clamp((Vec2(x, y) - p0).dot(d) / d.squaredNorm(), 0.0, 1.0);
        hit = (p0 + t * d - Vec2(x, y)).norm() <= a;
        break;
      }
      case kChecker: {
        hit = std::abs(u) <= a && std::abs(v) <= b;
        const int cu = static_cast<int>(std::floor((u + a) / (2 * a / 4)));
        const int cv = static_cast<int>(std::floor((v + b) / (2 * b / 4)));
        if ((cu + cv) % 2) col = color2;
        break;
      }
    }
    if (hit) std::copy(col, col + 3, out);
    return hit;
  }

  void bounds(double& x0, double& y0, double& x1, double& y1) const {
    if (kind == kTriangle || kind == kLine) {
      x0 = std::min({p0.x(), p1.x(), p2.x()}) - a;
      x1 = std::max({p0.x(), p1.x(), p2.x()}) + a;
      y0 = std::min({p0.y(), p1.y(), p2.y()}) - a;
      y1 = std::max({p0.y(), p1.y(), p2.y()}) + a;
      return;
    }
    const double r = std::hypot(a, b);
    x0 = cx - r;
    x1 = cx + r;
    y0 = cy - r;
    y1 = cy + r;
  }
};

void random_color(std::mt19937_64& rng, float c[3]) {
  for (int i = 0; i < 3; ++i) c[i] = static_cast<float>(uniform(rng, 0.0, 1.0));
}

}  // namespace

Image make_texture(int size, std::mt19937_64& rng) {
  Image img = make_image(size, size);
  // Smooth background: bilinear blend of four corner colours plus a coarse
  // value-noise layer.
  float corner[4][3];
  for (auto& c : corner) random_color(rng, c);
  constexpr int kNoise = 9;
  double noise[kNoise][kNoise];
  for (auto& row : noise) {
    for (auto& v : row) v = uniform(rng, -0.15, 0.15);
  }
  for (int y = 0; y < size; ++y) {
    const double ty = static_cast<double>(y) / (size - 1);
    for (int x = 0; x < size; ++x) {
      const double tx = static_cast<double>(x) / (size - 1);
      const double gx = tx * (kNoise - 1), gy = ty * (kNoise - 1);
      const int ix = std::min(static_cast<int>(gx), kNoise - 2);
      const int iy = std::min(static_cast<int>(gy), kNoise - 2);
      const double fx = gx - ix, fy = gy - iy;
      const double n = (1 - fy) * ((1 - fx) * noise[iy][ix] + fx * noise[iy][ix + 1]) +
                       fy * ((1 - fx) * noise[iy + 1][ix] + fx * noise[iy + 1][ix + 1]);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ty) * ((1 - tx) * corner[0][c] + tx * corner[1][c]) +
                         ty * ((1 - tx) * corner[2][c] + tx * corner[3][c]);
        img.at(c, y, x) = static_cast<float>(std::clamp(v + n, 0.0, 1.0));
      }
    }
  }

  const int n_shapes = std::max(12, size * size / 900);
  std::uniform_int_distribution<int> kind_dist(0, 4);
  for (int s = 0; s < n_shapes; ++s) {
    Shape sh{};
    sh.kind = static_cast<Shape::Kind>(kind_dist(rng));
    sh.cx = uniform(rng, 0, size);
    sh.cy = uniform(rng, 0, size);
    const double scale = uniform(rng, 3.0, size / 9.0);
    sh.a = scale * uniform(rng, 0.4, 1.0);
    sh.b = scale * uniform(rng, 0.4, 1.0);
    sh.angle = uniform(rng, 0.0, std::numbers::pi);
    random_color(rng, sh.color);
    random_color(rng, sh.color2);
    if (sh.kind == Shape::kTriangle) {
      for (Vec2* p : {&sh.p0, &sh.p1, &sh.p2}) {
        *p = Vec2(sh.cx + uniform(rng, -2 * scale, 2 * scale),
                  sh.cy + uniform(rng, -2 * scale, 2 * scale));
      }
      sh.a = 1.0;
    } else if (sh.kind == Shape::kLine) {
      sh.p0 = Vec2(sh.cx, sh.cy);
      sh.p1 = Vec2(sh.cx + uniform(rng, -4 * scale, 4 * scale),
                   sh.cy + uniform(rng, -4 * scale, 4 * scale));
      if ((sh.p1 - sh.p0).norm() < 1.0) sh.p1.x() += 2.0;
      sh.p2 = sh.p1;
      sh.a = uniform(rng, 0.8, 2.5);
    }
    double x0, y0, x1, y1;
    sh.bounds(x0, y0, x1, y1);
    const int xa = std::max(0, static_cast<int>(std::floor(x0)));
    const int xb = std::min(size - 1, static_cast<int>(std::ceil(x1)));
    const int ya = std::max(0, static_cast<int>(std::floor(y0)));
    const int yb = std::min(size - 1, static_cast<int>(std::ceil(y1)));
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) {
        // 2x2 supersampled coverage.
        float acc[3] = {0, 0, 0};
        int hits = 0;
        for (int sy = 0; sy < 2; ++sy) {
          for (int sx = 0; sx < 2; ++sx) {
            float col[3];
            if (sh.inside(x - 0.25 + 0.5 * sx, y - 0.25 + 0.5 * sy, col)) {
              ++hits;
              for (int c = 0; c < 3; ++c) acc[c] += col[c];
            }
          }
        }
        if (hits == 0) continue;
        const float cover = hits / 4.0f;
        for (int c = 0; c < 3; ++c) {
          img.at(c, y, x) = (1 - cover) * img.at(c, y, x) + acc[c] / 4.0f;
        }
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Photometric jitter

namespace {

void photometric_jitter(Image& img, const SyntheticSceneConfig& cfg, std::mt19937_64& rng) {
  const double gain = 1.0 + uniform(rng, -cfg.contrast, cfg.contrast);
  const double offset = uniform(rng, -cfg.brightness, cfg.brightness);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) {
    double v = (img.data(i) - 0.5) * gain + 0.5 + offset;
    if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * noise(rng);
    img.data(i) = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  quantize_8bit(img);
}

}  // namespace

// ---------------------------------------------------------------------------
// Homography pairs

GeneratedPair generate_homography_pair(const SyntheticSceneConfig& cfg, std::mt19937_64& rng,
                                       const Image& base_image) {
  cfg.validate();
  if (base_image.height < 160 || base_image.width < 160) {
    throw ArgumentError("base image must be at least 160x160");
  }
  const int n = cfg.crop_size;
  if (base_image.height < n || base_image.width < n) {
    throw ArgumentError("base image smaller than the crop");
  }
  const std::array<Vec2, 4> corners{Vec2(0, 0), Vec2(n - 1, 0), Vec2(n - 1, n - 1),
                                    Vec2(0, n - 1)};
  const double jitter = cfg.perspective_jitter * n;
  GeneratedPair out;
  Homography h;
  int ox = 0, oy = 0;
  bool ok = false;
  for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
    ox = std::uniform_int_distribution<int>(0, base_image.width - n)(rng);
    oy = std::uniform_int_distribution<int>(0, base_image.height - n)(rng);
    std::array<PointPair, 4> pts;
    bool moved = false;
    for (int i = 0; i < 4; ++i) {
      const Vec2 d(uniform(rng, -1, 1) * jitter, uniform(rng, -1, 1) * jitter);
      moved = moved || d.x() != 0.0 || d.y() != 0.0;
      pts[i] = {corners[i], corners[i] + d};
    }
    h = moved ? geometry::fit_homography_dlt(pts) : Homography{};
    // Overlap: fraction of B pixels whose preimage lies inside A.
    const Homography inv = h.inverse();
    int inside = 0, total = 0;
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        const Vec2 pb((x + 0.5) * n / 16.0, (y + 0.5) * n / 16.0);
        const Vec2 pa = geometry::apply_homography(inv, pb);
        ++total;
        if (pa.x() >= 0 && pa.y() >= 0 && pa.x() <= n - 1 && pa.y() <= n - 1) ++inside;
      }
    }
    ok = inside * 2 >= total;
  }
  if (!ok) throw NumericalError("could not satisfy the overlap constraint");

  out.image_a = make_image(n, n);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) out.image_a.at(c, y, x) = base_image.at(c, oy + y, ox + x);
    }
  }
  quantize_8bit(out.image_a);
  const Homography inv = h.inverse();
  out.image_b = make_image(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const Vec2 pa = geometry::apply_homography(inv, Vec2(x, y));
      float rgb[3];
      sample_bilinear(base_image, pa.x() + ox, pa.y() + oy, rgb);
      for (int c = 0; c < 3; ++c) out.image_b.at(c, y, x) = rgb[c];
    }
  }
  photometric_jitter(out.image_b, cfg, rng);

  for (int y = 0; y < n; y += 4) {
    for (int x = 0; x < n; x += 4) {
      const Vec2 pb = geometry::apply_homography(h, Vec2(x, y));
      if (pb.x() >= 0 && pb.y() >= 0 && pb.x() <= n - 1 && pb.y() <= n - 1) {
        out.correspondences.push_back({Vec2(x, y), pb});
      }
    }
  }
  out.record.homography = h;
  return out;
}

// ---------------------------------------------------------------------------
// Posed views of textured planes

namespace {

struct Plane {
  Vec3 origin;
  Vec3 normal;
  Vec3 u;
  Vec3 v;
  double texel = 1.0;
  double half_extent = std::numeric_limits<double>::infinity();
  const Image* texture = nullptr;
};

struct Camera {
  CameraIntrinsics k;
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();

  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 ray(double x, double y) const {
    return rotation.transpose() * Vec3((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
  }
  std::optional<Vec2> project(const Vec3& world) const {
    const Vec3 c = rotation * world + translation;
    if (c.z() <= 1e-9) return std::nullopt;
    return Vec2(k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy);
  }
};

struct Hit {
  double distance;
  Vec3 point;
  const Plane* plane;
};

struct Scene {
  Image background;
  Image foreground;
  std::vector<Plane> planes;

  std::optional<Hit> trace(const Vec3& origin, const Vec3& dir) const {
    std::optional<Hit> best;
    for (const auto& pl : planes) {
      const double denom = pl.normal.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      const double s = pl.normal.dot(pl.origin - origin) / denom;
      if (s <= 1e-9) continue;
      const Vec3 p = origin + s * dir;
      const Vec3 rel = p - pl.origin;
      if (std::abs(rel.dot(pl.u)) > pl.half_extent || std::abs(rel.dot(pl.v)) > pl.half_extent) {
        continue;
      }
      if (!best || s < best->distance) best = Hit{s, p, &pl};
    }
    return best;
  }

  void shade(const Hit& hit, float rgb[3]) const {
    const Plane& pl = *hit.plane;
    const Vec3 rel = hit.point - pl.origin;
    const double tx = rel.dot(pl.u) / pl.texel + pl.texture->width / 2.0;
    const double ty = rel.dot(pl.v) / pl.texel + pl.texture->height / 2.0;
    sample_bilinear(*pl.texture, tx, ty, rgb);
  }
};

Mat3 random_rotation(std::mt19937_64& rng, double max_deg) {
  Vec3 axis(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  if (axis.norm() < 1e-6) axis = Vec3::UnitY();
  const double angle = uniform(rng, 0.0, max_deg) * std::numbers::pi / 180.0;
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Plane make_plane(const Vec3& origin, const Vec3& normal, double texel, const Image* tex) {
  Plane p;
  p.origin = origin;
  p.normal = normal.normalized();
  const Vec3 helper = std::abs(p.normal.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  p.u = helper.cross(p.normal).normalized();
  p.v = p.normal.cross(p.u).normalized();
  p.texel = texel;
  p.texture = tex;
  return p;
}

Image render(const Scene& scene, const Camera& cam, int n) {
  Image img = make_image(n, n);
  const Vec3 o = cam.center();
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      float acc[3] = {0, 0, 0};
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const auto hit = scene.trace(o, cam.ray(x - 0.25 + 0.5 * sx, y - 0.25 + 0.5 * sy));
          if (!hit) continue;
          float rgb[3];
          scene.shade(*hit, rgb);
          for (int c = 0; c < 3; ++c) acc[c] += rgb[c] / 4.0f;
        }
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = acc[c];
    }
  }
  return img;
}

// Fraction of `to` pixels that see a surface point visible inside `from`'s frame.
double overlap(const Scene& scene, const Camera& from, const Camera& to, int n) {
  int inside = 0, total = 0;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      ++total;
      const auto hit = scene.trace(to.center(), to.ray((x + 0.5) * n / 16.0, (y + 0.5) * n / 16.0));
      if (!hit) continue;
      const auto p = from.project(hit->point);
      if (p && p->x() >= 0 && p->y() >= 0 && p->x() <= n - 1 && p->y() <= n - 1) ++inside;
    }
  }
  return static_cast<double>(inside) / total;
}

RelativePose relative_pose(const Camera& a, const Camera& b) {
  RelativePose p;
  p.rotation = b.rotation * a.rotation.transpose();
  p.translation = b.translation - p.rotation * a.translation;
  return p;
}

std::vector<PointPair> visible_correspondences(const Scene& scene, const Camera& a,
                                               const Camera& b, int n) {
  std::vector<PointPair> out;
  for (int y = 0; y < n; y += 4) {
    for (int x = 0; x < n; x += 4) {
      const auto hit = scene.trace(a.center(), a.ray(x, y));
      if (!hit) continue;
      const auto pb = b.project(hit->point);
      if (!pb || pb->x() < 0 || pb->y() < 0 || pb->x() > n - 1 || pb->y() > n - 1) continue;
      const auto back = scene.trace(b.center(), b.ray(pb->x(), pb->y()));
      if (!back || (back->point - hit->point).norm() > 1e-6 * hit->distance) continue;
      out.push_back({Vec2(x, y), *pb});
    }
  }
  return out;
}

struct PosedScene {
  std::unique_ptr<Scene> scene;
  std::vector<Camera> cameras;
};

PosedScene make_posed_scene(const SyntheticSceneConfig& cfg, std::mt19937_64& rng,
                            int n_cameras) {
  cfg.validate();
  const int n = cfg.crop_size;
  PosedScene ps;
  ps.scene = std::make_unique<Scene>();
  Scene& scene = *ps.scene;
  scene.background = make_texture(cfg.texture_size, rng);
  scene.foreground = make_texture(std::max(160, cfg.texture_size / 2), rng);

  CameraIntrinsics k{static_cast<double>(n), static_cast<double>(n), (n - 1) / 2.0,
                     (n - 1) / 2.0};
  const double depth = cfg.plane_depth;
  const Mat3 tilt = random_rotation(rng, cfg.max_plane_tilt_deg);
  scene.planes.push_back(
      make_plane(Vec3(0, 0, depth), tilt * Vec3(0, 0, -1), depth / k.fx, &scene.background));
  if (cfg.second_plane) {
    const double fg_depth = depth * uniform(rng, 0.55, 0.75);
    const double visible = fg_depth * n / k.fx;  // width of the view at that depth
    const Vec3 origin(uniform(rng, -0.25, 0.25) * visible, uniform(rng, -0.25, 0.25) * visible,
                      fg_depth);
    Plane fg = make_plane(origin, random_rotation(rng, 15.0) * Vec3(0, 0, -1),
                          fg_depth / k.fx, &scene.foreground);
    fg.half_extent = visible * uniform(rng, 0.12, 0.22);
    scene.planes.push_back(fg);
  }

  Camera ref;
  ref.k = k;
  ps.cameras.push_back(ref);
  for (int c = 1; c < n_cameras; ++c) {
    bool ok = false;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      Camera cam;
      const double zoom = std::exp(uniform(rng, -1.0, 1.0) * std::log(cfg.max_zoom));
      cam.k = {k.fx * zoom, k.fy * zoom, k.cx, k.cy};
      const double roll = uniform(rng, -cfg.max_roll_deg, cfg.max_roll_deg) * std::numbers::pi / 180.0;
      cam.rotation = Eigen::AngleAxisd(roll, Vec3::UnitZ()).toRotationMatrix() *
                     random_rotation(rng, cfg.max_rotation_deg);
      const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double baseline = uniform(rng, cfg.min_baseline, cfg.max_baseline);
      const Vec3 center(baseline * std::cos(phi), baseline * std::sin(phi),
                        uniform(rng, -0.1, 0.1) * baseline);
      cam.translation = -cam.rotation * center;
      ok = true;
      for (const auto& other : ps.cameras) {
        ok = ok && overlap(scene, other, cam, n) >= 0.5 && overlap(scene, cam, other, n) >= 0.5 &&
             (cam.center() - other.center()).norm() > 1e-6;
      }
      if (ok) ps.cameras.push_back(cam);
    }
    if (!ok) throw NumericalError("could not sample a camera satisfying the overlap constraint");
  }
  return ps;
}

}  // namespace

GeneratedPair generate_two_view_pair(const SyntheticSceneConfig& cfg, std::mt19937_64& rng) {
  const PosedScene ps = make_posed_scene(cfg, rng, 2);
  const int n = cfg.crop_size;
  GeneratedPair out;
  out.image_a = render(*ps.scene, ps.cameras[0], n);
  out.image_b = render(*ps.scene, ps.cameras[1], n);
  photometric_jitter(out.image_a, cfg, rng);
  photometric_jitter(out.image_b, cfg, rng);
  out.record.two_view = geometry::make_two_view(ps.cameras[0].k, ps.cameras[1].k,
                                                relative_pose(ps.cameras[0], ps.cameras[1]));
  out.correspondences = visible_correspondences(*ps.scene, ps.cameras[0], ps.cameras[1], n);
  return out;
}

GeneratedTriplet generate_triplet(const SyntheticSceneConfig& cfg, std::mt19937_64& rng) {
  const PosedScene ps = make_posed_scene(cfg, rng, 3);
  const int n = cfg.crop_size;
  GeneratedTriplet out;
  for (int i = 0; i < 3; ++i) {
    out.images[i] = render(*ps.scene, ps.cameras[i], n);
    photometric_jitter(out.images[i], cfg, rng);
  }
  for (int p = 0; p < 3; ++p) {
    const auto [i, j] = kTripletPairs[p];
    out.geometry[p] = geometry::make_two_view(ps.cameras[i].k, ps.cameras[j].k,
                                              relative_pose(ps.cameras[i], ps.cameras[j]));
    out.correspondences[p] = visible_correspondences(*ps.scene, ps.cameras[i], ps.cameras[j], n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

Dataset generate_dataset(const DatasetConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const fs::path root = fs::weakly_canonical(fs::absolute(out_dir));
  Dataset ds;
  for (const auto* sub : {"train", "val", "test"}) fs::create_directories(root / sub);

  for (int s = 0; s < cfg.train_scenes; ++s) {
    auto rng = sub_generator(cfg.seed, static_cast<std::uint64_t>(s));
    const GeneratedTriplet t = generate_triplet(cfg.scene, rng);
    std::array<std::string, 3> paths;
    for (int i = 0; i < 3; ++i) {
      paths[i] = (root / "train" / fmt::format("train{:04d}_{}.png", s, i)).string();
      save_png(paths[i], t.images[i]);
    }
    for (int p = 0; p < 3; ++p) {
      const auto [i, j] = kTripletPairs[p];
      PairRecord r;
      r.id = fmt::format("train{:04d}:{}{}", s, i, j);
      r.split = Split::kTrain;
      r.path_a = paths[i];
      r.path_b = paths[j];
      r.two_view = t.geometry[p];
      ds.records.push_back(std::move(r));
    }
  }

  auto eval_split = [&](Split split, int scenes, std::uint64_t index_base) {
    const std::string name = to_string(split);
    for (int s = 0; s < scenes; ++s) {
      auto rng = sub_generator(cfg.seed, index_base + static_cast<std::uint64_t>(s));
      const Image base = make_texture(cfg.scene.texture_size, rng);
      for (int p = 0; p < cfg.pairs_per_eval_scene; ++p) {
        GeneratedPair g = generate_homography_pair(cfg.scene, rng, base);
        g.record.id = fmt::format("{}{:04d}:h{}", name, s, p);
        g.record.split = split;
        g.record.path_a = (root / name / fmt::format("{}{:04d}_h{}_a.png", name, s, p)).string();
        g.record.path_b = (root / name / fmt::format("{}{:04d}_h{}_b.png", name, s, p)).string();
        save_png(g.record.path_a, g.image_a);
        save_png(g.record.path_b, g.image_b);
        ds.records.push_back(std::move(g.record));
      }
    }
  };
  eval_split(Split::kVal, cfg.val_scenes, 1'000'000);
  eval_split(Split::kTest, cfg.test_scenes, 2'000'000);

  ds.manifest_path = root / "manifest.txt";
  write_manifest(ds.manifest_path, ds.records);
  return ds;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string relative_to(const std::string& path, const fs::path& base) {
  const fs::path p(path);
  if (!p.is_absolute()) return path;
  const fs::path rel = p.lexically_normal().lexically_relative(base.lexically_normal());
  if (rel.empty() || *rel.begin() == "..") return path;
  return rel.string();
}

std::string resolve(const std::string& path, const fs::path& base) {
  const fs::path p(path);
  if (p.is_absolute()) return p.lexically_normal().string();
  return (base / p).lexically_normal().string();
}

void put_matrix(std::ostream& out, const Mat3& m) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out << ' ' << fmt::format("{:.17g}", m(r, c));
  }
}

}  // namespace

void write_manifest(const fs::path& path, const std::vector<PairRecord>& records) {
  const fs::path base = fs::weakly_canonical(fs::absolute(path)).parent_path();
  std::ostringstream out;
  out << "# glfeat manifest v1\n";
  for (const auto& r : records) {
    r.validate();
    out << r.id << ' ' << to_string(r.split) << ' ' << relative_to(r.path_a, base) << ' '
        << relative_to(r.path_b, base);
    if (r.homography) {
      out << " homography";
      put_matrix(out, r.homography->matrix);
    } else {
      const auto& g = *r.two_view;
      out << " epipolar";
      put_matrix(out, g.fundamental.matrix);
      for (const auto* k : {&g.intrinsics_a, &g.intrinsics_b}) {
        out << fmt::format(" {:.17g} {:.17g} {:.17g} {:.17g}", k->fx, k->fy, k->cx, k->cy);
      }
      put_matrix(out, g.pose.rotation);
      out << fmt::format(" {:.17g} {:.17g} {:.17g}", g.pose.translation.x(),
                         g.pose.translation.y(), g.pose.translation.z());
    }
    out << '\n';
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError(fmt::format("cannot write manifest {}", path.string()));
  f << out.str();
}

std::vector<PairRecord> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open manifest {}", path.string()));
  const fs::path base = fs::weakly_canonical(fs::absolute(path)).parent_path();
  std::vector<PairRecord> records;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError(fmt::format("{}:{}: {}", path.string(), line_no, msg));
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line[0] == '#') {
      const std::string tag = "# glfeat manifest v";
      if (line.rfind(tag, 0) == 0 && line.substr(tag.size()) != "1") {
        throw fail("unsupported manifest version");
      }
      continue;
    }
    std::istringstream ss(line);
    PairRecord r;
    std::string split, kind;
    if (!(ss >> r.id >> split >> r.path_a >> r.path_b >> kind)) {
      throw fail("expected '<id> <split> <path_a> <path_b> <kind> numbers...'");
    }
    try {
      r.split = split_from_string(split);
    } catch (const DataError& e) {
      throw fail(e.what());
    }
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw fail(fmt::format("bad number '{}'", tok));
      }
    }
    auto mat = [&](std::size_t at) {
      Mat3 m;
      for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = v[at + i];
      return m;
    };
    if (kind == "homography") {
      if (v.size() != 9) throw fail(fmt::format("homography needs 9 numbers, got {}", v.size()));
      const Mat3 h = mat(0);
      if (!h.allFinite() || std::abs(h.determinant()) < 1e-300) throw fail("singular homography");
      r.homography = Homography::normalized(h);
    } else if (kind == "epipolar") {
      if (v.size() != 29) throw fail(fmt::format("epipolar needs 29 numbers, got {}", v.size()));
      TwoViewGeometry g;
      g.fundamental.matrix = mat(0);
      g.intrinsics_a = {v[9], v[10], v[11], v[12]};
      g.intrinsics_b = {v[13], v[14], v[15], v[16]};
      g.pose.rotation = mat(17);
      g.pose.translation = Vec3(v[26], v[27], v[28]);
      try {
        g.intrinsics_a.validate();
        g.intrinsics_b.validate();
        g.pose.validate();
      } catch (const Error& e) {
        throw fail(e.what());
      }
      Eigen::JacobiSVD<Mat3> svd(g.fundamental.matrix);
      const Vec3 sv = svd.singularValues();
      if (!(sv(0) > 0.0) || sv(2) >= 1e-9 * sv(0)) throw fail("fundamental matrix is not rank 2");
      r.two_view = g;
    } else {
      throw fail(fmt::format("unknown ground-truth kind '{}'", kind));
    }
    r.path_a = resolve(r.path_a, base);
    r.path_b = resolve(r.path_b, base);
    records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// GLFT feature files

std::vector<std::uint8_t> encode_features(const sampling::FeatureSet& f) {
  const auto n = static_cast<std::size_t>(f.keypoints.rows());
  const auto dim = static_cast<std::size_t>(f.descriptors.cols());
  if (f.keypoints.cols() != 2 || static_cast<std::size_t>(f.scores.size()) != n ||
      static_cast<std::size_t>(f.descriptors.rows()) != n) {
    throw ArgumentError("inconsistent feature set shapes");
  }
  if (!f.keypoints.allFinite()) throw ArgumentError("keypoint coordinates must be finite");
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = f.descriptors.row(static_cast<Eigen::Index>(i)).cast<double>().norm();
    if (std::abs(norm - 1.0) > 1e-5) {
      throw ArgumentError(fmt::format("descriptor {} is not unit norm ({})", i, norm));
    }
  }
  detail::ByteWriter w;
  w.put_bytes("GLFT", 4);
  w.put<std::uint32_t>(kFeatureFileVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n == 0 && dim == 0 ? 128 : dim));
  w.put_floats(f.keypoints.data(), n * 2);
  w.put_floats(f.scores.data(), n);
  w.put_floats(f.descriptors.data(), n * dim);
  return std::move(w.bytes());
}

sampling::FeatureSet decode_features(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "feature file");
  if (r.get_string(4, "magic") != "GLFT") r.fail("bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFeatureFileVersion) r.fail(fmt::format("unsupported version {}", version));
  const auto n = r.get<std::uint32_t>("feature count");
  const auto dim = r.get<std::uint32_t>("descriptor dim");
  if (dim == 0 || dim > 4096) r.fail(fmt::format("implausible descriptor dim {}", dim));
  const std::size_t expected = static_cast<std::size_t>(n) * (3 + dim) * sizeof(float);
  if (r.remaining() < expected) {
    // Walk the sections so the error names where the data runs out.
    std::vector<float> scratch(static_cast<std::size_t>(n) * std::max<std::size_t>(2, dim));
    r.get_floats(scratch.data(), static_cast<std::size_t>(n) * 2, "keypoints");
    r.get_floats(scratch.data(), n, "scores");
    r.get_floats(scratch.data(), static_cast<std::size_t>(n) * dim, "descriptors");
  }
  sampling::FeatureSet f;
  f.keypoints.resize(n, 2);
  f.scores.resize(n);
  f.descriptors.resize(n, dim);
  r.get_floats(f.keypoints.data(), static_cast<std::size_t>(n) * 2, "keypoints");
  r.get_floats(f.scores.data(), n, "scores");
  r.get_floats(f.descriptors.data(), static_cast<std::size_t>(n) * dim, "descriptors");
  if (r.remaining() != 0) r.fail("trailing bytes");
  if (!f.keypoints.allFinite()) r.fail("non-finite keypoint coordinates");
  return f;
}

void write_features(const fs::path& path, const sampling::FeatureSet& f) {
  detail::write_file_bytes(path.string(), encode_features(f));
}

sampling::FeatureSet read_features(const fs::path& path) {
  try {
    return decode_features(detail::read_file_bytes(path.string()));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace glfeat::data
