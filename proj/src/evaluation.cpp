#include "glfeat/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "glfeat/errors.hpp"

namespace glfeat::evaluation {

using geometry::Homography;
using geometry::Vec2;

bool Frame::contains(const Vec2& p) const {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1 && p.y() <= height - 1;
}

std::optional<double> RepeatabilityCounts::value() const {
  const int cov = covisible_a + covisible_b;
  if (cov == 0) return std::nullopt;
  return static_cast<double>(repeated_a + repeated_b) / cov;
}

namespace {

Vec2 point(const Keypoints& k, Eigen::Index i) { return {k(i, 0), k(i, 1)}; }

void check_eps(double eps) {
  if (!(eps > 0.0)) throw ArgumentError("eps must be positive");
}

// Counts points of `from` mapped by `h` into `frame`, and those landing within
// eps of some point of `to`.
void count_side(const Keypoints& from, const Keypoints& to, const Homography& h, double eps,
                const Frame& frame, int& covisible, int& repeated) {
  const double eps2 = eps * eps;
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    const Vec2 p = geometry::apply_homography(h, point(from, i));
    if (!frame.contains(p)) continue;
    ++covisible;
    for (Eigen::Index j = 0; j < to.rows(); ++j) {
      if ((point(to, j) - p).squaredNorm() <= eps2) {
        ++repeated;
        break;
      }
    }
  }
}

}  // namespace

RepeatabilityCounts repeatability_counts(const Keypoints& ka, const Keypoints& kb,
                                         const Homography& h, double eps, const Frame& frame_a,
                                         const Frame& frame_b) {
  check_eps(eps);
  RepeatabilityCounts c;
  count_side(ka, kb, h, eps, frame_b, c.covisible_a, c.repeated_a);
  count_side(kb, ka, h.inverse(), eps, frame_a, c.covisible_b, c.repeated_b);
  return c;
}

std::optional<double> repeatability(const Keypoints& ka, const Keypoints& kb,
                                    const Homography& h, double eps, const Frame& frame_a,
                                    const Frame& frame_b) {
  return repeatability_counts(ka, kb, h, eps, frame_a, frame_b).value();
}

int count_correct(const matching::MatchSet& matches, const Keypoints& ka, const Keypoints& kb,
                  const Homography& h, double eps) {
  check_eps(eps);
  int n = 0;
  for (const auto& m : matches.matches) {
    if (m.a < 0 || m.b < 0 || m.a >= ka.rows() || m.b >= kb.rows()) {
      throw ArgumentError(fmt::format("match ({}, {}) out of range", m.a, m.b));
    }
    const Vec2 p = geometry::apply_homography(h, point(ka, m.a));
    if ((p - point(kb, m.b)).norm() <= eps) ++n;
  }
  return n;
}

std::optional<double> mma_pair(const matching::MatchSet& matches, const Keypoints& ka,
                               const Keypoints& kb, const Homography& h, double eps) {
  const int correct = count_correct(matches, ka, kb, h, eps);
  if (matches.empty()) return std::nullopt;
  return static_cast<double>(correct) / matches.size();
}

std::optional<double> matching_score(const matching::MatchSet& matches, const Keypoints& ka,
                                     const Keypoints& kb, const Homography& h, double eps,
                                     const Frame& frame_a, const Frame& frame_b) {
  const auto c = repeatability_counts(ka, kb, h, eps, frame_a, frame_b);
  const int denom = std::min(c.covisible_a, c.covisible_b);
  const int correct = count_correct(matches, ka, kb, h, eps);
  if (denom == 0) return std::nullopt;
  return static_cast<double>(correct) / denom;
}

HomographyCheck mha_pair(const matching::MatchSet& matches, const Keypoints& ka,
                         const Keypoints& kb, const Homography& h_gt, const Frame& frame_a,
                         double accept_eps, const geometry::RansacOptions& ransac) {
  HomographyCheck out;
  if (matches.size() < 4) return out;
  std::vector<geometry::PointPair> pts;
  pts.reserve(matches.matches.size());
  for (const auto& m : matches.matches) pts.push_back({point(ka, m.a), point(kb, m.b)});
  try {
    const auto est = geometry::estimate_homography_robust(pts, ransac);
    const double w = frame_a.width - 1, hgt = frame_a.height - 1;
    double err = 0.0;
    for (const Vec2& c : {Vec2(0, 0), Vec2(w, 0), Vec2(w, hgt), Vec2(0, hgt)}) {
      err += (geometry::apply_homography(est.homography, c) -
              geometry::apply_homography(h_gt, c))
                 .norm();
    }
    out.corner_error = err / 4.0;
    out.ok = out.corner_error <= accept_eps;
  } catch (const Error&) {
    return HomographyCheck{};
  }
  return out;
}

std::optional<double> PairEvalResult::rep() const {
  return RepeatabilityCounts{n_covisible_a, n_covisible_b, n_repeated_a, n_repeated_b}.value();
}

std::optional<double> PairEvalResult::ms() const {
  const int denom = std::min(n_covisible_a, n_covisible_b);
  if (denom == 0) return std::nullopt;
  return static_cast<double>(n_correct) / denom;
}

std::optional<double> PairEvalResult::mma() const {
  if (n_matches == 0) return std::nullopt;
  return static_cast<double>(n_correct) / n_matches;
}

PairEvalResult evaluate_pair(const sampling::FeatureSet& fa, const sampling::FeatureSet& fb,
                             const Homography& h, const Frame& frame_a, const Frame& frame_b,
                             const EvalConfig& cfg) {
  PairEvalResult r;
  r.n_feats_a = fa.size();
  r.n_feats_b = fb.size();
  const auto c = repeatability_counts(fa.keypoints, fb.keypoints, h, cfg.eps, frame_a, frame_b);
  r.n_covisible_a = c.covisible_a;
  r.n_covisible_b = c.covisible_b;
  r.n_repeated_a = c.repeated_a;
  r.n_repeated_b = c.repeated_b;
  matching::MatchSet matches;
  if (fa.size() > 0 && fb.size() > 0) {
    matches = matching::mutual_nn_match(matching::distance_matrix(fa.descriptors, fb.descriptors));
  }
  r.n_matches = matches.size();
  r.n_correct = count_correct(matches, fa.keypoints, fb.keypoints, h, cfg.eps);
  const auto hc = mha_pair(matches, fa.keypoints, fb.keypoints, h, frame_a, cfg.mha_eps,
                           cfg.ransac);
  r.homography_ok = hc.ok;
  r.corner_error = hc.corner_error;
  return r;
}

MetricsSummary summarize(const std::vector<PairEvalResult>& results) {
  MetricsSummary s;
  s.n_pairs = static_cast<int>(results.size());
  if (results.empty()) return s;
  long feats = 0;
  int mha = 0;
  for (const auto& r : results) {
    feats += r.n_feats_a + r.n_feats_b;
    if (r.homography_ok) ++mha;
    if (const auto v = r.rep()) {
      s.rep += *v;
      ++s.n_rep_pairs;
    }
    if (const auto v = r.ms()) {
      s.ms += *v;
      ++s.n_ms_pairs;
    }
    if (const auto v = r.mma()) {
      s.mma += *v;
      ++s.n_mma_pairs;
    }
  }
  s.nf = static_cast<double>(feats) / (2.0 * s.n_pairs);
  s.mha = static_cast<double>(mha) / s.n_pairs;
  if (s.n_rep_pairs) s.rep /= s.n_rep_pairs;
  if (s.n_ms_pairs) s.ms /= s.n_ms_pairs;
  if (s.n_mma_pairs) s.mma /= s.n_mma_pairs;
  return s;
}

EvaluationReport evaluate_dataset(const std::vector<data::PairRecord>& records,
                                  const FeatureProvider& provider, const EvalConfig& cfg) {
  check_eps(cfg.eps);
  EvaluationReport report;
  for (const auto& rec : records) {
    if (!rec.homography) continue;
    try {
      const ImageFeatures a = provider(rec.path_a);
      const ImageFeatures b = provider(rec.path_b);
      PairEvalResult r = evaluate_pair(a.features, b.features, *rec.homography, a.frame,
                                       b.frame, cfg);
      r.id = rec.id;
      report.pairs.push_back(std::move(r));
    } catch (const Error& e) {
      report.failures.push_back(fmt::format("{}: {}", rec.id, e.what()));
    }
  }
  report.summary = summarize(report.pairs);
  return report;
}

FpsReport bench_fps(const std::function<void(const Image&)>& run, int width, int height,
                    int n_images, int warmup_n, std::uint64_t seed) {
  if (n_images < 1) throw ArgumentError("n_images must be at least 1");
  if (warmup_n < 0) throw ArgumentError("warmup_n must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img = make_image(height, width);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data(i) = u(rng);
  quantize_8bit(img);

  for (int i = 0; i < warmup_n; ++i) run(img);
  std::vector<double> secs;
  secs.reserve(static_cast<std::size_t>(n_images));
  for (int i = 0; i < n_images; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run(img);
    secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  FpsReport rep;
  rep.n_images = n_images;
  rep.width = width;
  rep.height = height;
  double total = 0.0, mean_rate = 0.0;
  for (double s : secs) {
    total += s;
    mean_rate += 1.0 / s;
  }
  mean_rate /= n_images;
  rep.fps = n_images / total;
  rep.mean_ms = 1000.0 * total / n_images;
  double var_rate = 0.0, var_ms = 0.0;
  for (double s : secs) {
    var_rate += (1.0 / s - mean_rate) * (1.0 / s - mean_rate);
    var_ms += (1000.0 * s - rep.mean_ms) * (1000.0 * s - rep.mean_ms);
  }
  if (n_images > 1) {
    rep.fps_std = std::sqrt(var_rate / (n_images - 1));
    rep.std_ms = std::sqrt(var_ms / (n_images - 1));
  }
  return rep;
}

void write_pair_csv(std::ostream& out, const std::vector<PairEvalResult>& pairs) {
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt::format("{:.6f}", *v) : std::string("nan");
  };
  out << "id,n_feats_a,n_feats_b,n_covisible_a,n_covisible_b,n_repeated_a,n_repeated_b,"
         "n_matches,n_correct,rep,ms,mma,homography_ok,corner_error\n";
  for (const auto& r : pairs) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6f}\n", r.id, r.n_feats_a,
                       r.n_feats_b, r.n_covisible_a, r.n_covisible_b, r.n_repeated_a,
                       r.n_repeated_b, r.n_matches, r.n_correct, opt(r.rep()), opt(r.ms()),
                       opt(r.mma()), r.homography_ok ? 1 : 0, r.corner_error);
  }
}

void write_summary(std::ostream& out, const MetricsSummary& s) {
  out << fmt::format("pairs={}\n", s.n_pairs);
  out << fmt::format("NF={:.4f}\n", s.nf);
  out << fmt::format("Rep={:.6f}\n", s.rep);
  out << fmt::format("MS={:.6f}\n", s.ms);
  out << fmt::format("MMA={:.6f}\n", s.mma);
  out << fmt::format("MHA={:.6f}\n", s.mha);
  out << fmt::format("rep_pairs={}\nms_pairs={}\nmma_pairs={}\n", s.n_rep_pairs, s.n_ms_pairs,
                     s.n_mma_pairs);
}

}  // namespace glfeat::evaluation
