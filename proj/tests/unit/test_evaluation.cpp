#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "glfeat/errors.hpp"
#include "glfeat/evaluation.hpp"
#include "metric_fixture.hpp"
#include "oracles.hpp"

using namespace glfeat;
using namespace glfeat::evaluation;

namespace {

sampling::FeatureSet features_from(const Keypoints& k, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  sampling::FeatureSet fs;
  fs.keypoints = k;
  fs.scores = Vector<float>::Ones(k.rows());
  fs.descriptors.resize(k.rows(), dim);
  for (Eigen::Index i = 0; i < fs.descriptors.size(); ++i) fs.descriptors.data()[i] = n(rng);
  fs.descriptors.rowwise().normalize();
  return fs;
}

}  // namespace

TEST(Frame, ContainsPixelCentreRange) {
  const Frame f{10, 5};
  EXPECT_TRUE(f.contains({0, 0}));
  EXPECT_TRUE(f.contains({9, 4}));
  EXPECT_FALSE(f.contains({9.01, 4}));
  EXPECT_FALSE(f.contains({-0.01, 2}));
}

TEST(Metrics, RepeatabilityEqualsOracle) {
  for (int seed = 0; seed < 50; ++seed) {
    const auto f = fixture::make_metric_pair(seed);
    const auto got = repeatability_counts(f.ka, f.kb, f.h, 3.0, f.frame_a, f.frame_b);
    const auto want = oracle::repeatability(f.pts_a(), f.pts_b(), f.h.matrix, 3.0, 64, 48, 64, 48);
    EXPECT_EQ(got.covisible_a, want.cov_a);
    EXPECT_EQ(got.covisible_b, want.cov_b);
    EXPECT_EQ(got.repeated_a, want.rep_a);
    EXPECT_EQ(got.repeated_b, want.rep_b);
    const int cov = want.cov_a + want.cov_b;
    if (cov > 0) {
      EXPECT_EQ(*got.value(), double(want.rep_a + want.rep_b) / cov);
    } else {
      EXPECT_FALSE(got.value().has_value());
    }
  }
}

TEST(Metrics, MmaAndMatchingScoreEqualOracle) {
  for (int seed = 0; seed < 50; ++seed) {
    const auto f = fixture::make_metric_pair(seed);
    const int correct = oracle::correct_matches(f.match_pairs(), f.pts_a(), f.pts_b(), f.h.matrix, 3.0);
    EXPECT_EQ(count_correct(f.matches, f.ka, f.kb, f.h, 3.0), correct);
    EXPECT_EQ(*mma_pair(f.matches, f.ka, f.kb, f.h, 3.0), double(correct) / f.matches.size());
    const auto rep = oracle::repeatability(f.pts_a(), f.pts_b(), f.h.matrix, 3.0, 64, 48, 64, 48);
    const int denom = std::min(rep.cov_a, rep.cov_b);
    const auto ms = matching_score(f.matches, f.ka, f.kb, f.h, 3.0, f.frame_a, f.frame_b);
    if (denom > 0) {
      EXPECT_EQ(*ms, double(correct) / denom);
    } else {
      EXPECT_FALSE(ms.has_value());
    }
  }
}

TEST(Metrics, MhaEqualsCornerErrorOracle) {
  geometry::RansacOptions ransac;
  for (int seed = 0; seed < 20; ++seed) {
    const auto f = fixture::make_metric_pair(seed);
    const auto got = mha_pair(f.matches, f.ka, f.kb, f.h, f.frame_a, 3.0, ransac);
    std::vector<geometry::PointPair> pts;
    for (const auto& m : f.matches.matches) {
      pts.push_back({{f.ka(m.a, 0), f.ka(m.a, 1)}, {f.kb(m.b, 0), f.kb(m.b, 1)}});
    }
    const auto est = geometry::estimate_homography_robust(pts, ransac);
    const double err = oracle::corner_error(est.homography.matrix, f.h.matrix, 64, 48);
    EXPECT_NEAR(got.corner_error, err, 1e-9);
    EXPECT_EQ(got.ok, err <= 3.0);
  }
}

TEST(Metrics, MhaOnExactCorrespondencesIsCorrect) {
  auto f = fixture::make_metric_pair(3);
  for (Eigen::Index i = 0; i < f.ka.rows(); ++i) {
    const auto [x, y] = oracle::homography_map(f.h.matrix, f.ka(i, 0), f.ka(i, 1));
    f.kb(i, 0) = static_cast<float>(x);
    f.kb(i, 1) = static_cast<float>(y);
  }
  matching::MatchSet aligned;
  for (int i = 0; i < 20; ++i) {
    matching::Match m;
    m.a = m.b = i;
    aligned.matches.push_back(m);
  }
  const auto got = mha_pair(aligned, f.ka, f.kb, f.h, f.frame_a, 3.0, {});
  EXPECT_TRUE(got.ok);
  EXPECT_LT(got.corner_error, 1e-2);
  matching::MatchSet three(aligned);
  three.matches.resize(3);
  EXPECT_FALSE(mha_pair(three, f.ka, f.kb, f.h, f.frame_a, 3.0, {}).ok);
}

TEST(Metrics, EmptyInputsAreUndefined) {
  const Keypoints none(0, 2);
  EXPECT_FALSE(mma_pair({}, none, none, {}, 3.0).has_value());
  EXPECT_FALSE(repeatability(none, none, {}, 3.0, {8, 8}, {8, 8}).has_value());
  EXPECT_THROW(count_correct({}, none, none, {}, -1.0), ArgumentError);
}

TEST(EvaluatePair, SelfPairIsPerfect) {
  const auto f = fixture::make_metric_pair(7);
  // Keep only keypoints inside the frame.
  std::vector<int> keep;
  for (int i = 0; i < 20; ++i) {
    if (f.frame_a.contains({f.ka(i, 0), f.ka(i, 1)})) keep.push_back(i);
  }
  Keypoints k(static_cast<Eigen::Index>(keep.size()), 2);
  for (std::size_t i = 0; i < keep.size(); ++i) k.row(i) = f.ka.row(keep[i]);
  const auto fs = features_from(k, 16, 8);
  const auto r = evaluate_pair(fs, fs, {}, f.frame_a, f.frame_a, {});
  EXPECT_EQ(*r.rep(), 1.0);
  EXPECT_EQ(*r.mma(), 1.0);
  EXPECT_EQ(*r.ms(), 1.0);
  EXPECT_EQ(r.n_matches, k.rows());
  EXPECT_TRUE(r.homography_ok);
}

TEST(Summarize, MeansOverDefinedPairs) {
  PairEvalResult a, b;
  a.n_feats_a = 10;
  a.n_feats_b = 20;
  a.n_covisible_a = a.n_covisible_b = 10;
  a.n_repeated_a = a.n_repeated_b = 5;
  a.n_matches = 4;
  a.n_correct = 3;
  a.homography_ok = true;
  b.n_feats_a = b.n_feats_b = 0;
  const auto s = summarize({a, b});
  EXPECT_EQ(s.n_pairs, 2);
  EXPECT_EQ(s.nf, 7.5);
  EXPECT_EQ(s.rep, 0.5);
  EXPECT_EQ(s.mma, 0.75);
  EXPECT_EQ(s.ms, 0.3);
  EXPECT_EQ(s.mha, 0.5);
  EXPECT_EQ(s.n_mma_pairs, 1);
}

TEST(EvaluateDataset, RecordsFailuresAndSkipsEpipolarPairs) {
  data::PairRecord ok{"s:0", data::Split::kTest, "a", "a", geometry::Homography{}, std::nullopt};
  data::PairRecord broken = ok;
  broken.id = "s:1";
  broken.path_b = "missing";
  data::PairRecord epi = ok;
  epi.id = "s:2";
  epi.homography.reset();
  const auto fs = features_from(fixture::make_metric_pair(1).ka.topRows(4), 8, 2);
  const FeatureProvider provider = [&](const std::string& path) -> ImageFeatures {
    if (path == "missing") throw DataError("cannot read missing");
    return {fs, {64, 48}};
  };
  const auto rep = evaluate_dataset({ok, broken, epi}, provider, {});
  ASSERT_EQ(rep.pairs.size(), 1u);
  EXPECT_EQ(rep.pairs[0].id, "s:0");
  ASSERT_EQ(rep.failures.size(), 1u);
  EXPECT_EQ(rep.failures[0].rfind("s:1:", 0), 0u);
}

TEST(BenchFps, ReportsConsistentStatistics) {
  int calls = 0;
  const auto r = bench_fps([&](const Image& img) {
    EXPECT_EQ(img.width, 64);
    EXPECT_EQ(img.height, 32);
    ++calls;
  }, 64, 32, 5, 2);
  EXPECT_EQ(calls, 7);
  EXPECT_EQ(r.n_images, 5);
  EXPECT_GT(r.fps, 0.0);
  EXPECT_GE(r.std_ms, 0.0);
  EXPECT_NEAR(r.fps, 1000.0 / r.mean_ms, 1e-6 * r.fps);
  EXPECT_THROW(bench_fps([](const Image&) {}, 8, 8, 0, 0), ArgumentError);
}

TEST(Report, CsvAndSummaryFormats) {
  PairEvalResult r;
  r.id = "x:0";
  std::ostringstream csv, sum;
  write_pair_csv(csv, {r});
  EXPECT_NE(csv.str().find("x:0,0,0,0,0,0,0,0,0,nan,nan,nan,0,inf"), std::string::npos);
  write_summary(sum, summarize({r}));
  EXPECT_NE(sum.str().find("MMA=0.000000"), std::string::npos);
}
