#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "glfeat/errors.hpp"
#include "glfeat/matching.hpp"
#include "oracles.hpp"

using namespace glfeat;
using namespace glfeat::matching;

namespace {

RowMatrix<float> unit_rows(int n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  RowMatrix<float> m(n, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  m.rowwise().normalize();
  return m;
}

DistanceMatrix random_distances(int na, int nb, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  DistanceMatrix d(na, nb);
  for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = u(rng);
  return d;
}

}  // namespace

TEST(DistanceMatrix, Examples) {
  RowMatrix<float> e(1, 3);
  e << 1, 0, 0;
  RowMatrix<float> f(1, 3);
  f << 0, 1, 0;
  EXPECT_EQ(distance_matrix(e, e)(0, 0), 0.0);
  EXPECT_NEAR(distance_matrix(e, f)(0, 0), std::sqrt(2.0), 1e-7);
  EXPECT_NEAR(distance_matrix(e, -e)(0, 0), 2.0, 1e-7);
  EXPECT_THROW(distance_matrix(e, RowMatrix<float>(1, 2)), ShapeError);
}

TEST(DistanceMatrix, CosineIdentityAndRange) {
  const auto a = unit_rows(20, 128, 1), b = unit_rows(30, 128, 2);
  const DistanceMatrix d = distance_matrix(a, b);
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 30; ++j) {
      const double cos = a.row(i).cast<double>().dot(b.row(j).cast<double>());
      EXPECT_NEAR(d(i, j) * d(i, j), 2.0 - 2.0 * cos, 1e-6);
      EXPECT_GE(d(i, j), 0.0);
      EXPECT_LE(d(i, j), 2.0);
    }
  }
}

TEST(MatchProb, ForwardExamples) {
  DistanceMatrix one(3, 1);
  one << 0.1, 0.7, 1.9;
  EXPECT_EQ(match_prob_forward(one, 4.0), RowMatrix<double>::Ones(3, 1));

  DistanceMatrix d(1, 2);
  d << 0.0, 1.0;
  const auto p = match_prob_forward(d, 1.0);
  EXPECT_NEAR(p(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(p(0, 1), std::exp(-1.0) / (1.0 + std::exp(-1.0)), 1e-12);

  DistanceMatrix sharp(1, 3);
  sharp << 0.5, 0.2, 0.9;
  const auto q = match_prob_forward(sharp, 1e6);
  EXPECT_NEAR(q(0, 1), 1.0, 1e-9);
  EXPECT_NEAR(q(0, 0), 0.0, 1e-9);
  EXPECT_THROW(match_prob_forward(d, 0.0), ArgumentError);
}

TEST(MatchProb, RowStochasticAndShiftInvariant) {
  const DistanceMatrix d = random_distances(17, 23, 3);
  const auto f = match_prob_forward(d, 15.0);
  const auto r = match_prob_reverse(d, 15.0);
  for (int i = 0; i < 17; ++i) EXPECT_NEAR(f.row(i).sum(), 1.0, 1e-9);
  for (int j = 0; j < 23; ++j) EXPECT_NEAR(r.col(j).sum(), 1.0, 1e-9);
  const DistanceMatrix shifted = (d.array() + 0.37).matrix();
  EXPECT_LT((match_prob_forward(shifted, 15.0) - f).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((match_prob_reverse(shifted, 15.0) - r).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CycleConsistent, TwoByTwoExample) {
  DistanceMatrix d(2, 2);
  d << 0, 1, 1, 0;
  const auto p = cycle_consistent_prob(d, 1.0);
  const double s = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(p(0, 0), s * s, 1e-12);
  EXPECT_NEAR(p(0, 0), 0.5344, 1e-4);
}

TEST(CycleConsistent, BoundedByFactorsAndTransposeSymmetric) {
  const DistanceMatrix d = random_distances(9, 12, 4);
  const auto p = cycle_consistent_prob(d, 7.0);
  const auto f = match_prob_forward(d, 7.0);
  const auto r = match_prob_reverse(d, 7.0);
  EXPECT_TRUE((p.array() <= f.array().min(r.array())).all());
  const DistanceMatrix dt = d.transpose();
  EXPECT_EQ(cycle_consistent_prob(dt, 7.0), RowMatrix<double>(p.transpose()));
}

TEST(SampleMatches, DeterministicLimitIsMutualNn) {
  const DistanceMatrix d = random_distances(15, 18, 5);
  std::mt19937_64 rng(6);
  const MatchSet sampled = sample_matches(match_distributions(d, 1e7), d, rng);
  const MatchSet mnn = mutual_nn_match(d);
  ASSERT_EQ(sampled.size(), mnn.size());
  for (int k = 0; k < mnn.size(); ++k) {
    EXPECT_EQ(sampled.matches[k].a, mnn.matches[k].a);
    EXPECT_EQ(sampled.matches[k].b, mnn.matches[k].b);
    EXPECT_NEAR(*sampled.matches[k].log_prob, 0.0, 1e-9);
  }
}

TEST(SampleMatches, SeedDeterminismAndLogProbs) {
  const DistanceMatrix d = random_distances(10, 10, 7);
  const auto p = match_distributions(d, 3.0);
  std::mt19937_64 r1(8), r2(8);
  const MatchSet a = sample_matches(p, d, r1);
  const MatchSet b = sample_matches(p, d, r2);
  ASSERT_EQ(a.size(), b.size());
  for (int k = 0; k < a.size(); ++k) {
    const auto& m = a.matches[k];
    EXPECT_EQ(m.a, b.matches[k].a);
    EXPECT_EQ(m.b, b.matches[k].b);
    EXPECT_DOUBLE_EQ(m.distance, d(m.a, m.b));
    EXPECT_NEAR(*m.log_prob, std::log(p.forward(m.a, m.b)) + std::log(p.reverse(m.a, m.b)),
                1e-12);
  }
}

TEST(MutualNn, Examples) {
  DistanceMatrix d(2, 2);
  d << 0, 1, 1, 0;
  const MatchSet m = mutual_nn_match(d);
  ASSERT_EQ(m.size(), 2);
  EXPECT_EQ(m.matches[0].a, 0);
  EXPECT_EQ(m.matches[0].b, 0);
  EXPECT_EQ(m.matches[1].a, 1);
  EXPECT_EQ(m.matches[1].b, 1);
  EXPECT_LE(mutual_nn_match(random_distances(3, 2, 9)).size(), 2);
  EXPECT_TRUE(mutual_nn_match(DistanceMatrix(0, 4)).empty());
}

TEST(MutualNn, MatchesDoubleArgminOracle) {
  for (int seed = 0; seed < 10; ++seed) {
    DistanceMatrix d = random_distances(50, 60, 100 + seed);
    // Coarse quantization creates ties.
    if (seed % 2) d = (d.array() * 4).round().matrix() / 4;
    const MatchSet m = mutual_nn_match(d);
    const auto want = oracle::mutual_nn(d);
    ASSERT_EQ(m.size(), static_cast<int>(want.size()));
    for (int k = 0; k < m.size(); ++k) {
      EXPECT_EQ(m.matches[k].a, want[k].first);
      EXPECT_EQ(m.matches[k].b, want[k].second);
    }
  }
}

// Only guaranteed once theta separates the row minimum from the runner-up: at
// small theta a column where i is unchallenged can win the product.
TEST(MutualNn, ArgmaxOfCycleProbabilityAgreesForSharpTheta) {
  const DistanceMatrix d = random_distances(12, 14, 11);
  const MatchSet m = mutual_nn_match(d);
  for (double theta : {1e4, 1e5}) {
    const auto p = cycle_consistent_prob(d, theta);
    for (const auto& mt : m.matches) {
      Eigen::Index j;
      p.row(mt.a).maxCoeff(&j);
      EXPECT_EQ(j, mt.b) << "theta " << theta;
    }
  }
}

TEST(MutualNn, CycleArgmaxCanDifferAtModerateTheta) {
  // Row 0 is nearest to column 0 but has to share it with row 1, while it is
  // alone near column 1.
  DistanceMatrix d(2, 2);
  d << 0.50, 0.51, 0.52, 1.90;
  const MatchSet m = mutual_nn_match(d);
  ASSERT_EQ(m.size(), 1);
  EXPECT_EQ(m.matches[0].b, 0);
  const auto p = cycle_consistent_prob(d, 5.0);
  EXPECT_GT(p(0, 1), p(0, 0));
}

TEST(MatchDump, RoundTrip) {
  MatchSet m;
  m.matches.push_back({0, 3, 0.25, std::nullopt, geometry::MatchLabel::kCorrect});
  m.matches.push_back({2, 1, 1.125, std::nullopt, geometry::MatchLabel::kIncorrect});
  m.matches.push_back({5, 4, 0.5, std::nullopt, std::nullopt});
  std::stringstream ss;
  write_match_dump(ss, m);
  const MatchSet r = read_match_dump(ss);
  ASSERT_EQ(r.size(), 3);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(r.matches[k].a, m.matches[k].a);
    EXPECT_EQ(r.matches[k].b, m.matches[k].b);
    EXPECT_EQ(r.matches[k].distance, m.matches[k].distance);
    EXPECT_EQ(r.matches[k].label, m.matches[k].label);
  }
  std::stringstream bad("1 2\n");
  EXPECT_THROW(read_match_dump(bad), DataError);
}
