#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "glfeat/data.hpp"
#include "glfeat/errors.hpp"
#include "glfeat/matching.hpp"
#include "glfeat/training.hpp"
#include "oracles.hpp"
#include "toy_reinforce.hpp"

using namespace glfeat;
using namespace glfeat::training;
using geometry::MatchLabel;
using sampling::KeypointSample;

namespace {

geometry::FundamentalMatrix f_x_translation() {
  geometry::Mat3 f;
  f << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  return {f};
}

matching::Match match(int a, int b) {
  matching::Match m;
  m.a = a;
  m.b = b;
  return m;
}

KeypointSample accepted_at(int x, int y) {
  KeypointSample s;
  s.pixel = {x, y};
  s.accepted = true;
  return s;
}

// Triplet of one texture crop seen three times; geometry is a pure x
// translation so identical pixels are exact correspondences.
Triplet identical_triplet(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Image tex = data::make_texture(160, rng);
  Image img = make_image(size, size);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) img.at(c, y, x) = tex.at(c, y + 10, x + 10);
  const geometry::CameraIntrinsics k{double(size), double(size), (size - 1) / 2.0,
                                     (size - 1) / 2.0};
  const auto g = geometry::make_two_view(k, k, {geometry::Mat3::Identity(), {1e-3, 0, 0}});
  Triplet t;
  t.images = {img, img, img};
  t.geometry = {g, g, g};
  return t;
}

}  // namespace

TEST(RewardConfig, DefaultsAndValidation) {
  const RewardConfig c;
  EXPECT_EQ(c.lambda_tp, 1.0);
  EXPECT_EQ(c.lambda_fp, -0.25);
  EXPECT_EQ(c.lambda_kp, -0.001);
  EXPECT_EQ(c.eps, 2.0);
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW((RewardConfig{0.0, -0.25, -0.001, 2.0}.validate()), ArgumentError);
  EXPECT_THROW((RewardConfig{1.0, 0.1, -0.001, 2.0}.validate()), ArgumentError);
  EXPECT_THROW((RewardConfig{1.0, -0.25, 0.1, 2.0}.validate()), ArgumentError);
}

TEST(Schedules, Warmup) {
  EXPECT_EQ(warmup_factor(0), 0.0);
  EXPECT_EQ(warmup_factor(1), 1.0 / 5000);
  EXPECT_EQ(warmup_factor(2500), 0.5);
  EXPECT_EQ(warmup_factor(5000), 1.0);
  EXPECT_EQ(warmup_factor(90000), 1.0);
  EXPECT_THROW(warmup_factor(-1), ArgumentError);
}

TEST(Schedules, Theta) {
  const ThetaSchedule s;
  EXPECT_EQ(theta_at(0, s), 15.0);
  EXPECT_EQ(theta_at(10, s), 20.0);
  EXPECT_EQ(theta_at(70, s), 50.0);
  for (int e = 0; e < 200; ++e) EXPECT_GE(theta_at(e + 1, s), theta_at(e, s));
}

TEST(Schedules, PenaltyRamp) {
  const PenaltyRamp r;
  EXPECT_EQ(penalty_scale_at(0, r), 0.0);
  EXPECT_NEAR(penalty_scale_at(1, r), 0.3, 1e-15);
  EXPECT_EQ(penalty_scale_at(10, r), 1.0);
  EXPECT_EQ(penalty_scale_at(3, {0, 1.0, 0.0}), 1.0);
}

TEST(AssignRewards, ExactCorrespondencesEarnLambdaTp) {
  std::vector<KeypointSample> a, b;
  matching::MatchSet m;
  for (int i = 0; i < 5; ++i) {
    a.push_back(accepted_at(3 * i, i));
    b.push_back(accepted_at(3 * i + 7, i));
    m.matches.push_back(match(i, i));
  }
  const PairRewards r = assign_rewards(m, a, b, f_x_translation(), {});
  for (double v : r.match_rewards) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(r.n_correct, 5);
}

TEST(AssignRewards, NoMatchesOnlyKeypointPenalty) {
  std::vector<KeypointSample> a(7, accepted_at(0, 0)), b(7, accepted_at(1, 1));
  const PairRewards r = assign_rewards({}, a, b, f_x_translation(), {});
  EXPECT_DOUBLE_EQ(r.total(), 2 * 7 * -0.001);
}

TEST(AssignRewards, MixedCaseArithmetic) {
  std::vector<KeypointSample> a, b;
  for (int i = 0; i < 10; ++i) a.push_back(accepted_at(i, i));
  for (int i = 0; i < 12; ++i) b.push_back(accepted_at(i, i));
  // Rejected samples never count.
  KeypointSample rejected = accepted_at(0, 0);
  rejected.accepted = false;
  a.insert(a.begin(), rejected);
  matching::MatchSet m;
  // Same row -> correct under x translation; 5 rows apart -> incorrect.
  for (int i = 0; i < 3; ++i) m.matches.push_back(match(i, i));
  m.matches.push_back(match(4, 9));
  m.matches.push_back(match(6, 1));
  const PairRewards r = assign_rewards(m, a, b, f_x_translation(), {});
  EXPECT_EQ(r.n_correct, 3);
  EXPECT_EQ(r.labels[3], MatchLabel::kIncorrect);
  EXPECT_NEAR(r.total(), 3 * 1.0 + 2 * -0.25 + 22 * -0.001, 1e-12);
  matching::MatchSet bad;
  bad.matches.push_back(match(10, 0));
  EXPECT_THROW(assign_rewards(bad, a, b, f_x_translation(), {}), ArgumentError);
}

TEST(PolicyGradient, SurrogateValue) {
  const std::vector<double> lp{-0.5, -1.0, -2.0};
  EXPECT_EQ(policy_gradient(lp, std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(policy_gradient(lp, std::vector<double>{1, -0.25, 2}), -0.5 + 0.25 - 4);
  EXPECT_THROW(policy_gradient(lp, std::vector<double>{1}), ArgumentError);
}

TEST(PolicyGradient, BernoulliAcceptanceGradient) {
  // A single-pixel cell: selection is certain, only acceptance matters.
  sampling::ScoreMap s(1, 1);
  s(0, 0) = 0.7;
  const sampling::CellGrid grid{8, 1, 1};
  KeypointSample k;
  k.accepted = true;
  sampling::ScoreMap d = sampling::ScoreMap::Zero(1, 1);
  add_keypoint_log_prob_grad(s, grid, k, 2.5, d);
  EXPECT_NEAR(d(0, 0), 2.5 * (1 - oracle::sigmoid(0.7)), 1e-15);
  k.accepted = false;
  d.setZero();
  add_keypoint_log_prob_grad(s, grid, k, 2.5, d);
  EXPECT_NEAR(d(0, 0), -2.5 * oracle::sigmoid(0.7), 1e-15);
}

TEST(PolicyGradient, KeypointGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  sampling::ScoreMap s(4, 4);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = n(rng);
  const sampling::CellGrid grid{4, 4, 4};
  const auto samples = sampling::sample_keypoints(s, grid, rng);
  sampling::ScoreMap d = sampling::ScoreMap::Zero(4, 4);
  add_keypoint_log_prob_grad(s, grid, samples[0], 1.0, d);
  auto log_prob = [&](const sampling::ScoreMap& m) {
    std::vector<double> logits(m.data(), m.data() + m.size());
    const int idx = samples[0].pixel.y * 4 + samples[0].pixel.x;
    const double a = oracle::sigmoid(m(samples[0].pixel.y, samples[0].pixel.x));
    return std::log(oracle::softmax(logits)[idx]) + std::log(samples[0].accepted ? a : 1 - a);
  };
  for (int i = 0; i < 16; ++i) {
    sampling::ScoreMap up = s, dn = s;
    up.data()[i] += 1e-6;
    dn.data()[i] -= 1e-6;
    EXPECT_NEAR(d.data()[i], (log_prob(up) - log_prob(dn)) / 2e-6, 1e-7);
  }
}

TEST(CreditMode, Strings) {
  EXPECT_EQ(credit_mode_from_string(to_string(CreditMode::kCausal)), CreditMode::kCausal);
  EXPECT_EQ(credit_mode_from_string(to_string(CreditMode::kPerMatch)), CreditMode::kPerMatch);
  EXPECT_THROW(credit_mode_from_string("sideways"), ArgumentError);
}

TEST(Episode, RewardAccountingAndScaleEquivariance) {
  const auto t = toy::make_instance(3);
  std::array<sampling::ScoreMap, 3> s;
  std::array<FeatureMap<float>, 3> d;
  std::array<EpisodeImage, 3> views;
  for (int k = 0; k < 3; ++k) {
    s[k] = sampling::ScoreMap(1, 4);
    d[k] = FeatureMap<float>(1, 1, 4);
    for (int x = 0; x < 4; ++x) {
      s[k](0, x) = t.logits[k][x];
      d[k].at(0, 0, x) = static_cast<float>(t.desc[k][x]);
    }
    views[k] = {&s[k], &d[k]};
  }
  std::array<EpisodePair, 3> pairs;
  for (int p = 0; p < 3; ++p) pairs[p] = {t.pairs[p].first, t.pairs[p].second, {t.f[p]}};

  for (bool expected : {false, true}) {
    for (auto credit : {CreditMode::kCausal, CreditMode::kPerMatch}) {
      EpisodeOptions opt;
      opt.reward = {1.0, -0.25, -0.05, 0.5};
      opt.theta = 3.0;
      opt.cell_size = 2;
      opt.credit = credit;
      opt.expected_matches = expected;
      EpisodeOptions scaled = opt;
      scaled.reward = {2.0, -0.5, -0.1, 0.5};
      for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 r1(seed), r2(seed);
        const auto a = run_episode(views, pairs, opt, r1);
        const auto b = run_episode(views, pairs, scaled, r2);
        int accepted = 0, correct = 0, matches = 0;
        for (const auto& smp : a.samples)
          for (const auto& k : smp) accepted += k.accepted;
        for (const auto& ms : a.matches) {
          for (const auto& m : ms.matches) {
            ++matches;
            correct += *m.label == MatchLabel::kCorrect;
          }
        }
        EXPECT_EQ(a.n_keypoints, accepted);
        EXPECT_EQ(a.n_correct, correct);
        EXPECT_NEAR(a.sampled_reward,
                    1.0 * correct - 0.25 * (matches - correct) - 0.05 * accepted, 1e-12);
        for (int k = 0; k < 3; ++k) {
          EXPECT_EQ(b.d_score[k], (2.0 * a.d_score[k]).eval());
          EXPECT_EQ(b.d_descriptors[k], (2.0 * a.d_descriptors[k]).eval());
        }
      }
    }
  }
}

TEST(Episode, UnrewardedEpisodeHasZeroGradient) {
  // Epipolar lines 100 px away from every pixel: all matches are wrong, and
  // with the penalties switched off nothing is rewarded.
  const auto t = toy::make_instance(5);
  sampling::ScoreMap s(1, 4);
  FeatureMap<float> d(1, 1, 4);
  for (int x = 0; x < 4; ++x) {
    s(0, x) = t.logits[0][x];
    d.at(0, 0, x) = static_cast<float>(t.desc[0][x]);
  }
  const std::array<EpisodeImage, 2> views{EpisodeImage{&s, &d}, EpisodeImage{&s, &d}};
  geometry::Mat3 far;
  far << 0, 0, 0, 0, 0, -1, 0, 1, 100;
  const std::array<EpisodePair, 1> pairs{EpisodePair{0, 1, {far}}};
  EpisodeOptions opt;
  opt.cell_size = 2;
  opt.penalty_scale = 0.0;
  for (bool expected : {false, true}) {
    opt.expected_matches = expected;
    std::mt19937_64 rng(1);
    const auto r = run_episode(views, pairs, opt, rng);
    EXPECT_EQ(r.n_correct, 0);
    for (int k = 0; k < 2; ++k) {
      EXPECT_TRUE(r.d_score[k].isZero(0.0));
      EXPECT_TRUE(r.d_descriptors[k].isZero(0.0));
    }
  }
}

TEST(LeaveOneOut, MatchesRecomputedExpectation) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::bernoulli_distribution correct(0.4);
  // Mild and sharp temperatures; the sharp one makes single rows dominate
  // their columns.
  for (double theta : {1.5, 60.0}) {
    const int na = 5, nb = 6;
    matching::DistanceMatrix d(na, nb);
    RowMatrix<double> r(na, nb);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      d.data()[i] = u(rng);
      r.data()[i] = correct(rng) ? 1.0 : -0.25;
    }
    const auto p = matching::match_distributions(d, theta);
    const RowMatrix<double> w = p.forward.cwiseProduct(p.reverse).cwiseProduct(r);
    auto recomputed = [&](const matching::DistanceMatrix& dd, const RowMatrix<double>& rr) {
      const auto q = matching::match_distributions(dd, theta);
      return q.forward.cwiseProduct(q.reverse).cwiseProduct(rr).sum();
    };
    const auto rows = expected_reward_dropping_each_row(w, p.forward, p.reverse, r, d, theta);
    for (int i = 0; i < na; ++i) {
      matching::DistanceMatrix dd(na - 1, nb);
      RowMatrix<double> rr(na - 1, nb);
      for (int k = 0, o = 0; k < na; ++k) {
        if (k == i) continue;
        dd.row(o) = d.row(k);
        rr.row(o++) = r.row(k);
      }
      EXPECT_NEAR(rows(i), recomputed(dd, rr), 1e-12) << "theta " << theta << " row " << i;
    }
    const RowMatrix<double> wt = w.transpose(), ft = p.forward.transpose();
    const RowMatrix<double> vt = p.reverse.transpose(), rt = r.transpose();
    const RowMatrix<double> dt = d.transpose();
    const auto cols = expected_reward_dropping_each_row(wt, vt, ft, rt, dt, theta);
    for (int j = 0; j < nb; ++j) {
      matching::DistanceMatrix dd(na, nb - 1);
      RowMatrix<double> rr(na, nb - 1);
      for (int l = 0, o = 0; l < nb; ++l) {
        if (l == j) continue;
        dd.col(o) = d.col(l);
        rr.col(o++) = r.col(l);
      }
      EXPECT_NEAR(cols(j), recomputed(dd, rr), 1e-12) << "theta " << theta << " column " << j;
    }
  }
  // A single keypoint leaves nothing behind.
  matching::DistanceMatrix d(1, 2);
  d << 0.3, 0.8;
  const RowMatrix<double> r = RowMatrix<double>::Ones(1, 2);
  const auto p = matching::match_distributions(d, 2.0);
  const RowMatrix<double> w = p.forward.cwiseProduct(p.reverse);
  EXPECT_EQ(expected_reward_dropping_each_row(w, p.forward, p.reverse, r, d, 2.0)(0), 0.0);
}

TEST(Episode, CausalEstimatorIsUnbiasedOnToyInstance) {
  const auto t = toy::make_instance(1);
  const Eigen::VectorXd exact = toy::exact_gradient(t);
  const Eigen::VectorXd est = toy::estimator_mean(t, 50000, 11, CreditMode::kCausal, true);
  EXPECT_LT(toy::relative_error(est, exact), 0.05);
}

TEST(Episode, MismatchedPairThrows) {
  sampling::ScoreMap s = sampling::ScoreMap::Zero(2, 2);
  FeatureMap<float> d(1, 2, 2);
  const std::array<EpisodeImage, 1> views{EpisodeImage{&s, &d}};
  const std::array<EpisodePair, 1> pairs{EpisodePair{0, 1, f_x_translation()}};
  std::mt19937_64 rng(1);
  EXPECT_THROW(run_episode(views, pairs, {}, rng), ArgumentError);
}

class TrainStepTest : public ::testing::Test {
 protected:
  model::GLFeatNet net;
  Triplet triplet = identical_triplet(64, 21);
  TrainConfig cfg = [] {
    TrainConfig c;
    c.warmup_steps = 10;
    return c;
  }();
};

TEST_F(TrainStepTest, ZeroLearningRateLeavesParametersBitwise) {
  TrainState st = TrainState::fresh(net, 3);
  const auto before = st.params;
  cfg.learning_rate = 0.0;
  training_step(net, triplet, st, cfg);
  training_step(net, triplet, st, cfg);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(st.params[static_cast<int>(i)].values, before[static_cast<int>(i)].values);
  }
  EXPECT_EQ(st.step, 2);
}

TEST_F(TrainStepTest, DeterministicAndResumable) {
  TrainState a = TrainState::fresh(net, 5);
  TrainState b = TrainState::fresh(net, 5);
  std::vector<StepDiagnostics> da;
  for (int i = 0; i < 6; ++i) da.push_back(training_step(net, triplet, a, cfg));
  for (int i = 0; i < 3; ++i) {
    const auto d = training_step(net, triplet, b, cfg);
    EXPECT_EQ(d.expected_reward, da[i].expected_reward);
  }
  const auto path = std::filesystem::temp_directory_path() / "glfeat_test_resume.glfc";
  save_train_state(path.string(), net, b, R"({"note": 1})");
  RestoredTrainState r = load_train_state(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(r.extra_json, R"({"note":1})");
  EXPECT_EQ(r.state.step, 3);
  for (int i = 3; i < 6; ++i) {
    const auto d = training_step(net, triplet, r.state, cfg);
    EXPECT_EQ(d.expected_reward, da[i].expected_reward);
    EXPECT_EQ(d.sampled_reward, da[i].sampled_reward);
    EXPECT_EQ(d.n_keypoints, da[i].n_keypoints);
    EXPECT_EQ(d.n_matches, da[i].n_matches);
  }
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(r.state.params[static_cast<int>(i)].values, a.params[static_cast<int>(i)].values);
  }
}

TEST_F(TrainStepTest, LearnableToyRewardIncreases) {
  TrainState st = TrainState::fresh(net, 7);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto d = training_step(net, triplet, st, cfg);
    if (i < 50) first += d.expected_reward / 50;
    if (i >= 150) last += d.expected_reward / 50;
  }
  EXPECT_GT(last, first);
}

TEST(Triplet, RejectsBadShapesAndRankDeficientGeometry) {
  Triplet t = identical_triplet(64, 2);
  EXPECT_NO_THROW(t.validate());
  t.geometry[1].fundamental.matrix = geometry::Mat3::Identity();
  EXPECT_THROW(t.validate(), ArgumentError);
  t = identical_triplet(64, 2);
  t.images[2] = make_image(40, 64);
  EXPECT_THROW(t.validate(), ShapeError);
}
