#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "glfeat/geometry.hpp"
#include "glfeat/image.hpp"
#include "glfeat/matching.hpp"
#include "glfeat/model.hpp"
#include "glfeat/sampling.hpp"

namespace glfeat::training {

struct RewardConfig {
  double lambda_tp = 1.0;
  double lambda_fp = -0.25;
  double lambda_kp = -0.001;
  double eps = 2.0;  // epipolar tolerance in pixels

  void validate() const;
};

struct ThetaSchedule {
  double theta_start = 15.0;
  double theta_step_per_epoch = 0.5;
  double theta_cap = 50.0;

  void validate() const;
};

// Linear learning-rate ramp min(1, step / warmup_steps); 0 at step 0.
double warmup_factor(long step, long warmup_steps = 5000);

double theta_at(int epoch, const ThetaSchedule& schedule);

// Curriculum on the penalties: lambda_fp and lambda_kp are scaled by 0 for
// the first `delay_epochs` epochs, then by min(1, start + step * epoch).
struct PenaltyRamp {
  int delay_epochs = 1;
  double start = 0.1;
  double step_per_epoch = 0.2;

  void validate() const;
};

double penalty_scale_at(int epoch, const PenaltyRamp& ramp);

// Index of the k-th accepted sample for every accepted sample, in order.
std::vector<int> accepted_indices(std::span<const sampling::KeypointSample> samples);

struct PairRewards {
  std::vector<double> match_rewards;          // one per match
  std::vector<geometry::MatchLabel> labels;   // one per match
  double keypoint_penalty_a = 0.0;
  double keypoint_penalty_b = 0.0;
  int n_correct = 0;

  double match_total() const;
  double total() const { return match_total() + keypoint_penalty_a + keypoint_penalty_b; }
};

// Match indices refer to the accepted samples of each image, in sample order.
PairRewards assign_rewards(const matching::MatchSet& matches,
                           std::span<const sampling::KeypointSample> samples_a,
                           std::span<const sampling::KeypointSample> samples_b,
                           const geometry::FundamentalMatrix& f, const RewardConfig& cfg);

// Value of the surrogate sum_k stop_gradient(r_k) * log_prob_k. Its gradient
// is the REINFORCE estimate when each reward is paired with the log
// probability of the actions that caused it.
double policy_gradient(std::span<const double> log_probs, std::span<const double> rewards);

// Adds weight * d log P(sample) / d logits into d_score.
void add_keypoint_log_prob_grad(const sampling::ScoreMap& s, const sampling::CellGrid& grid,
                                const sampling::KeypointSample& sample, double weight,
                                sampling::ScoreMap& d_score);

// Expected reward sum_ij keep_ij * norm_ij * r_ij of a pair after removing
// row i, for every i, where norm is the column softmax of -theta * d (each
// column sums to one over the rows) and keep does not depend on the other
// rows. Swap the roles and transpose everything to drop columns.
Vector<double> expected_reward_dropping_each_row(const RowMatrix<double>& w,
                                                 const RowMatrix<double>& keep,
                                                 const RowMatrix<double>& norm,
                                                 const RowMatrix<double>& r,
                                                 const RowMatrix<double>& d, double theta);

// How rewards are credited to the sampled actions.
//   causal:    every cell action of an image gets the match rewards of the
//              pairs it takes part in plus its own keypoint penalty; match
//              draws get their own reward. With expected matches, each
//              keypoint's pair reward is taken relative to the expected
//              reward without that keypoint (a baseline that ignores the
//              cell's own action). Unbiased.
//   per_match: each match reward goes to the actions of its two keypoints and
//              its two draws; keypoint penalties go to the accepted keypoint.
//              Lower variance but biased (ignores rewards that a rejected
//              or unmatched action changes).
enum class CreditMode { kCausal, kPerMatch };

std::string to_string(CreditMode m);
CreditMode credit_mode_from_string(const std::string& s);

struct EpisodeImage {
  const sampling::ScoreMap* score = nullptr;           // H x W logits
  const FeatureMap<float>* descriptors = nullptr;      // D x (H * W)
};

struct EpisodePair {
  int a = 0;
  int b = 0;
  geometry::FundamentalMatrix fundamental;
};

struct EpisodeOptions {
  RewardConfig reward;
  double theta = 15.0;
  int cell_size = 8;
  CreditMode credit = CreditMode::kCausal;
  // Replace the sampled match draws by their exact expectation given the
  // sampled keypoints: the matching term becomes sum_ij P_ij r_ij and is
  // differentiated directly. Keypoint credit then uses expected rewards.
  bool expected_matches = false;
  // Multiplies lambda_fp and lambda_kp in the training signal only; reported
  // rewards always use `reward` as given.
  double penalty_scale = 1.0;
  // Also compute the reward expectation over match draws (costs one
  // annotation per candidate pair).
  bool expected_reward = true;
};

struct EpisodeResult {
  // Gradients of the surrogate, i.e. ascent directions for the reward.
  std::vector<sampling::ScoreMap> d_score;
  std::vector<RowMatrix<double>> d_descriptors;  // D x (H * W) per image
  std::vector<std::vector<sampling::KeypointSample>> samples;
  std::vector<matching::MatchSet> matches;
  double surrogate = 0.0;
  double sampled_reward = 0.0;
  // Exact mean of the reward over match draws given the sampled keypoints.
  double expected_reward = 0.0;
  int n_keypoints = 0;
  int n_matches = 0;
  int n_correct = 0;
};

EpisodeResult run_episode(std::span<const EpisodeImage> images,
                          std::span<const EpisodePair> pairs, const EpisodeOptions& options,
                          std::mt19937_64& rng);

struct Triplet {
  std::array<Image, 3> images;
  // Geometry of (0,1), (0,2), (1,2).
  std::array<geometry::TwoViewGeometry, 3> geometry;

  void validate() const;
};

struct TrainConfig {
  RewardConfig reward;
  ThetaSchedule theta;
  PenaltyRamp penalty_ramp;
  double learning_rate = 1e-3;
  long warmup_steps = 5000;
  int cell_size = 8;
  CreditMode credit = CreditMode::kCausal;
  bool expected_matches = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct TrainState {
  ParameterStore<float> params;
  ParameterStore<float> adam_m;
  ParameterStore<float> adam_v;
  long step = 0;  // completed optimizer updates
  int epoch = 0;
  std::mt19937_64 rng;

  static TrainState fresh(const model::GLFeatNet& net, std::uint64_t seed);
};

struct StepDiagnostics {
  long step = 0;
  double theta = 0.0;
  double learning_rate = 0.0;
  double penalty_scale = 1.0;
  double expected_reward = 0.0;
  double sampled_reward = 0.0;
  double surrogate = 0.0;
  int n_keypoints = 0;
  int n_matches = 0;
  int n_correct = 0;
};

// One policy-gradient update on a triplet; throws NumericalError when the
// surrogate or any gradient is non-finite (parameters untouched).
StepDiagnostics training_step(const model::GLFeatNet& net, const Triplet& triplet,
                              TrainState& state, const TrainConfig& cfg);

// Checkpoint with parameters, optimizer moments and counters. `extra` is
// stored verbatim as JSON under "train.extra".
void save_train_state(const std::string& path, const model::GLFeatNet& net,
                      const TrainState& state, const std::string& extra_json = "{}");

struct RestoredTrainState {
  model::ModelConfig config;
  TrainState state;
  std::string extra_json;
};
RestoredTrainState load_train_state(const std::string& path);

}  // namespace glfeat::training
