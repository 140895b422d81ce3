#include "glfeat/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/SVD>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "glfeat/checkpoint.hpp"
#include "glfeat/errors.hpp"

namespace glfeat::training {

using nlohmann::json;
using sampling::KeypointSample;
using sampling::ScoreMap;

void RewardConfig::validate() const {
  if (!(lambda_tp > 0.0)) throw ArgumentError("lambda_tp must be positive");
  if (!(lambda_fp <= 0.0)) throw ArgumentError("lambda_fp must not be positive");
  if (!(lambda_kp <= 0.0)) throw ArgumentError("lambda_kp must not be positive");
  if (!(eps >= 0.0)) throw ArgumentError("eps must be non-negative");
}

void ThetaSchedule::validate() const {
  if (!(theta_start > 0.0)) throw ArgumentError("theta_start must be positive");
  if (!(theta_step_per_epoch >= 0.0)) throw ArgumentError("theta_step_per_epoch must be >= 0");
  if (!(theta_cap >= theta_start)) throw ArgumentError("theta_cap must be >= theta_start");
}

double warmup_factor(long step, long warmup_steps) {
  if (step < 0) throw ArgumentError("step must be non-negative");
  if (warmup_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

double theta_at(int epoch, const ThetaSchedule& s) {
  if (epoch < 0) throw ArgumentError("epoch must be non-negative");
  return std::min(s.theta_cap, s.theta_start + epoch * s.theta_step_per_epoch);
}

void PenaltyRamp::validate() const {
  if (delay_epochs < 0) throw ArgumentError("penalty ramp delay must be non-negative");
  if (!(start >= 0.0 && start <= 1.0)) throw ArgumentError("penalty ramp start must lie in [0, 1]");
  if (!(step_per_epoch >= 0.0)) throw ArgumentError("penalty ramp step must be non-negative");
}

double penalty_scale_at(int epoch, const PenaltyRamp& r) {
  if (epoch < 0) throw ArgumentError("epoch must be non-negative");
  if (epoch < r.delay_epochs) return 0.0;
  return std::min(1.0, r.start + r.step_per_epoch * epoch);
}

std::vector<int> accepted_indices(std::span<const KeypointSample> samples) {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].accepted) out.push_back(static_cast<int>(i));
  }
  return out;
}

double PairRewards::match_total() const {
  double s = 0.0;
  for (double r : match_rewards) s += r;
  return s;
}

namespace {

geometry::Vec2 to_point(const sampling::Pixel& p) { return {p.x, p.y}; }

}  // namespace

// Dropping row i rescales column j of `norm` by 1 / (1 - norm_ij). Columns
// that row i dominates are summed afresh to avoid cancellation.
Vector<double> expected_reward_dropping_each_row(const RowMatrix<double>& w,
                                                 const RowMatrix<double>& keep,
                                                 const RowMatrix<double>& norm,
                                                 const RowMatrix<double>& r,
                                                 const RowMatrix<double>& d, double theta) {
  const Eigen::Index n = w.rows(), m = w.cols();
  const Eigen::RowVectorXd cols = w.colwise().sum();
  Vector<double> out = Vector<double>::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double e = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (norm(i, j) <= 0.5) {
        e += (cols(j) - w(i, j)) / (1.0 - norm(i, j));
        continue;
      }
      double top = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k != i) top = std::max(top, -theta * d(k, j));
      }
      double num = 0.0, den = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k == i) continue;
        const double x = std::exp(-theta * d(k, j) - top);
        num += keep(k, j) * r(k, j) * x;
        den += x;
      }
      if (den > 0.0) e += num / den;
    }
    out(i) = e;
  }
  return out;
}

PairRewards assign_rewards(const matching::MatchSet& matches,
                           std::span<const KeypointSample> samples_a,
                           std::span<const KeypointSample> samples_b,
                           const geometry::FundamentalMatrix& f, const RewardConfig& cfg) {
  const auto acc_a = accepted_indices(samples_a);
  const auto acc_b = accepted_indices(samples_b);
  PairRewards out;
  out.keypoint_penalty_a = cfg.lambda_kp * static_cast<double>(acc_a.size());
  out.keypoint_penalty_b = cfg.lambda_kp * static_cast<double>(acc_b.size());
  for (const auto& m : matches.matches) {
    if (m.a < 0 || m.b < 0 || m.a >= static_cast<int>(acc_a.size()) ||
        m.b >= static_cast<int>(acc_b.size())) {
      throw ArgumentError(fmt::format("match ({}, {}) references a missing keypoint", m.a, m.b));
    }
    const auto label = geometry::annotate_match(to_point(samples_a[acc_a[m.a]].pixel),
                                                to_point(samples_b[acc_b[m.b]].pixel), f,
                                                cfg.eps);
    const bool ok = label == geometry::MatchLabel::kCorrect;
    out.labels.push_back(label);
    out.match_rewards.push_back(ok ? cfg.lambda_tp : cfg.lambda_fp);
    out.n_correct += ok ? 1 : 0;
  }
  return out;
}

double policy_gradient(std::span<const double> log_probs, std::span<const double> rewards) {
  if (log_probs.size() != rewards.size()) {
    throw ArgumentError(fmt::format("{} log-probabilities but {} rewards", log_probs.size(),
                                    rewards.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (rewards[i] != 0.0) s += rewards[i] * log_probs[i];
  }
  return s;
}

void add_keypoint_log_prob_grad(const ScoreMap& s, const sampling::CellGrid& grid,
                                const KeypointSample& sample, double weight, ScoreMap& d_score) {
  if (weight == 0.0) return;
  const auto c = grid.cell(sample.cell);
  std::vector<double> logits;
  logits.reserve(static_cast<std::size_t>(c.w * c.h));
  for (int y = 0; y < c.h; ++y) {
    for (int x = 0; x < c.w; ++x) logits.push_back(s(c.y0 + y, c.x0 + x));
  }
  const auto probs = sampling::relative_saliency(logits);
  // d log softmax_k / d s_q = [q == k] - p_q
  for (int y = 0; y < c.h; ++y) {
    for (int x = 0; x < c.w; ++x) d_score(c.y0 + y, c.x0 + x) -= weight * probs[y * c.w + x];
  }
  const int px = sample.pixel.x, py = sample.pixel.y;
  d_score(py, px) += weight;
  const double sig = sampling::acceptance_prob(s(py, px));
  d_score(py, px) += weight * (sample.accepted ? 1.0 - sig : -sig);
}

std::string to_string(CreditMode m) { return m == CreditMode::kCausal ? "causal" : "per_match"; }

CreditMode credit_mode_from_string(const std::string& s) {
  if (s == "causal") return CreditMode::kCausal;
  if (s == "per_match") return CreditMode::kPerMatch;
  throw ArgumentError(fmt::format("unknown credit mode '{}' (causal | per_match)", s));
}

EpisodeResult run_episode(std::span<const EpisodeImage> images,
                          std::span<const EpisodePair> pairs, const EpisodeOptions& opt,
                          std::mt19937_64& rng) {
  opt.reward.validate();
  if (!(opt.theta > 0.0)) throw ArgumentError("theta must be positive");
  if (opt.cell_size < 1) throw ArgumentError("cell_size must be positive");
  if (!(opt.penalty_scale >= 0.0 && opt.penalty_scale <= 1.0)) {
    throw ArgumentError("penalty_scale must lie in [0, 1]");
  }
  const auto& rc = opt.reward;
  RewardConfig train = rc;
  train.lambda_fp *= opt.penalty_scale;
  train.lambda_kp *= opt.penalty_scale;
  const std::size_t n_img = images.size();

  EpisodeResult res;
  std::vector<sampling::CellGrid> grids(n_img);
  std::vector<std::vector<int>> accepted(n_img);
  std::vector<RowMatrix<float>> feats(n_img);
  for (std::size_t k = 0; k < n_img; ++k) {
    const ScoreMap& s = *images[k].score;
    const FeatureMap<float>& d = *images[k].descriptors;
    if (d.height != s.rows() || d.width != s.cols()) {
      throw ShapeError("descriptor field does not match the score map");
    }
    grids[k] = {opt.cell_size, static_cast<int>(s.rows()), static_cast<int>(s.cols())};
    res.samples.push_back(sampling::sample_keypoints(s, grids[k], rng));
    accepted[k] = accepted_indices(res.samples[k]);
    feats[k].resize(static_cast<Eigen::Index>(accepted[k].size()), d.channels);
    for (std::size_t i = 0; i < accepted[k].size(); ++i) {
      const auto& px = res.samples[k][accepted[k][i]].pixel;
      feats[k].row(static_cast<Eigen::Index>(i)) = d.data.col(px.y * d.width + px.x).transpose();
    }
    res.n_keypoints += static_cast<int>(accepted[k].size());
    res.d_score.push_back(ScoreMap::Zero(s.rows(), s.cols()));
    res.d_descriptors.push_back(RowMatrix<double>::Zero(d.channels, s.rows() * s.cols()));
  }

  std::vector<double> log_probs;
  std::vector<double> credits;
  std::vector<double> image_credit(n_img, 0.0);
  double penalties = 0.0;
  for (std::size_t k = 0; k < n_img; ++k) {
    penalties += rc.lambda_kp * static_cast<double>(accepted[k].size());
  }
  res.sampled_reward = penalties;
  res.expected_reward = penalties;

  // Credit collected per keypoint sample, applied once at the end.
  std::vector<std::vector<double>> sample_credit(n_img);
  for (std::size_t k = 0; k < n_img; ++k) sample_credit[k].assign(res.samples[k].size(), 0.0);
  double differentiable = 0.0;

  for (const auto& pair : pairs) {
    if (pair.a < 0 || pair.b < 0 || pair.a >= static_cast<int>(n_img) ||
        pair.b >= static_cast<int>(n_img) || pair.a == pair.b) {
      throw ArgumentError("episode pair references a missing image");
    }
    const auto& fa = feats[pair.a];
    const auto& fb = feats[pair.b];
    const auto& acc_a = accepted[pair.a];
    const auto& acc_b = accepted[pair.b];
    auto& samples_a = res.samples[pair.a];
    auto& samples_b = res.samples[pair.b];
    const Eigen::Index na = fa.rows(), nb = fb.rows();
    matching::MatchSet ms;
    matching::MatchDistributions probs;
    matching::DistanceMatrix dist;
    if (na > 0 && nb > 0) {
      dist = matching::distance_matrix(fa, fb);
      probs = matching::match_distributions(dist, opt.theta);
      ms = matching::sample_matches(probs, dist, rng);
    }
    const PairRewards pr = assign_rewards(ms, samples_a, samples_b, pair.fundamental, rc);
    for (std::size_t m = 0; m < ms.matches.size(); ++m) ms.matches[m].label = pr.labels[m];
    res.n_matches += ms.size();
    res.n_correct += pr.n_correct;
    res.sampled_reward += pr.match_total();
    if (na == 0 || nb == 0) {
      res.matches.push_back(std::move(ms));
      continue;
    }

    // Expected reward over match draws: W = P (.) r for every candidate pair.
    RowMatrix<double> w, r;
    if (opt.expected_reward || opt.expected_matches) {
      std::vector<geometry::Vec2> pts_a, pts_b;
      for (int i : acc_a) pts_a.push_back(to_point(samples_a[i].pixel));
      for (int j : acc_b) pts_b.push_back(to_point(samples_b[j].pixel));
      const auto labels = geometry::annotate_all_pairs(pts_a, pts_b, pair.fundamental, rc.eps);
      const RowMatrix<double> p = probs.forward.cwiseProduct(probs.reverse);
      const RowMatrix<double> correct = labels.cast<double>();
      res.expected_reward +=
          (p.array() * (correct.array() * rc.lambda_tp + (1.0 - correct.array()) * rc.lambda_fp))
              .sum();
      r = correct.array() * train.lambda_tp + (1.0 - correct.array()) * train.lambda_fp;
      w = p.cwiseProduct(r);
    }

    // g = d(objective) / d(distances) for the matching part.
    RowMatrix<double> g = RowMatrix<double>::Zero(na, nb);
    if (opt.expected_matches) {
      // R = sum_ij F_ij V_ij r_ij with F, V row/column softmaxes of -theta d:
      // dR/dlogits = 2W - F (.) rowsum(W) - V (.) colsum(W).
      const Vector<double> rows = w.rowwise().sum();
      const Eigen::RowVectorXd cols = w.colwise().sum();
      const RowMatrix<double> dlogits =
          2.0 * w - RowMatrix<double>(probs.forward.array().colwise() * rows.array()) -
          RowMatrix<double>(probs.reverse.array().rowwise() * cols.array());
      g = -opt.theta * dlogits;
      differentiable += w.sum();
      if (opt.credit == CreditMode::kPerMatch) {
        for (Eigen::Index i = 0; i < na; ++i) sample_credit[pair.a][acc_a[i]] += rows(i);
        for (Eigen::Index j = 0; j < nb; ++j) sample_credit[pair.b][acc_b[j]] += cols(j);
      } else {
        // Each keypoint is credited with what the pair would lose without
        // it. That baseline does not depend on the keypoint's own cell
        // action, so the estimate stays unbiased.
        const double total = w.sum();
        const Vector<double> without_a = expected_reward_dropping_each_row(
            w, probs.forward, probs.reverse, r, dist, opt.theta);
        const RowMatrix<double> wt = w.transpose(), ft = probs.forward.transpose();
        const RowMatrix<double> vt = probs.reverse.transpose(), rt = r.transpose();
        const RowMatrix<double> dt = dist.transpose();
        const Vector<double> without_b =
            expected_reward_dropping_each_row(wt, vt, ft, rt, dt, opt.theta);
        for (Eigen::Index i = 0; i < na; ++i) {
          sample_credit[pair.a][acc_a[i]] += total - without_a(i);
        }
        for (Eigen::Index j = 0; j < nb; ++j) {
          sample_credit[pair.b][acc_b[j]] += total - without_b(j);
        }
      }
    } else {
      double sampled_train_total = 0.0;
      for (std::size_t m = 0; m < ms.matches.size(); ++m) {
        const auto& mt = ms.matches[m];
        const double r = pr.labels[m] == geometry::MatchLabel::kCorrect ? train.lambda_tp
                                                                         : train.lambda_fp;
        sampled_train_total += r;
        log_probs.push_back(*mt.log_prob);
        credits.push_back(r);
        // d log F_ij / d d_ik = theta (F_ik - [k == j]), likewise for V.
        g.row(mt.a) += r * opt.theta * probs.forward.row(mt.a);
        g.col(mt.b) += r * opt.theta * probs.reverse.col(mt.b);
        g(mt.a, mt.b) -= 2.0 * r * opt.theta;
        if (opt.credit == CreditMode::kPerMatch) {
          sample_credit[pair.a][acc_a[mt.a]] += r;
          sample_credit[pair.b][acc_b[mt.b]] += r;
        }
      }
      if (opt.credit == CreditMode::kCausal) {
        image_credit[pair.a] += sampled_train_total;
        image_credit[pair.b] += sampled_train_total;
      }
    }

    // Chain through d_ij = ||a_i - b_j||.
    const RowMatrix<double> q = g.cwiseQuotient(dist.cwiseMax(1e-6));
    const RowMatrix<double> a = fa.cast<double>();
    const RowMatrix<double> b = fb.cast<double>();
    const RowMatrix<double> da =
        a.array().colwise() * q.rowwise().sum().array() - (q * b).array();
    const RowMatrix<double> db =
        b.array().colwise() * q.colwise().sum().transpose().array() - (q.transpose() * a).array();
    for (Eigen::Index i = 0; i < na; ++i) {
      const auto& px = samples_a[acc_a[i]].pixel;
      res.d_descriptors[pair.a].col(px.y * grids[pair.a].width + px.x) += da.row(i).transpose();
    }
    for (Eigen::Index j = 0; j < nb; ++j) {
      const auto& px = samples_b[acc_b[j]].pixel;
      res.d_descriptors[pair.b].col(px.y * grids[pair.b].width + px.x) += db.row(j).transpose();
    }
    res.matches.push_back(std::move(ms));
  }

  for (std::size_t k = 0; k < n_img; ++k) {
    for (std::size_t si = 0; si < res.samples[k].size(); ++si) {
      const auto& smp = res.samples[k][si];
      double w = sample_credit[k][si] + (smp.accepted ? train.lambda_kp : 0.0);
      if (opt.credit == CreditMode::kCausal) {
        w += image_credit[k];
      } else if (!smp.accepted) {
        w = 0.0;
      }
      if (w == 0.0) continue;
      add_keypoint_log_prob_grad(*images[k].score, grids[k], smp, w, res.d_score[k]);
      log_probs.push_back(smp.log_prob());
      credits.push_back(w);
    }
  }
  res.surrogate = differentiable + policy_gradient(log_probs, credits);
  return res;
}

void Triplet::validate() const {
  for (const auto& img : images) model::check_image_shape(img);
  for (const auto& g : geometry) {
    Eigen::JacobiSVD<geometry::Mat3> svd(g.fundamental.matrix);
    const auto sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(2) >= 1e-9 * sv(0)) {
      throw ArgumentError("triplet fundamental matrix is not rank 2");
    }
  }
}

void TrainConfig::validate() const {
  reward.validate();
  theta.validate();
  penalty_ramp.validate();
  if (!(learning_rate >= 0.0)) throw ArgumentError("learning_rate must be non-negative");
  if (warmup_steps < 0) throw ArgumentError("warmup_steps must be non-negative");
  if (cell_size < 1) throw ArgumentError("cell_size must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ArgumentError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ArgumentError("adam_eps must be positive");
}

TrainState TrainState::fresh(const model::GLFeatNet& net, std::uint64_t seed) {
  TrainState s;
  s.params = net.init_parameters<float>(seed);
  s.adam_m = s.params.zeros_like();
  s.adam_v = s.params.zeros_like();
  s.rng.seed(seed ^ 0xA5A5A5A55A5A5A5AULL);
  return s;
}

namespace {

constexpr std::array<std::pair<int, int>, 3> kPairs{{{0, 1}, {0, 2}, {1, 2}}};

}  // namespace

StepDiagnostics training_step(const model::GLFeatNet& net, const Triplet& triplet,
                              TrainState& state, const TrainConfig& cfg) {
  cfg.validate();
  triplet.validate();
  StepDiagnostics diag;
  diag.theta = theta_at(state.epoch, cfg.theta);

  std::array<model::ForwardCache<float>, 3> caches;
  std::array<ScoreMap, 3> scores;
  std::array<EpisodeImage, 3> views;
  for (int k = 0; k < 3; ++k) {
    net.forward(triplet.images[k], state.params, &caches[k]);
    scores[k] = sampling::to_score_map(caches[k].output.score);
    views[k] = {&scores[k], &caches[k].output.descriptors};
  }
  std::array<EpisodePair, 3> pairs;
  for (int p = 0; p < 3; ++p) {
    pairs[p] = {kPairs[p].first, kPairs[p].second, triplet.geometry[p].fundamental};
  }
  EpisodeOptions opt;
  opt.reward = cfg.reward;
  opt.theta = diag.theta;
  opt.cell_size = cfg.cell_size;
  opt.credit = cfg.credit;
  opt.expected_matches = cfg.expected_matches;
  opt.penalty_scale = penalty_scale_at(state.epoch, cfg.penalty_ramp);
  diag.penalty_scale = opt.penalty_scale;
  const EpisodeResult ep = run_episode(views, pairs, opt, state.rng);

  diag.expected_reward = ep.expected_reward;
  diag.sampled_reward = ep.sampled_reward;
  diag.surrogate = ep.surrogate;
  diag.n_keypoints = ep.n_keypoints;
  diag.n_matches = ep.n_matches;
  diag.n_correct = ep.n_correct;

  auto dump = [&](const std::string& what) {
    return NumericalError(fmt::format(
        "non-finite {} at step {} (theta {}, surrogate {}, sampled reward {}, keypoints {}, "
        "matches {})",
        what, state.step + 1, diag.theta, diag.surrogate, diag.sampled_reward, diag.n_keypoints,
        diag.n_matches));
  };
  if (!std::isfinite(ep.surrogate)) throw dump("surrogate");

  // Minimise the negated surrogate.
  ParameterStore<float> grads = state.params.zeros_like();
  for (int k = 0; k < 3; ++k) {
    const auto& out = caches[k].output;
    FeatureMap<float> d_score(1, out.score.height, out.score.width);
    d_score.data = -Eigen::Map<const RowMatrix<double>>(ep.d_score[k].data(), 1,
                                                        ep.d_score[k].size())
                        .cast<float>();
    FeatureMap<float> d_desc(out.descriptors.channels, out.descriptors.height,
                             out.descriptors.width);
    d_desc.data = (-ep.d_descriptors[k]).cast<float>();
    net.backward(caches[k], d_score, d_desc, state.params, grads);
  }
  for (const auto& t : grads) {
    if (!t.values.allFinite()) throw dump(fmt::format("gradient of {}", t.name));
  }

  const long t = state.step + 1;
  const double lr = cfg.learning_rate * warmup_factor(t, cfg.warmup_steps);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  const auto b1 = static_cast<float>(cfg.adam_beta1);
  const auto b2 = static_cast<float>(cfg.adam_beta2);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const int idx = static_cast<int>(i);
    auto& g = grads[idx].values;
    auto& m = state.adam_m[idx].values;
    auto& v = state.adam_v[idx].values;
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    if (lr == 0.0) continue;
    const auto step_size = static_cast<float>(lr / bc1);
    const auto denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(cfg.adam_eps);
    state.params[idx].values.array() -=
        step_size * m.array() / (v.array().sqrt() * denom_scale + eps);
  }
  state.step = t;
  diag.step = t;
  diag.learning_rate = lr;
  return diag;
}

void save_train_state(const std::string& path, const model::GLFeatNet& net,
                      const TrainState& state, const std::string& extra_json) {
  model::Checkpoint ckpt;
  ckpt.config_digest = net.config().digest();
  std::ostringstream rng;
  rng << state.rng;
  json meta;
  meta["model"] = json::parse(model::config_to_json_text(net.config()));
  meta["train"] = {{"step", state.step},
                   {"epoch", state.epoch},
                   {"rng", rng.str()},
                   {"extra", json::parse(extra_json)}};
  ckpt.metadata = meta.dump();
  ckpt.records = model::parameter_records(state.params);
  for (auto& r : model::parameter_records(state.adam_m, "adam_m.")) ckpt.records.push_back(r);
  for (auto& r : model::parameter_records(state.adam_v, "adam_v.")) ckpt.records.push_back(r);
  model::write_checkpoint(path, ckpt);
}

RestoredTrainState load_train_state(const std::string& path) {
  const model::Checkpoint ckpt = model::read_checkpoint(path);
  RestoredTrainState out;
  try {
    const json meta = json::parse(ckpt.metadata);
    out.config = model::config_from_json_text(meta.at("model").dump());
    if (out.config.digest() != ckpt.config_digest) throw DataError("config digest mismatch");
    const json& tr = meta.at("train");
    out.state.step = tr.at("step").get<long>();
    out.state.epoch = tr.at("epoch").get<int>();
    std::istringstream rng(tr.at("rng").get<std::string>());
    rng >> out.state.rng;
    if (!rng) throw DataError("bad rng state");
    out.extra_json = tr.at("extra").dump();
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: not a training checkpoint: {}", path, e.what()));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
  const model::GLFeatNet net(out.config);
  out.state.params = ParameterStore<float>(net.layout());
  out.state.adam_m = ParameterStore<float>(net.layout());
  out.state.adam_v = ParameterStore<float>(net.layout());
  model::assign_parameters(ckpt.records, out.state.params);
  model::assign_parameters(ckpt.records, out.state.adam_m, "adam_m.");
  model::assign_parameters(ckpt.records, out.state.adam_v, "adam_v.");
  return out;
}

}  // namespace glfeat::training
