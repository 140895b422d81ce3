#include "glfeat/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "glfeat/checkpoint.hpp"
#include "glfeat/data.hpp"
#include "glfeat/errors.hpp"
#include "glfeat/evaluation.hpp"
#include "glfeat/extract.hpp"
#include "glfeat/training.hpp"

namespace glfeat::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

json default_config() {
  const model::ModelConfig mc;
  const data::DatasetConfig dc;
  const training::TrainConfig tc;
  const sampling::NmsOptions nms;
  const evaluation::EvalConfig ec;
  return json{
      {"seed", 0},
      {"output_dir", ""},
      {"model",
       {{"widths", mc.widths},
        {"fusion_width", mc.fusion_width},
        {"descriptor_dim", mc.descriptor_dim},
        {"encoder_kernel", mc.encoder_kernel},
        {"embedding_base", mc.embedding_base},
        {"global_enhancement", mc.global_enhancement}}},
      {"data",
       {{"manifest", ""},
        {"train_scenes", dc.train_scenes},
        {"val_scenes", dc.val_scenes},
        {"test_scenes", dc.test_scenes},
        {"pairs_per_eval_scene", dc.pairs_per_eval_scene},
        {"seed", dc.seed},
        {"texture_size", dc.scene.texture_size},
        {"crop_size", dc.scene.crop_size},
        {"perspective_jitter", dc.scene.perspective_jitter},
        {"brightness", dc.scene.brightness},
        {"contrast", dc.scene.contrast},
        {"noise_sigma", dc.scene.noise_sigma},
        {"max_rotation_deg", dc.scene.max_rotation_deg},
        {"max_roll_deg", dc.scene.max_roll_deg},
        {"max_zoom", dc.scene.max_zoom},
        {"min_baseline", dc.scene.min_baseline},
        {"max_baseline", dc.scene.max_baseline},
        {"plane_depth", dc.scene.plane_depth},
        {"max_plane_tilt_deg", dc.scene.max_plane_tilt_deg},
        {"second_plane", dc.scene.second_plane}}},
      {"train",
       {{"epochs", 50},
        {"max_steps", -1},
        {"learning_rate", tc.learning_rate},
        {"warmup_steps", tc.warmup_steps},
        {"cell_size", tc.cell_size},
        {"credit", training::to_string(tc.credit)},
        {"match_gradient", tc.expected_matches ? "expected" : "sampled"},
        {"penalty_delay_epochs", tc.penalty_ramp.delay_epochs},
        {"penalty_start", tc.penalty_ramp.start},
        {"penalty_step_per_epoch", tc.penalty_ramp.step_per_epoch},
        {"lambda_tp", tc.reward.lambda_tp},
        {"lambda_fp", tc.reward.lambda_fp},
        {"lambda_kp", tc.reward.lambda_kp},
        {"eps", tc.reward.eps},
        {"theta_start", tc.theta.theta_start},
        {"theta_step_per_epoch", tc.theta.theta_step_per_epoch},
        {"theta_cap", tc.theta.theta_cap},
        {"adam_beta1", tc.adam_beta1},
        {"adam_beta2", tc.adam_beta2},
        {"adam_eps", tc.adam_eps},
        {"log_every", 50}}},
      {"extract",
       {{"nms_radius", nms.radius},
        {"max_keypoints", nms.max_keypoints},
        {"min_score", nms.min_score}}},
      {"evaluate",
       {{"eps", ec.eps},
        {"mha_eps", ec.mha_eps},
        {"ransac_iterations", ec.ransac.iterations},
        {"ransac_seed", ec.ransac.seed},
        {"split", "test"}}},
      {"bench", {{"width", 640}, {"height", 480}, {"n_images", 20}, {"warmup", 3}}}};
}

namespace {

bool compatible(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) {
    if (!v.is_array() || v.size() != def.size()) return false;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!compatible(def[i], v[i])) return false;
    }
    return true;
  }
  return false;
}

void merge_strict(json& base, const json& over, const std::string& prefix) {
  if (!over.is_object()) throw ArgumentError(fmt::format("'{}' must be an object", prefix));
  for (const auto& [key, value] : over.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ArgumentError(fmt::format("unknown config key '{}'", path));
    json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, path);
    } else if (!compatible(slot, value)) {
      throw ArgumentError(fmt::format("config key '{}' expects a value like {}, got {}", path,
                                      slot.dump(), value.dump()));
    } else {
      slot = slot.is_number_float() ? json(value.get<double>()) : value;
    }
  }
}

}  // namespace

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ArgumentError(fmt::format("override '{}' is not of the form key=value", assignment));
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;  // bare strings need no quotes
  }
  // Build {"a": {"b": value}} and merge it.
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  // A string default given a value that parsed as something else.
  const json* slot = &config;
  for (const auto& p : parts) {
    if (!slot->is_object() || !slot->contains(p)) break;
    slot = &(*slot)[p];
  }
  if (slot->is_string() && !value.is_string()) {
    patch = text;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  }
  merge_strict(config, patch, "");
}

json resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw DataError(fmt::format("cannot open config {}", config_path));
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ArgumentError(fmt::format("{}: {}", config_path, e.what()));
    }
    merge_strict(cfg, file, "");
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

namespace {

model::ModelConfig model_config(const json& cfg) {
  const json& m = cfg.at("model");
  model::ModelConfig c;
  c.widths = m.at("widths").get<std::array<int, 4>>();
  c.fusion_width = m.at("fusion_width").get<int>();
  c.descriptor_dim = m.at("descriptor_dim").get<int>();
  c.encoder_kernel = m.at("encoder_kernel").get<int>();
  c.embedding_base = m.at("embedding_base").get<double>();
  c.global_enhancement = m.at("global_enhancement").get<bool>();
  c.validate();
  return c;
}

data::DatasetConfig dataset_config(const json& cfg) {
  const json& d = cfg.at("data");
  data::DatasetConfig c;
  c.train_scenes = d.at("train_scenes").get<int>();
  c.val_scenes = d.at("val_scenes").get<int>();
  c.test_scenes = d.at("test_scenes").get<int>();
  c.pairs_per_eval_scene = d.at("pairs_per_eval_scene").get<int>();
  c.seed = d.at("seed").get<std::uint64_t>();
  auto& s = c.scene;
  s.texture_size = d.at("texture_size").get<int>();
  s.crop_size = d.at("crop_size").get<int>();
  s.perspective_jitter = d.at("perspective_jitter").get<double>();
  s.brightness = d.at("brightness").get<double>();
  s.contrast = d.at("contrast").get<double>();
  s.noise_sigma = d.at("noise_sigma").get<double>();
  s.max_rotation_deg = d.at("max_rotation_deg").get<double>();
  s.max_roll_deg = d.at("max_roll_deg").get<double>();
  s.max_zoom = d.at("max_zoom").get<double>();
  s.min_baseline = d.at("min_baseline").get<double>();
  s.max_baseline = d.at("max_baseline").get<double>();
  s.plane_depth = d.at("plane_depth").get<double>();
  s.max_plane_tilt_deg = d.at("max_plane_tilt_deg").get<double>();
  s.second_plane = d.at("second_plane").get<bool>();
  s.validate();
  if (c.train_scenes < 0 || c.val_scenes < 0 || c.test_scenes < 0 ||
      c.pairs_per_eval_scene < 1) {
    throw ArgumentError("scene counts must be non-negative and pairs_per_eval_scene positive");
  }
  return c;
}

training::TrainConfig train_config(const json& cfg) {
  const json& t = cfg.at("train");
  training::TrainConfig c;
  c.learning_rate = t.at("learning_rate").get<double>();
  c.warmup_steps = t.at("warmup_steps").get<long>();
  c.cell_size = t.at("cell_size").get<int>();
  c.credit = training::credit_mode_from_string(t.at("credit").get<std::string>());
  const auto mg = t.at("match_gradient").get<std::string>();
  if (mg != "expected" && mg != "sampled") {
    throw ArgumentError("train.match_gradient must be \"expected\" or \"sampled\"");
  }
  c.expected_matches = mg == "expected";
  c.penalty_ramp.delay_epochs = t.at("penalty_delay_epochs").get<int>();
  c.penalty_ramp.start = t.at("penalty_start").get<double>();
  c.penalty_ramp.step_per_epoch = t.at("penalty_step_per_epoch").get<double>();
  c.reward.lambda_tp = t.at("lambda_tp").get<double>();
  c.reward.lambda_fp = t.at("lambda_fp").get<double>();
  c.reward.lambda_kp = t.at("lambda_kp").get<double>();
  c.reward.eps = t.at("eps").get<double>();
  c.theta.theta_start = t.at("theta_start").get<double>();
  c.theta.theta_step_per_epoch = t.at("theta_step_per_epoch").get<double>();
  c.theta.theta_cap = t.at("theta_cap").get<double>();
  c.adam_beta1 = t.at("adam_beta1").get<double>();
  c.adam_beta2 = t.at("adam_beta2").get<double>();
  c.adam_eps = t.at("adam_eps").get<double>();
  c.validate();
  return c;
}

sampling::NmsOptions nms_options(const json& cfg) {
  const json& e = cfg.at("extract");
  sampling::NmsOptions o;
  o.radius = e.at("nms_radius").get<int>();
  o.max_keypoints = e.at("max_keypoints").get<int>();
  o.min_score = e.at("min_score").get<double>();
  if (o.radius < 1) throw ArgumentError("extract.nms_radius must be at least 1");
  if (o.max_keypoints < 0) throw ArgumentError("extract.max_keypoints must be non-negative");
  return o;
}

evaluation::EvalConfig eval_config(const json& cfg) {
  const json& e = cfg.at("evaluate");
  evaluation::EvalConfig c;
  c.eps = e.at("eps").get<double>();
  c.mha_eps = e.at("mha_eps").get<double>();
  c.ransac.iterations = e.at("ransac_iterations").get<int>();
  c.ransac.seed = e.at("ransac_seed").get<std::uint64_t>();
  c.ransac.inlier_eps = c.eps;
  if (!(c.eps > 0.0) || !(c.mha_eps > 0.0)) throw ArgumentError("evaluation eps must be positive");
  if (c.ransac.iterations < 1) throw ArgumentError("evaluate.ransac_iterations must be positive");
  return c;
}

fs::path output_dir(const json& cfg, const std::string& command) {
  const auto dir = cfg.at("output_dir").get<std::string>();
  if (!dir.empty()) return dir;
  const char* root = std::getenv("GLFEAT_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "glfeat_out") / command;
}

void prepare_output(const fs::path& dir, const json& cfg) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << cfg.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainData {
  std::vector<training::Triplet> triplets;
  std::vector<std::string> triplet_ids;
  std::vector<std::pair<data::PairRecord, std::array<Image, 2>>> val;
};

TrainData load_train_data(const std::vector<data::PairRecord>& records) {
  TrainData td;
  std::map<std::string, std::vector<const data::PairRecord*>> scenes;
  for (const auto& r : records) {
    if (r.split == data::Split::kTrain) {
      if (!r.two_view) throw DataError(fmt::format("training record {} lacks epipolar data", r.id));
      scenes[r.scene()].push_back(&r);
    } else if (r.split == data::Split::kVal && r.homography) {
      td.val.push_back({r, {load_image(r.path_a), load_image(r.path_b)}});
    }
  }
  for (auto& [scene, recs] : scenes) {
    std::sort(recs.begin(), recs.end(),
              [](const auto* a, const auto* b) { return a->id < b->id; });
    // Expected order: (0,1), (0,2), (1,2).
    if (recs.size() != 3 || recs[0]->path_a != recs[1]->path_a ||
        recs[0]->path_b != recs[2]->path_a || recs[1]->path_b != recs[2]->path_b) {
      throw DataError(fmt::format("scene {} does not form a triplet (A-B, A-C, B-C)", scene));
    }
    training::Triplet t;
    t.images = {load_image(recs[0]->path_a), load_image(recs[0]->path_b),
                load_image(recs[1]->path_b)};
    for (int p = 0; p < 3; ++p) t.geometry[p] = *recs[p]->two_view;
    t.validate();
    td.triplets.push_back(std::move(t));
    td.triplet_ids.push_back(scene);
  }
  return td;
}

evaluation::MetricsSummary validate_model(const model::GLFeatNet& net,
                                          const ParameterStore<float>& params,
                                          const TrainData& td, const sampling::NmsOptions& nms,
                                          const evaluation::EvalConfig& ec) {
  std::vector<evaluation::PairEvalResult> results;
  for (const auto& [rec, imgs] : td.val) {
    const auto fa = extract_features(net, params, imgs[0], nms);
    const auto fb = extract_features(net, params, imgs[1], nms);
    results.push_back(evaluation::evaluate_pair(fa, fb, *rec.homography,
                                                {imgs[0].width, imgs[0].height},
                                                {imgs[1].width, imgs[1].height}, ec));
  }
  return evaluation::summarize(results);
}

// Keeps the header and every row whose first field is <= max_step.
void truncate_log(const fs::path& path, long max_step) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      keep.push_back(line);
      header = false;
      continue;
    }
    const long step = std::stol(line.substr(0, line.find(',')));
    if (step <= max_step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

int cmd_train(const json& cfg, const std::string& resume) {
  const auto mc = model_config(cfg);
  const auto tc = train_config(cfg);
  const auto nms = nms_options(cfg);
  const auto ec = eval_config(cfg);
  const int epochs = cfg.at("train").at("epochs").get<int>();
  const long max_steps = cfg.at("train").at("max_steps").get<long>();
  const int log_every = cfg.at("train").at("log_every").get<int>();
  if (epochs < 0) throw ArgumentError("train.epochs must be non-negative");
  const auto manifest = cfg.at("data").at("manifest").get<std::string>();
  if (manifest.empty()) throw DataError("data.manifest is not set");
  if (!fs::exists(manifest)) throw DataError(fmt::format("manifest {} not found", manifest));
  const auto records = data::load_manifest(manifest);
  const fs::path out = output_dir(cfg, "train");
  prepare_output(out, cfg);
  if (epochs == 0) {
    std::cout << "epochs=0: configuration valid, nothing to train\n";
    return kOk;
  }

  const TrainData td = load_train_data(records);
  if (td.triplets.empty()) throw DataError("manifest has no training triplets");
  const model::GLFeatNet net(mc);

  training::TrainState state;
  std::vector<int> order;
  std::size_t cursor = 0;
  double best_mma = -1.0;
  const fs::path log_path = out / "train_log.csv";
  const fs::path val_path = out / "val_log.csv";
  if (!resume.empty()) {
    auto restored = training::load_train_state(resume);
    if (restored.config.digest() != mc.digest()) {
      throw DataError(fmt::format("{} was trained with a different model config", resume));
    }
    state = std::move(restored.state);
    const json extra = json::parse(restored.extra_json);
    order = extra.value("order", std::vector<int>{});
    cursor = extra.value("cursor", std::size_t{0});
    best_mma = extra.value("best_mma", -1.0);
    truncate_log(log_path, state.step);
    truncate_log(val_path, state.step);
  } else {
    state = training::TrainState::fresh(net, cfg.at("seed").get<std::uint64_t>());
    std::ofstream(log_path, std::ios::trunc)
        << "step,expected_reward,n_correct,n_matches,theta,sampled_reward,n_keypoints,"
           "learning_rate\n";
    std::ofstream(val_path, std::ios::trunc) << "step,epoch,NF,Rep,MS,MMA,MHA\n";
  }
  std::ofstream log(log_path, std::ios::app);
  std::ofstream val_log(val_path, std::ios::app);

  auto extra_json = [&]() {
    return json{{"order", order}, {"cursor", cursor}, {"best_mma", best_mma}}.dump();
  };
  auto run_validation = [&]() {
    const auto s = validate_model(net, state.params, td, nms, ec);
    val_log << fmt::format("{},{},{:.4f},{:.6f},{:.6f},{:.6f},{:.6f}\n", state.step, state.epoch,
                           s.nf, s.rep, s.ms, s.mma, s.mha);
    val_log.flush();
    std::cout << fmt::format("validation step={} epoch={} MMA={:.4f} Rep={:.4f} NF={:.1f}\n",
                             state.step, state.epoch, s.mma, s.rep, s.nf);
    if (s.mma > best_mma) {
      best_mma = s.mma;
      model::save_model((out / "best.glfc").string(), net, state.params);
    }
  };
  if (resume.empty()) run_validation();

  auto stop = [&]() { return max_steps >= 0 && state.step >= max_steps; };
  while (state.epoch < epochs && !stop()) {
    if (order.empty()) {
      order.resize(td.triplets.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), state.rng);
      cursor = 0;
    }
    while (cursor < order.size() && !stop()) {
      const auto d = training::training_step(net, td.triplets[order[cursor]], state, tc);
      ++cursor;
      log << fmt::format("{},{:.6f},{},{},{:.4f},{:.6f},{},{:.8g}\n", d.step, d.expected_reward,
                         d.n_correct, d.n_matches, d.theta, d.sampled_reward, d.n_keypoints,
                         d.learning_rate);
      if (log_every > 0 && d.step % log_every == 0) {
        log.flush();
        std::cout << fmt::format(
            "step={} epoch={} expected_reward={:.3f} matches={} correct={} keypoints={}\n",
            d.step, state.epoch, d.expected_reward, d.n_matches, d.n_correct, d.n_keypoints);
      }
    }
    if (cursor < order.size()) break;  // step budget exhausted mid-epoch
    ++state.epoch;
    order.clear();
    cursor = 0;
    log.flush();
    run_validation();
    training::save_train_state((out / fmt::format("epoch_{:04d}.glfc", state.epoch)).string(),
                               net, state, extra_json());
  }
  log.flush();
  training::save_train_state((out / "last.glfc").string(), net, state, extra_json());
  std::cout << fmt::format("done steps={} epochs={} best_val_MMA={:.4f} output={}\n", state.step,
                           state.epoch, best_mma, out.string());
  return kOk;
}

// ---------------------------------------------------------------------------
// extract / match / evaluate / bench

int cmd_extract(const json& cfg, const std::string& checkpoint,
                std::vector<std::string> images, const std::string& list_file) {
  const auto nms = nms_options(cfg);
  if (checkpoint.empty()) throw ArgumentError("--checkpoint is required");
  if (!list_file.empty()) {
    std::ifstream in(list_file);
    if (!in) throw DataError(fmt::format("cannot open image list {}", list_file));
    for (std::string l; std::getline(in, l);) {
      if (!l.empty()) images.push_back(l);
    }
  }
  if (images.empty()) throw ArgumentError("no input images");
  const auto loaded = model::load_model(checkpoint);
  const model::GLFeatNet net(loaded.config);
  const fs::path out = output_dir(cfg, "extract");
  prepare_output(out, cfg);
  int failures = 0;
  for (const auto& path : images) {
    try {
      const Image img = load_image(path);
      ExtractStats st;
      const auto fs = extract_features(net, loaded.params, img, nms, &st);
      const fs::path dst = out / (fs::path(path).stem().string() + ".glft");
      data::write_features(dst, fs);
      std::cout << fmt::format("{} -> {} keypoints={} padded={}x{}\n", path, dst.string(),
                               fs.size(), st.padded_width, st.padded_height);
    } catch (const DataError& e) {
      ++failures;
      std::cerr << fmt::format("failed: {}: {}\n", path, e.what());
    }
  }
  std::cout << fmt::format("extracted={} failed={}\n", images.size() - failures, failures);
  return failures ? kDataError : kOk;
}

int cmd_match(const json& cfg, const std::string& feats_a, const std::string& feats_b,
              const std::string& manifest, const std::string& pair_id) {
  const auto a = data::read_features(feats_a);
  const auto b = data::read_features(feats_b);
  matching::MatchSet ms;
  if (a.size() > 0 && b.size() > 0) {
    ms = matching::mutual_nn_match(matching::distance_matrix(a.descriptors, b.descriptors));
  }
  if (!manifest.empty()) {
    const auto records = data::load_manifest(manifest);
    const auto it = std::find_if(records.begin(), records.end(),
                                 [&](const auto& r) { return r.id == pair_id; });
    if (it == records.end()) throw DataError(fmt::format("pair {} not in manifest", pair_id));
    const double eps_h = cfg.at("evaluate").at("eps").get<double>();
    const double eps_f = cfg.at("train").at("eps").get<double>();
    for (auto& m : ms.matches) {
      const geometry::Vec2 pa(a.keypoints(m.a, 0), a.keypoints(m.a, 1));
      const geometry::Vec2 pb(b.keypoints(m.b, 0), b.keypoints(m.b, 1));
      if (it->homography) {
        const bool ok = (geometry::apply_homography(*it->homography, pa) - pb).norm() <= eps_h;
        m.label = ok ? geometry::MatchLabel::kCorrect : geometry::MatchLabel::kIncorrect;
      } else {
        m.label = geometry::annotate_match(pa, pb, it->two_view->fundamental, eps_f);
      }
    }
  }
  const fs::path out = output_dir(cfg, "match");
  prepare_output(out, cfg);
  std::ofstream dump(out / "matches.txt");
  matching::write_match_dump(dump, ms);
  int correct = 0;
  for (const auto& m : ms.matches) {
    correct += m.label == geometry::MatchLabel::kCorrect ? 1 : 0;
  }
  std::cout << fmt::format("matches={}\n", ms.size());
  if (!manifest.empty()) std::cout << fmt::format("correct={}\n", correct);
  std::cout << fmt::format("output={}\n", (out / "matches.txt").string());
  return kOk;
}

int cmd_evaluate(const json& cfg, const std::string& manifest, const std::string& checkpoint,
                 const std::string& feature_dir) {
  const auto ec = eval_config(cfg);
  const auto nms = nms_options(cfg);
  if (manifest.empty()) throw ArgumentError("--manifest is required");
  if (checkpoint.empty() == feature_dir.empty()) {
    throw ArgumentError("exactly one of --checkpoint and --features is required");
  }
  const auto split = cfg.at("evaluate").at("split").get<std::string>();
  std::vector<data::PairRecord> records;
  for (auto& r : data::load_manifest(manifest)) {
    if (split == "all" || data::to_string(r.split) == split) records.push_back(std::move(r));
  }
  if (split != "all") data::split_from_string(split);

  std::optional<model::LoadedModel> loaded;
  std::optional<model::GLFeatNet> net;
  if (!checkpoint.empty()) {
    loaded = model::load_model(checkpoint);
    net.emplace(loaded->config);
  }
  const evaluation::FeatureProvider provider = [&](const std::string& path) {
    const Image img = load_image(path);
    evaluation::ImageFeatures f;
    f.frame = {img.width, img.height};
    if (net) {
      f.features = extract_features(*net, loaded->params, img, nms);
    } else {
      f.features =
          data::read_features(fs::path(feature_dir) / (fs::path(path).stem().string() + ".glft"));
    }
    return f;
  };
  const auto report = evaluation::evaluate_dataset(records, provider, ec);
  const fs::path out = output_dir(cfg, "evaluate");
  prepare_output(out, cfg);
  {
    std::ofstream csv(out / "pairs.csv");
    evaluation::write_pair_csv(csv, report.pairs);
    std::ofstream summary(out / "summary.txt");
    evaluation::write_summary(summary, report.summary);
    summary << fmt::format("failures={}\n", report.failures.size());
  }
  evaluation::write_summary(std::cout, report.summary);
  std::cout << fmt::format("failures={}\n", report.failures.size());
  for (const auto& f : report.failures) std::cerr << "failed: " << f << '\n';
  return report.failures.empty() ? kOk : kDataError;
}

int cmd_bench(const json& cfg, const std::string& checkpoint) {
  const json& b = cfg.at("bench");
  const int width = b.at("width").get<int>();
  const int height = b.at("height").get<int>();
  const int n = b.at("n_images").get<int>();
  const int warmup = b.at("warmup").get<int>();
  if (width < 1 || height < 1) throw ArgumentError("bench resolution must be positive");
  const auto nms = nms_options(cfg);
  model::ModelConfig mc;
  ParameterStore<float> params;
  if (!checkpoint.empty()) {
    auto loaded = model::load_model(checkpoint);
    mc = loaded.config;
    params = std::move(loaded.params);
  } else {
    mc = model_config(cfg);
    params = model::GLFeatNet(mc).init_parameters<float>(cfg.at("seed").get<std::uint64_t>());
  }
  const model::GLFeatNet net(mc);
  const auto rep = evaluation::bench_fps(
      [&](const Image& img) { extract_features(net, params, img, nms); }, width, height, n,
      warmup, cfg.at("seed").get<std::uint64_t>());
  const std::string text = fmt::format(
      "width={}\nheight={}\nn_images={}\nwarmup={}\nfps={:.3f}\nfps_std={:.3f}\nmean_ms={:.3f}\n"
      "std_ms={:.3f}\n",
      rep.width, rep.height, rep.n_images, warmup, rep.fps, rep.fps_std, rep.mean_ms, rep.std_ms);
  const fs::path out = output_dir(cfg, "bench");
  prepare_output(out, cfg);
  std::ofstream(out / "bench.txt") << text;
  std::cout << text;
  return kOk;
}

int cmd_param_count(const json& cfg) {
  auto mc = model_config(cfg);
  const model::GLFeatNet net(mc);
  const auto br = net.param_breakdown();
  auto without = mc;
  without.global_enhancement = false;
  const std::size_t total_without = model::param_count(without);
  auto with = mc;
  with.global_enhancement = true;
  const std::size_t total_with = model::param_count(with);
  std::cout << fmt::format("encoder={}\n", br.encoder);
  std::cout << fmt::format("global_enhancement={}\n", br.global_enhancement);
  std::cout << fmt::format("fusion={}\n", br.fusion);
  std::cout << fmt::format("total={}\n", br.total());
  std::cout << fmt::format("total_millions={:.4f}\n", br.total() / 1e6);
  std::cout << fmt::format("total_with_gem={}\n", total_with);
  std::cout << fmt::format("total_without_gem={}\n", total_without);
  std::cout << fmt::format("gem_delta={}\n", total_with - total_without);
  return kOk;
}

int cmd_dataset_gen(const json& cfg) {
  const auto dc = dataset_config(cfg);
  const fs::path out = output_dir(cfg, "dataset");
  prepare_output(out, cfg);
  const auto ds = data::generate_dataset(dc, out);
  std::cout << fmt::format("records={}\nmanifest={}\n", ds.records.size(),
                           ds.manifest_path.string());
  return kOk;
}

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string output;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonOptions& c) {
  sub->add_option("--config", c.config, "JSON config file");
  sub->add_option("--set", c.sets, "Override a config value (dot.path=value); repeatable")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sub->add_option("--output", c.output,
                  "Output directory (default: $GLFEAT_OUTPUT_ROOT/<command> or "
                  "glfeat_out/<command>)");
  sub->add_option("--seed", c.seed, "Global seed (config key 'seed')");
}

json resolve(const CommonOptions& c) {
  json cfg = resolve_config(c.config, c.sets);
  if (!c.output.empty()) cfg["output_dir"] = c.output;
  if (c.seed) cfg["seed"] = *c.seed;
  return cfg;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"GLFeat local feature extraction, training and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CommonOptions c_train, c_extract, c_match, c_eval, c_bench, c_param, c_data;

  auto* train = app.add_subcommand("train", "Train by policy gradient on a dataset manifest");
  add_common(train, c_train);
  std::string manifest_train, resume;
  train->add_option("--manifest", manifest_train, "Dataset manifest (config data.manifest)");
  train->add_option("--resume", resume, "Resume from a training checkpoint");

  auto* extract = app.add_subcommand("extract", "Extract GLFT feature files from images");
  add_common(extract, c_extract);
  std::string ckpt_extract, list_file;
  std::vector<std::string> images;
  extract->add_option("--checkpoint", ckpt_extract, "Model checkpoint (.glfc)")->required();
  extract->add_option("--list", list_file, "Text file with one image path per line");
  extract->add_option("images", images, "Image files");

  auto* match = app.add_subcommand("match", "Mutual nearest-neighbour matching of two GLFT files");
  add_common(match, c_match);
  std::string feats_a, feats_b, match_manifest, pair_id;
  match->add_option("features_a", feats_a, "GLFT file of image A")->required();
  match->add_option("features_b", feats_b, "GLFT file of image B")->required();
  match->add_option("--manifest", match_manifest, "Manifest used to label matches");
  match->add_option("--pair", pair_id, "Pair id in the manifest");

  auto* evaluate = app.add_subcommand("evaluate", "Rep / MS / MMA / MHA on homography pairs");
  add_common(evaluate, c_eval);
  std::string eval_manifest, eval_ckpt, feature_dir;
  evaluate->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
  evaluate->add_option("--checkpoint", eval_ckpt, "Extract with this model");
  evaluate->add_option("--features", feature_dir, "Directory of <image stem>.glft files");

  auto* bench = app.add_subcommand("bench", "Extraction throughput");
  add_common(bench, c_bench);
  std::string bench_ckpt;
  bench->add_option("--checkpoint", bench_ckpt, "Model checkpoint (random weights if omitted)");

  auto* param = app.add_subcommand("param-count", "Parameter counts per module");
  add_common(param, c_param);

  auto* dataset = app.add_subcommand("dataset-gen", "Generate the synthetic dataset");
  add_common(dataset, c_data);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train->parsed()) {
      json cfg = resolve(c_train);
      if (!manifest_train.empty()) cfg["data"]["manifest"] = manifest_train;
      return cmd_train(cfg, resume);
    }
    if (extract->parsed()) return cmd_extract(resolve(c_extract), ckpt_extract, images, list_file);
    if (match->parsed()) {
      if (match_manifest.empty() != pair_id.empty()) {
        throw ArgumentError("--manifest and --pair must be given together");
      }
      return cmd_match(resolve(c_match), feats_a, feats_b, match_manifest, pair_id);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(resolve(c_eval), eval_manifest, eval_ckpt, feature_dir);
    }
    if (bench->parsed()) return cmd_bench(resolve(c_bench), bench_ckpt);
    if (param->parsed()) return cmd_param_count(resolve(c_param));
    if (dataset->parsed()) return cmd_dataset_gen(resolve(c_data));
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace glfeat::cli
