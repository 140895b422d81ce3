#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "glfeat/geometry.hpp"
#include "glfeat/image.hpp"
#include "glfeat/sampling.hpp"

namespace glfeat::data {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// Exactly one of `homography` / `two_view` is set.
struct PairRecord {
  std::string id;
  Split split = Split::kTrain;
  std::string path_a;
  std::string path_b;
  std::optional<geometry::Homography> homography;
  std::optional<geometry::TwoViewGeometry> two_view;

  // Scene key used to group training triplets: the id up to the first ':'.
  std::string scene() const;
  void validate() const;
  bool operator==(const PairRecord& o) const;
};

struct SyntheticSceneConfig {
  int texture_size = 256;
  int crop_size = 128;
  // Homography mode: maximal corner displacement as a fraction of crop_size.
  double perspective_jitter = 0.12;
  // Photometric jitter ranges.
  double brightness = 0.08;
  double contrast = 0.15;
  double noise_sigma = 0.01;
  // Two-view mode.
  double max_rotation_deg = 5.0;
  // Extra rotation about the optical axis and focal-length scale of the
  // additional cameras; without them the identity mapping is almost always
  // epipolar-consistent.
  double max_roll_deg = 30.0;
  double max_zoom = 1.2;
  double min_baseline = 0.25;
  double max_baseline = 0.6;
  double plane_depth = 4.0;
  double max_plane_tilt_deg = 20.0;
  bool second_plane = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedPair {
  PairRecord record;
  Image image_a;
  Image image_b;
  // Exact pixel correspondences (a -> b) held out for verification.
  std::vector<geometry::PointPair> correspondences;
};

struct GeneratedTriplet {
  std::array<Image, 3> images;
  // Geometry of the ordered pairs (0,1), (0,2), (1,2).
  std::array<geometry::TwoViewGeometry, 3> geometry;
  std::array<std::vector<geometry::PointPair>, 3> correspondences;
};

inline constexpr std::array<std::pair<int, int>, 3> kTripletPairs{
    {{0, 1}, {0, 2}, {1, 2}}};

// Independent generator for record `index` derived from a master seed.
std::mt19937_64 sub_generator(std::uint64_t master_seed, std::uint64_t index);

// Procedural RGB texture of random shapes on a smooth background.
Image make_texture(int size, std::mt19937_64& rng);

GeneratedPair generate_homography_pair(const SyntheticSceneConfig& cfg,
                                       std::mt19937_64& rng, const Image& base_image);

GeneratedPair generate_two_view_pair(const SyntheticSceneConfig& cfg,
                                     std::mt19937_64& rng);

GeneratedTriplet generate_triplet(const SyntheticSceneConfig& cfg, std::mt19937_64& rng);

struct DatasetConfig {
  SyntheticSceneConfig scene;
  int train_scenes = 64;
  int val_scenes = 8;
  int test_scenes = 8;
  int pairs_per_eval_scene = 2;
  std::uint64_t seed = 2023;
};

struct Dataset {
  std::vector<PairRecord> records;
  std::filesystem::path manifest_path;
};

// Writes PNG images and manifest.txt under `out_dir`.
Dataset generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);

// Line-oriented text manifest, version 1:
//   # glfeat manifest v1
//   <id> <split> <path_a> <path_b> homography <9 numbers, row-major>
//   <id> <split> <path_a> <path_b> epipolar <F: 9> <K_a: fx fy cx cy>
//       <K_b: fx fy cx cy> <R: 9> <t: 3>
// Relative paths are relative to the manifest directory.
void write_manifest(const std::filesystem::path& path, const std::vector<PairRecord>& records);
std::vector<PairRecord> load_manifest(const std::filesystem::path& path);

// GLFT feature container, version 1:
//   "GLFT" | u32 version | u32 N | u32 dim | f32 keypoints[N*2] | f32 scores[N]
//   | f32 descriptors[N*dim]
inline constexpr std::uint32_t kFeatureFileVersion = 1;
std::vector<std::uint8_t> encode_features(const sampling::FeatureSet& fs);
sampling::FeatureSet decode_features(const std::vector<std::uint8_t>& bytes);
void write_features(const std::filesystem::path& path, const sampling::FeatureSet& fs);
sampling::FeatureSet read_features(const std::filesystem::path& path);

}  // namespace glfeat::data
