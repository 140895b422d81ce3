#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glfeat/model.hpp"
#include "glfeat/tensor.hpp"

// GLFC container: a single file of named float32 arrays.
//
//   "GLFC" | u32 version | u64 config digest | u32 n | n bytes metadata (JSON)
//   | u32 record count | records...
//   record: u32 name length | name | u32 ndim | u32 dims[ndim] | f32 data[]
//
// All integers and floats are little-endian.
namespace glfeat::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint64_t config_digest = 0;
  std::string metadata;  // JSON text, "{}" when unused
  std::vector<NamedArray> records;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Model-level convenience: the parameters of `net` plus its config as
// metadata under the key "model".
void save_model(const std::string& path, const GLFeatNet& net,
                const ParameterStore<float>& params);

struct LoadedModel {
  ModelConfig config;
  ParameterStore<float> params;
};
LoadedModel load_model(const std::string& path);

ModelConfig config_from_json_text(const std::string& metadata);
std::string config_to_json_text(const ModelConfig& config);

// Copies records named like the store's tensors; throws DataError when a
// tensor is missing or its shape differs.
void assign_parameters(const std::vector<NamedArray>& records,
                       ParameterStore<float>& params, const std::string& prefix = "");
std::vector<NamedArray> parameter_records(const ParameterStore<float>& params,
                                          const std::string& prefix = "");

}  // namespace glfeat::model
