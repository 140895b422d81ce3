#include "glfeat/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "glfeat/errors.hpp"

namespace glfeat::model {

using detail::ByteReader;
using detail::ByteWriter;
using nlohmann::json;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.put_bytes("GLFC", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ckpt.config_digest);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.metadata.size()));
  w.put_bytes(ckpt.metadata.data(), ckpt.metadata.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    std::size_t count = 1;
    for (int d : r.shape) count *= static_cast<std::size_t>(d);
    if (count != r.data.size()) {
      throw ArgumentError(fmt::format("record {} has {} values for its shape ({})",
                                      r.name, r.data.size(), count));
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
    w.put_bytes(r.name.data(), r.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
    for (int d : r.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_floats(r.data.data(), r.data.size());
  }
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.get_string(4, "magic") != "GLFC") r.fail("bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail(fmt::format("unsupported version {}", version));
  Checkpoint ckpt;
  ckpt.config_digest = r.get<std::uint64_t>("config digest");
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  ckpt.metadata = r.get_string(meta_len, "metadata");
  const auto n = r.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray rec;
    const auto name_len = r.get<std::uint32_t>("record name length");
    rec.name = r.get_string(name_len, "record name");
    const auto ndim = r.get<std::uint32_t>("record rank");
    if (ndim > 8) r.fail(fmt::format("implausible rank {}", ndim));
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint32_t>("record dims");
      rec.shape.push_back(static_cast<int>(dim));
      count *= dim;
    }
    if (count * sizeof(float) > r.remaining()) {
      r.fail(fmt::format("truncated data for record {}", rec.name));
    }
    rec.data.resize(count);
    r.get_floats(rec.data.data(), count, "record data");
    ckpt.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file_bytes(path));
}

std::string config_to_json_text(const ModelConfig& c) {
  json j = {{"widths", c.widths},
            {"fusion_width", c.fusion_width},
            {"descriptor_dim", c.descriptor_dim},
            {"encoder_kernel", c.encoder_kernel},
            {"embedding_base", c.embedding_base},
            {"global_enhancement", c.global_enhancement}};
  return j.dump();
}

ModelConfig config_from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    c.widths = j.at("widths").get<std::array<int, 4>>();
    c.fusion_width = j.at("fusion_width").get<int>();
    c.descriptor_dim = j.at("descriptor_dim").get<int>();
    c.encoder_kernel = j.at("encoder_kernel").get<int>();
    c.embedding_base = j.at("embedding_base").get<double>();
    c.global_enhancement = j.at("global_enhancement").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("bad model config: {}", e.what()));
  }
}

std::vector<NamedArray> parameter_records(const ParameterStore<float>& params,
                                          const std::string& prefix) {
  std::vector<NamedArray> out;
  for (const auto& t : params) {
    out.push_back({prefix + t.name, t.shape,
                   std::vector<float>(t.values.data(), t.values.data() + t.values.size())});
  }
  return out;
}

void assign_parameters(const std::vector<NamedArray>& records,
                       ParameterStore<float>& params, const std::string& prefix) {
  for (auto& t : params) {
    const NamedArray* found = nullptr;
    for (const auto& r : records) {
      if (r.name == prefix + t.name) {
        found = &r;
        break;
      }
    }
    if (!found) throw DataError(fmt::format("checkpoint lacks tensor {}{}", prefix, t.name));
    if (found->shape != t.shape) {
      throw DataError(fmt::format("checkpoint tensor {} has the wrong shape", found->name));
    }
    t.values = Eigen::Map<const Vector<float>>(found->data.data(),
                                               static_cast<Eigen::Index>(found->data.size()));
  }
}

void save_model(const std::string& path, const GLFeatNet& net,
                const ParameterStore<float>& params) {
  Checkpoint ckpt;
  ckpt.config_digest = net.config().digest();
  ckpt.metadata = json{{"model", json::parse(config_to_json_text(net.config()))}}.dump();
  ckpt.records = parameter_records(params);
  write_checkpoint(path, ckpt);
}

LoadedModel load_model(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  json meta;
  try {
    meta = json::parse(ckpt.metadata);
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: bad metadata: {}", path, e.what()));
  }
  if (!meta.contains("model")) throw DataError(fmt::format("{}: no model config", path));
  LoadedModel out;
  out.config = config_from_json_text(meta["model"].dump());
  if (out.config.digest() != ckpt.config_digest) {
    throw DataError(fmt::format("{}: config digest mismatch", path));
  }
  const GLFeatNet net(out.config);
  out.params = ParameterStore<float>(net.layout());
  assign_parameters(ckpt.records, out.params);
  return out;
}

}  // namespace glfeat::model
