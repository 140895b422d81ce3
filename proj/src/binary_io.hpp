#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "glfeat/errors.hpp"

namespace glfeat::detail {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    v = to_little(v);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_floats(const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      put_bytes(data, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(data[i]);
    }
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get(const char* field) {
    require(sizeof(T), field);
    T v;
    std::memcpy(&v, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return to_little(v);
  }
  std::string get_string(std::size_t n, const char* field) {
    require(n, field);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), n);
    offset_ += n;
    return s;
  }
  void get_floats(float* out, std::size_t n, const char* field) {
    require(n * sizeof(float), field);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out, bytes_.data() + offset_, n * sizeof(float));
      offset_ += n * sizeof(float);
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = get<float>(field);
    }
  }
  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(fmt::format("{}: {} at byte offset {}", what_, msg, offset_));
  }

 private:
  void require(std::size_t n, const char* field) const {
    if (bytes_.size() - offset_ < n) {
      throw DataError(fmt::format("{}: truncated while reading {} at byte offset {}",
                                  what_, field, offset_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t offset_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

}  // namespace glfeat::detail
