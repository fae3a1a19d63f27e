// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian container shared by the model and cache files:
//   magic bytes | format-specific header | sections until end of file
// where a section is
//   u32 name length | name bytes | u32 rows | u32 cols | rows*cols f32

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ctxda/error.hpp"
#include "ctxda/matrix.hpp"

namespace ctxda {

/// 64-bit FNV-1a.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::string_view s) noexcept { return update(s.data(), s.size()); }
  Fnv1a& update_u64(std::uint64_t v) noexcept {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return update(b, 8);
  }
  std::uint64_t digest() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void string(std::string_view s) {
    u32(checked_u32(s.size()));
    bytes(s);
  }

  template <typename T>
  void section(std::string_view name, const Matrix<T>& m) {
    string(name);
    u32(checked_u32(m.rows()));
    u32(checked_u32(m.cols()));
    for (T v : m.values()) f32(static_cast<float>(v));
  }

  const std::string& buffer() const noexcept { return buf_; }

  void write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw FormatError("write failed: " + path);
  }

  static std::uint32_t checked_u32(std::size_t n) {
    if (n > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError("value does not fit in 32 bits");
    }
    return static_cast<std::uint32_t>(n);
  }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data, std::string origin = "<memory>")
      : data_(std::move(data)), origin_(std::move(origin)) {}

  static ByteReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data), path);
  }

  bool at_end() const noexcept { return pos_ == data_.size(); }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void expect_magic(std::string_view magic) {
    if (remaining() < magic.size() || data_.compare(pos_, magic.size(), magic) != 0) {
      throw FormatError(origin_ + ": bad magic (expected " + std::string(magic) + ")");
    }
    pos_ += magic.size();
  }

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string string() {
    const std::uint32_t n = u32();
    need(n, "string");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  /// Reads every remaining section, keyed by name.
  std::map<std::string, Matrix<float>> sections() {
    std::map<std::string, Matrix<float>> out;
    while (!at_end()) {
      std::string name = string();
      const std::uint32_t rows = u32();
      const std::uint32_t cols = u32();
      if (rows == 0 || cols == 0) throw FormatError(origin_ + ": empty section " + name);
      const std::size_t count = static_cast<std::size_t>(rows) * cols;
      need(count * 4, "section " + name);
      std::vector<float> values(count);
      for (auto& v : values) v = f32();
      if (!out.emplace(name, Matrix<float>(rows, cols, std::move(values))).second) {
        throw FormatError(origin_ + ": duplicate section " + name);
      }
    }
    return out;
  }

  const std::string& origin() const noexcept { return origin_; }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) throw FormatError(origin_ + ": truncated while reading " + what);
  }

  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

/// Moves a named section out of `sections`, checking its shape.
template <typename T>
Matrix<T> take_section(std::map<std::string, Matrix<float>>& sections, const std::string& name,
                       std::size_t rows, std::size_t cols, const std::string& origin) {
  auto it = sections.find(name);
  if (it == sections.end()) throw FormatError(origin + ": missing section " + name);
  if (it->second.rows() != rows || it->second.cols() != cols) {
    throw FormatError(origin + ": section " + name + " is " + shape_string(it->second) +
                      ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix<T> m = it->second.template cast<T>();
  sections.erase(it);
  return m;
}

}  // namespace ctxda
