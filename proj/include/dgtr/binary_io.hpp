#pragma once

// Little-endian primitives shared by the body, feature, and checkpoint files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "dgtr/error.hpp"

namespace dgtr::io {

class Writer {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }

  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  template <class Real>
  void f32_array(const std::vector<Real>& values) {
    for (Real v : values) f32(static_cast<float>(v));
  }

  const std::vector<char>& bytes() const noexcept { return bytes_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw Error("failed writing '" + path + "'");
  }

 private:
  template <class U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }

  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  static Reader open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(bytes), path);
  }

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::string_view(bytes_.data() + pos_, m.size()) != m) {
      throw FormatError(source_ + ": expected magic '" + std::string(m) + "'");
    }
    pos_ += m.size();
  }

  bool peek_magic(std::string_view m) const {
    return remaining() >= m.size() && std::string_view(bytes_.data() + pos_, m.size()) == m;
  }

  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }

  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  template <class Real>
  std::vector<Real> f32_array(std::size_t count) {
    need(count * 4);
    std::vector<Real> out(count);
    for (auto& v : out) v = static_cast<Real>(f32());
    return out;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  const std::string& source() const noexcept { return source_; }

  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError(source_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError(source_ + ": truncated file");
  }

  template <class U>
  U get_le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace dgtr::io
