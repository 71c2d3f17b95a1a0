#pragma once

// Little-endian binary records with offset-tagged parse errors.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "ddsp/autodiff/tape.hpp"
#include "ddsp/errors.hpp"

namespace ddsp::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path + ": write failed");
}

class Writer {
 public:
  template <class V>
  void pod(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void u8(std::uint8_t v) { pod(v); }
  void u16(std::uint16_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void floats(const std::vector<float>& v) {
    const auto* p = reinterpret_cast<const char*>(v.data());
    bytes_.insert(bytes_.end(), p, p + v.size() * sizeof(float));
  }

  /// u16 name length, name, u8 rank, rank x u32 dims, f32 payload.
  void tensor(const std::string& name, const ad::Tensor<float>& t) {
    if (name.size() > 0xffff) throw InvalidArgument("tensor name too long: " + name.substr(0, 40));
    u16(static_cast<std::uint16_t>(name.size()));
    raw(name);
    u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) u32(static_cast<std::uint32_t>(d));
    floats(t.data);
  }

  const std::vector<char>& bytes() const { return bytes_; }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(origin_ + ": offset " + std::to_string(pos_) + ": " + msg);
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what);
  }

  template <class V>
  V pod(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::uint8_t u8(const char* what) { return pod<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return pod<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return pod<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return pod<std::uint64_t>(what); }

  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(std::string_view magic) {
    const std::size_t at = pos_;
    if (raw(magic.size(), "magic") != magic) {
      pos_ = at;
      fail("bad magic, expected \"" + std::string(magic) + "\"");
    }
  }

  std::vector<float> floats(std::size_t n, const char* what) {
    if (n > (bytes_.size() - pos_) / sizeof(float)) fail(std::string("truncated ") + what);
    std::vector<float> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return v;
  }

  std::pair<std::string, ad::Tensor<float>> tensor() {
    const std::size_t len = u16("tensor name length");
    std::string name = raw(len, "tensor name");
    const std::size_t rank = u8("tensor rank");
    ad::Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(u32("tensor dims"));
    auto data = floats(ad::numel(shape), "tensor payload");
    return {std::move(name), ad::Tensor<float>(std::move(shape), std::move(data))};
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool peek(std::string_view s) const {
    return remaining() >= s.size() && std::string_view(bytes_.data() + pos_, s.size()) == s;
  }

 private:
  const std::vector<char>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace ddsp::io
