#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "endofinder/error.hpp"

namespace endofinder {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

// Little-endian append-only byte buffer.
class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  template <typename T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    raw(&v, sizeof v);
  }
  void u8(std::uint8_t v) { put(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i32(std::int32_t v) { put(v); }
  void f32(float v) { put(v); }

  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked reader; every failure names the source and byte offset.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string source)
      : data_(data), source_(std::move(source)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n)
      throw Error(Errc::CorruptFile, source_ + ": truncated while reading " + std::string(what) + " at offset " +
                                         std::to_string(pos_));
  }

  template <typename T>
  T get(std::string_view what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::uint8_t u8(std::string_view w) { return get<std::uint8_t>(w); }
  std::uint16_t u16(std::string_view w) { return get<std::uint16_t>(w); }
  std::uint32_t u32(std::string_view w) { return get<std::uint32_t>(w); }
  std::uint64_t u64(std::string_view w) { return get<std::uint64_t>(w); }
  std::int32_t i32(std::string_view w) { return get<std::int32_t>(w); }
  float f32(std::string_view w) { return get<float>(w); }

  std::span<const std::uint8_t> take(std::size_t n, std::string_view what) {
    need(n, what);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void fail(std::string_view what) const {
    throw Error(Errc::CorruptFile, source_ + ": " + std::string(what) + " at offset " + std::to_string(pos_));
  }

 private:
  std::span<const std::uint8_t> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(Errc::Io, "failed reading " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

// Checks a 6-byte "XXXXN\0" magic. A matching 4-letter family with a different
// version digit is a VersionMismatch; anything else is CorruptFile.
inline void expect_magic(ByteReader& r, std::string_view magic6) {
  r.need(6, "magic");
  auto got = r.take(6, "magic");
  if (std::memcmp(got.data(), magic6.data(), 6) == 0) return;
  if (std::memcmp(got.data(), magic6.data(), 4) == 0 && got[5] == 0)
    throw Error(Errc::VersionMismatch, "unsupported format version '" + std::string(1, static_cast<char>(got[4])) +
                                           "', expected '" + std::string(1, magic6[4]) + "'");
  throw Error(Errc::CorruptFile, "bad magic bytes, expected " + std::string(magic6.substr(0, 5)));
}

}  // namespace endofinder
