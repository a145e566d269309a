#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "endofinder/binary_io.hpp"

namespace endofinder {

// One row of an ".endf" embedding file.
struct EmbeddingRow {
  std::string id;
  std::int32_t label = 0;
  std::vector<float> values;

  bool operator==(const EmbeddingRow&) const = default;
};

struct EmbeddingTable {
  std::uint32_t dim = 0;
  std::vector<EmbeddingRow> rows;

  bool operator==(const EmbeddingTable&) const = default;
};

inline constexpr char kEmbeddingMagic[] = "ENDF1";  // + implicit '\0' = 6 bytes

// Layout: "ENDF1\0", u32 dim, u64 count, then per row
// u16 id length, id bytes, i32 label, dim x f32.
inline std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& t) {
  ByteWriter w;
  w.raw(kEmbeddingMagic, 6);
  w.u32(t.dim);
  w.u64(t.rows.size());
  for (const auto& row : t.rows) {
    ENDF_THROW_IF_NOT(row.values.size() == t.dim, Errc::DimMismatch, "row '" + row.id + "' has wrong dimension");
    ENDF_THROW_IF_NOT(row.id.size() <= 0xFFFF, Errc::BadSpec, "id longer than 65535 bytes");
    w.u16(static_cast<std::uint16_t>(row.id.size()));
    w.raw(row.id.data(), row.id.size());
    w.i32(row.label);
    for (float v : row.values) w.f32(v);
  }
  return w.data();
}

inline EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes, const std::string& source = "<endf>") {
  ByteReader r(bytes, source);
  expect_magic(r, std::string_view(kEmbeddingMagic, 6));
  EmbeddingTable t;
  t.dim = r.u32("dim");
  const auto count = r.u64("count");
  // Each row needs at least 2 + 4 + 4*dim bytes; reject absurd counts before reserving.
  const std::uint64_t min_row = 6 + 4ull * t.dim;
  if (count > r.remaining() / min_row) r.fail("record count exceeds file size");
  t.rows.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRow row;
    const auto len = r.u16("id length");
    auto id = r.take(len, "id");
    row.id.assign(id.begin(), id.end());
    row.label = r.i32("label");
    row.values.resize(t.dim);
    for (auto& v : row.values) v = r.f32("embedding value");
    t.rows.push_back(std::move(row));
  }
  if (!r.at_end()) r.fail("trailing bytes after last record");
  return t;
}

inline void save_embeddings(const EmbeddingTable& t, const std::filesystem::path& path) {
  write_file_bytes(path, encode_embeddings(t));
}

inline EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(read_file_bytes(path), path.string());
}

}  // namespace endofinder
