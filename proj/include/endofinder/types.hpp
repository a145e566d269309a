#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "endofinder/error.hpp"

namespace endofinder {

inline constexpr double kZeroNormEps = 1e-12;
inline constexpr double kUnitNormTol = 1e-4;

/// Grayscale image, row-major, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }

  bool operator==(const Image&) const = default;
};

/// Binary segmentation mask paired with an Image; 1 = polyp foreground.
struct SegMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  SegMask() = default;
  SegMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }

  double foreground_fraction() const {
    if (values.empty()) return 0.0;
    std::size_t n = 0;
    for (auto v : values) n += v != 0;
    return static_cast<double>(n) / static_cast<double>(values.size());
  }

  bool operator==(const SegMask&) const = default;
};

/// Unit-norm embedding. Only obtainable through l2_normalize() or
/// from_normalized(), so every instance satisfies ||z|| = 1 within tolerance.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  static EmbeddingVector from_normalized(std::vector<double> values, double tol = kUnitNormTol) {
    double ss = 0.0;
    for (double x : values) {
      ENDF_THROW_IF_NOT(std::isfinite(x), Errc::NotNormalized, "non-finite embedding value");
      ss += x * x;
    }
    ENDF_THROW_IF_NOT(std::abs(std::sqrt(ss) - 1.0) <= tol, Errc::NotNormalized,
                      "embedding norm " + std::to_string(std::sqrt(ss)) + " is not 1");
    EmbeddingVector e;
    e.values_ = std::move(values);
    return e;
  }

  std::size_t dim() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  bool operator==(const EmbeddingVector&) const = default;

 private:
  friend EmbeddingVector l2_normalize(std::span<const double> v);
  std::vector<double> values_;
};

inline EmbeddingVector l2_normalize(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) {
    ENDF_THROW_IF_NOT(std::isfinite(x), Errc::ZeroVector, "non-finite input to l2_normalize");
    ss += x * x;
  }
  const double norm = std::sqrt(ss);
  ENDF_THROW_IF_NOT(norm > kZeroNormEps, Errc::ZeroVector, "vector norm below 1e-12");
  EmbeddingVector e;
  e.values_.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) e.values_[i] = v[i] / norm;
  return e;
}

inline EmbeddingVector l2_normalize(std::initializer_list<double> v) {
  return l2_normalize(std::span<const double>(v.begin(), v.size()));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Dot product of unit vectors, clamped to [-1, 1].
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  ENDF_THROW_IF_NOT(a.dim() == b.dim(), Errc::DimMismatch,
                    "cosine_similarity: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  const double s = dot(a.values(), b.values());
  return std::clamp(s, -1.0, 1.0);
}

/// d-bit sign code, packed MSB-first, pad bits of the last byte zero.
class HashCode {
 public:
  HashCode() = default;
  explicit HashCode(std::size_t bits) : bits_(bits), bytes_((bits + 7) / 8, 0) {}

  static HashCode from_bytes(std::size_t bits, std::vector<std::uint8_t> bytes) {
    ENDF_THROW_IF_NOT(bytes.size() == (bits + 7) / 8, Errc::DimMismatch, "hash byte length does not match bit count");
    if (bits % 8 != 0) {
      const std::uint8_t pad_mask = static_cast<std::uint8_t>(0xFFu >> (bits % 8));
      ENDF_THROW_IF_NOT((bytes.back() & pad_mask) == 0, Errc::CorruptFile, "hash pad bits are not zero");
    }
    HashCode h;
    h.bits_ = bits;
    h.bytes_ = std::move(bytes);
    return h;
  }

  std::size_t bits() const { return bits_; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

  bool bit(std::size_t k) const { return (bytes_[k >> 3] >> (7 - (k & 7))) & 1u; }
  void set_bit(std::size_t k, bool on) {
    const auto m = static_cast<std::uint8_t>(1u << (7 - (k & 7)));
    if (on)
      bytes_[k >> 3] |= m;
    else
      bytes_[k >> 3] &= static_cast<std::uint8_t>(~m);
  }

  HashCode operator~() const {
    HashCode h = *this;
    for (auto& b : h.bytes_) b = static_cast<std::uint8_t>(~b);
    if (bits_ % 8 != 0) h.bytes_.back() &= static_cast<std::uint8_t>(0xFFu << (8 - bits_ % 8));
    return h;
  }

  std::string to_hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes_.size() * 2);
    for (auto b : bytes_) {
      s.push_back(kDigits[b >> 4]);
      s.push_back(kDigits[b & 15]);
    }
    return s;
  }

  static HashCode from_hex(std::string_view hex, std::size_t bits) {
    ENDF_THROW_IF_NOT(hex.size() == 2 * ((bits + 7) / 8), Errc::DimMismatch,
                      "hex code has " + std::to_string(hex.size() * 4) + " bits, index expects " + std::to_string(bits));
    auto nibble = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      throw Error(Errc::BadConfig, "invalid hex digit");
    };
    std::vector<std::uint8_t> bytes(hex.size() / 2);
    for (std::size_t i = 0; i < bytes.size(); ++i)
      bytes[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return from_bytes(bits, std::move(bytes));
  }

  bool operator==(const HashCode&) const = default;

 private:
  std::size_t bits_ = 0;
  std::vector<std::uint8_t> bytes_;
};

/// Row of the reference database.
struct ReferenceRecord {
  std::string id;
  int label = 0;
  HashCode code;
  std::optional<std::vector<float>> raw;
};

struct Neighbor {
  std::string id;
  int label = 0;
  double distance = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// Neighbors in ascending (distance, id) order plus the majority vote.
struct RetrievalResult {
  std::vector<Neighbor> neighbors;
  int predicted_label = 0;
  std::map<int, int> vote_histogram;

  bool operator==(const RetrievalResult&) const = default;
};

inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.id < b.id;
}

}  // namespace endofinder
