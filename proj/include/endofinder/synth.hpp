#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "endofinder/binary_io.hpp"
#include "endofinder/rng.hpp"
#include "endofinder/types.hpp"

namespace endofinder {

struct SynthSpec {
  int image_size = 64;
  int patch_size = 8;
  int num_instances = 200;
  int views_per_instance = 2;
  int num_classes = 2;
  std::uint64_t seed = 0;
  double min_mask_fraction = 0.02;
  double max_mask_fraction = 0.6;
};

struct SynthSample {
  std::string instance_id;
  int class_label = 1;
  Image image;
  SegMask mask;

  bool operator==(const SynthSample&) const = default;
};

inline void validate(const SynthSpec& s) {
  ENDF_THROW_IF_NOT(s.patch_size > 0 && s.image_size > 0, Errc::BadSpec, "sizes must be positive");
  ENDF_THROW_IF_NOT(s.image_size % s.patch_size == 0, Errc::BadSpec,
                    "image_size " + std::to_string(s.image_size) + " is not a multiple of patch_size " +
                        std::to_string(s.patch_size));
  ENDF_THROW_IF_NOT(s.num_instances >= 0, Errc::BadSpec, "num_instances must be non-negative");
  ENDF_THROW_IF_NOT(s.views_per_instance == 2, Errc::BadSpec, "views_per_instance must be 2");
  ENDF_THROW_IF_NOT(s.num_classes >= 1, Errc::BadSpec, "num_classes must be >= 1");
  ENDF_THROW_IF_NOT(0.0 < s.min_mask_fraction && s.min_mask_fraction < s.max_mask_fraction &&
                        s.max_mask_fraction <= 1.0,
                    Errc::BadSpec, "mask fraction bounds must satisfy 0 < min < max <= 1");
}

inline std::string instance_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "inst_%05d", i);
  return buf;
}

namespace detail {

// Labels cycle 1..C so any multiple of C instances is exactly balanced.
inline SynthSample render_instance(const SynthSpec& spec, int index) {
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
  const int n = spec.image_size;
  const double sz = n;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  SynthSample s;
  s.instance_id = instance_name(index);
  s.class_label = index % spec.num_classes + 1;
  s.image = Image(n, n);
  s.mask = SegMask(n, n);

  // Background: mucosa level plus two slow intensity undulations.
  const double base = rng.uniform(0.15, 0.6);
  struct Wave {
    double amp, kx, ky, phase;
  };
  Wave waves[2];
  for (auto& w : waves) {
    const double theta = rng.uniform(0.0, two_pi);
    const double freq = rng.uniform(0.5, 1.5) / sz;
    w.amp = rng.uniform(0.0, 0.15);
    w.kx = two_pi * freq * std::cos(theta);
    w.ky = two_pi * freq * std::sin(theta);
    w.phase = rng.uniform(0.0, two_pi);
  }

  // Polyp: one rotated ellipse, resampled until its area is in range.
  const double lo = spec.min_mask_fraction, hi = spec.max_mask_fraction;
  double cx = 0, cy = 0, rx = 1, ry = 1, cos_phi = 1, sin_phi = 0;
  for (int attempt = 0;; ++attempt) {
    const double target = rng.uniform(std::max(lo, 0.05), std::min(hi, 0.4));
    const double aspect = rng.uniform(0.6, 1.6);
    const double phi = rng.uniform(0.0, std::numbers::pi);
    const double area = target * sz * sz;
    rx = std::sqrt(area / std::numbers::pi * aspect);
    ry = std::sqrt(area / std::numbers::pi / aspect);
    cx = rng.uniform(0.2 * sz, 0.8 * sz);
    cy = rng.uniform(0.2 * sz, 0.8 * sz);
    cos_phi = std::cos(phi);
    sin_phi = std::sin(phi);
    std::size_t inside = 0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (dx * cos_phi + dy * sin_phi) / rx, v = (-dx * sin_phi + dy * cos_phi) / ry;
        inside += u * u + v * v <= 1.0;
      }
    const double frac = static_cast<double>(inside) / (sz * sz);
    if (frac >= lo && frac <= hi) break;
    ENDF_THROW_IF_NOT(attempt < 10000, Errc::BadSpec, "could not place a polyp within the mask fraction bounds");
  }

  // Class 1 is a smooth dome; higher classes carry stripes of rising frequency.
  const double level = rng.uniform(0.3, 0.95);
  const double stripe_freq =
      spec.num_classes > 1 ? 0.1 + 0.3 * (s.class_label - 1) / static_cast<double>(spec.num_classes - 1) : 0.0;
  const double psi = rng.uniform(0.0, std::numbers::pi);
  const double sx = two_pi * stripe_freq * std::cos(psi), sy = two_pi * stripe_freq * std::sin(psi);
  const double edge = 3.0 * sz / 32.0;  // soft rim width in pixels

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double bg = base;
      for (const auto& w : waves) bg += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (dx * cos_phi + dy * sin_phi) / rx, v = (-dx * sin_phi + dy * cos_phi) / ry;
      const double rho = std::sqrt(u * u + v * v);
      const double fg = s.class_label == 1 ? level - 0.1 * rho : level + 0.15 * std::sin(sx * x + sy * y);
      const double alpha = std::clamp((1.0 - rho) * std::min(rx, ry) / edge + 0.5, 0.0, 1.0);
      s.image.at(y, x) = std::clamp(alpha * fg + (1.0 - alpha) * bg, 0.0, 1.0);
      s.mask.at(y, x) = rho * rho <= 1.0 ? 1 : 0;
    }
  return s;
}

}  // namespace detail

/// Deterministic corpus: one base image per instance, labels balanced round-robin.
inline std::vector<SynthSample> generate(const SynthSpec& spec) {
  validate(spec);
  std::vector<SynthSample> out;
  out.reserve(static_cast<std::size_t>(spec.num_instances));
  for (int i = 0; i < spec.num_instances; ++i) out.push_back(detail::render_instance(spec, i));
  return out;
}

/// Geometric and photometric draw for one augmented view.
struct AugmentParams {
  bool flip_h = false;
  bool flip_v = false;
  int tx = 0;  // columns; content moves right for tx > 0
  int ty = 0;  // rows
  double gain = 1.0;
  double noise_sigma = 0.02;
};

/// Flips with p = 0.5 each, shifts up to 1/8 of the width, gain in [0.8, 1.2].
inline AugmentParams draw_augment(Rng& rng, int width) {
  AugmentParams a;
  a.flip_h = rng.bernoulli(0.5);
  a.flip_v = rng.bernoulli(0.5);
  const int max_shift = width / 8;
  a.tx = static_cast<int>(rng.between(-max_shift, max_shift));
  a.ty = static_cast<int>(rng.between(-max_shift, max_shift));
  a.gain = rng.uniform(0.8, 1.2);
  return a;
}

/// Applies `a`; edge pixels are replicated into the vacated border and the
/// image is clamped to [0, 1] after the gain and again after the noise. The
/// mask follows the geometric part only.
inline SynthSample apply_augment(const SynthSample& sample, const AugmentParams& a, Rng& noise) {
  const int h = sample.image.height, w = sample.image.width;
  ENDF_THROW_IF_NOT(h > 0 && w > 0 && sample.mask.height == h && sample.mask.width == w, Errc::DimMismatch,
                    "augment: image and mask dimensions differ");
  SynthSample out;
  out.instance_id = sample.instance_id;
  out.class_label = sample.class_label;
  out.image = Image(h, w);
  out.mask = SegMask(h, w);
  for (int y = 0; y < h; ++y) {
    int sy = std::clamp(y - a.ty, 0, h - 1);
    if (a.flip_v) sy = h - 1 - sy;
    for (int x = 0; x < w; ++x) {
      int sx = std::clamp(x - a.tx, 0, w - 1);
      if (a.flip_h) sx = w - 1 - sx;
      out.image.at(y, x) = std::clamp(sample.image.at(sy, sx) * a.gain, 0.0, 1.0);
      out.mask.at(y, x) = sample.mask.at(sy, sx);
    }
  }
  if (a.noise_sigma > 0.0)
    for (auto& p : out.image.pixels) p = std::clamp(p + a.noise_sigma * noise.normal(), 0.0, 1.0);
  return out;
}

/// Random flips, edge-replicated translation (up to 1/8 of the width),
/// brightness in [0.8, 1.2] and N(0, 0.02) noise, all from one seed.
inline SynthSample augment(const SynthSample& sample, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  const auto a = draw_augment(rng, sample.image.width);
  return apply_augment(sample, a, rng);
}

// ---------------------------------------------------------------------------
// On-disk corpus: <id>.img (h*w little-endian f32), <id>.mask (h*w u8) and
// manifest.json listing {id, label, image, mask}.

inline void write_corpus(const std::filesystem::path& dir, const SynthSpec& spec,
                         const std::vector<SynthSample>& samples) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["image_size"] = spec.image_size;
  manifest["patch_size"] = spec.patch_size;
  manifest["num_classes"] = spec.num_classes;
  manifest["seed"] = spec.seed;
  manifest["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    ByteWriter img;
    for (double p : s.image.pixels) img.f32(static_cast<float>(p));
    const std::string img_name = s.instance_id + ".img", mask_name = s.instance_id + ".mask";
    write_file_bytes(dir / img_name, img.data());
    write_file_bytes(dir / mask_name, s.mask.values);
    manifest["samples"].push_back({{"id", s.instance_id}, {"label", s.class_label}, {"image", img_name}, {"mask", mask_name}});
  }
  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct Corpus {
  int image_size = 0;
  int patch_size = 0;
  int num_classes = 0;
  std::vector<SynthSample> samples;
};

inline Corpus read_corpus(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / "manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptFile, (dir / "manifest.json").string() + ": " + e.what());
  }
  Corpus c;
  try {
    c.image_size = manifest.at("image_size").get<int>();
    c.patch_size = manifest.at("patch_size").get<int>();
    c.num_classes = manifest.at("num_classes").get<int>();
    const int n = c.image_size;
    for (const auto& e : manifest.at("samples")) {
      SynthSample s;
      s.instance_id = e.at("id").get<std::string>();
      s.class_label = e.at("label").get<int>();
      const auto img_path = dir / e.at("image").get<std::string>();
      const auto img_bytes = read_file_bytes(img_path);
      ByteReader r(img_bytes, img_path.string());
      s.image = Image(n, n);
      for (auto& p : s.image.pixels) p = r.f32("pixel");
      if (!r.at_end()) r.fail("trailing bytes in image");
      const auto mask_path = dir / e.at("mask").get<std::string>();
      auto mask_bytes = read_file_bytes(mask_path);
      ENDF_THROW_IF_NOT(mask_bytes.size() == static_cast<std::size_t>(n) * n, Errc::CorruptFile,
                        mask_path.string() + ": expected " + std::to_string(n * n) + " bytes");
      s.mask = SegMask(n, n);
      s.mask.values = std::move(mask_bytes);
      c.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptFile, (dir / "manifest.json").string() + ": " + e.what());
  }
  return c;
}

}  // namespace endofinder
