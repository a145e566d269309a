#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "endofinder/rng.hpp"
#include "endofinder/types.hpp"

namespace endofinder {

struct MaskingConfig {
  double ratio = 0.75;            // overall masked fraction rho
  double fg_threshold = 0.25;     // in-mask pixel fraction that makes a patch foreground
  double fg_slope = 1.0;          // c in p_f* = c * r * rho
  double fg_rate_floor = 0.1;     // p_f_min
};

inline void validate(const MaskingConfig& c) {
  ENDF_THROW_IF_NOT(c.ratio > 0.0 && c.ratio < 1.0, Errc::BadConfig, "masking ratio must be in (0, 1)");
  ENDF_THROW_IF_NOT(c.fg_threshold >= 0.0 && c.fg_threshold <= 1.0, Errc::BadConfig,
                    "fg_threshold must be in [0, 1]");
  ENDF_THROW_IF_NOT(c.fg_slope >= 0.0, Errc::BadConfig, "fg_slope must be non-negative");
  ENDF_THROW_IF_NOT(c.fg_rate_floor >= 0.0 && c.fg_rate_floor <= c.ratio, Errc::BadConfig,
                    "fg_rate_floor must be in [0, ratio]");
}

/// Patch-level masking assignment for one image.
struct MaskPlan {
  std::vector<bool> masked;
  std::vector<bool> fg_patch;
  double overall_ratio = 0.0;
  double fg_rate = 0.0;  // realised masked fraction of foreground patches
  double bg_rate = 0.0;  // realised masked fraction of background patches

  std::size_t num_patches() const { return masked.size(); }
  std::size_t num_masked() const { return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true)); }

  /// A plan that masks nothing (inference).
  static MaskPlan none(std::size_t num_patches) {
    MaskPlan p;
    p.masked.assign(num_patches, false);
    p.fg_patch.assign(num_patches, false);
    return p;
  }

  bool operator==(const MaskPlan&) const = default;
};

/// Foreground flag per patch (row-major patch order).
inline std::vector<bool> classify_patches(const SegMask& mask, int patch_size, double fg_threshold) {
  ENDF_THROW_IF_NOT(patch_size > 0 && mask.height % patch_size == 0 && mask.width % patch_size == 0,
                    Errc::DimMismatch, "mask dims not divisible by patch size");
  const int gh = mask.height / patch_size, gw = mask.width / patch_size;
  const double area = static_cast<double>(patch_size) * patch_size;
  std::vector<bool> fg(static_cast<std::size_t>(gh) * gw);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      int inside = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x) inside += mask.at(py * patch_size + y, px * patch_size + x) != 0;
      fg[static_cast<std::size_t>(py) * gw + px] = inside / area >= fg_threshold;
    }
  return fg;
}

namespace detail {

// Partial Fisher-Yates: marks `count` distinct members of `pool` as masked.
inline void mask_without_replacement(std::vector<std::size_t> pool, std::size_t count, Rng& rng,
                                     std::vector<bool>& masked) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
    masked[pool[i]] = true;
  }
}

}  // namespace detail

struct MaskingTargets {
  double fg_rate = 0.0;  // p_f* = clamp(c * r * rho, p_f_min, rho)
  double bg_rate = 0.0;  // solves r * p_f* + (1 - r) * p_b* = rho, clamped to [0, 1]
};

/// Unrounded target rates for foreground share r in (0, 1).
inline MaskingTargets masking_targets(double r, const MaskingConfig& cfg) {
  validate(cfg);
  ENDF_THROW_IF_NOT(r > 0.0 && r < 1.0, Errc::BadSpec, "foreground share must be in (0, 1)");
  MaskingTargets t;
  t.fg_rate = std::clamp(cfg.fg_slope * r * cfg.ratio, cfg.fg_rate_floor, cfg.ratio);
  t.bg_rate = std::clamp((cfg.ratio - r * t.fg_rate) / (1.0 - r), 0.0, 1.0);
  return t;
}

/// Adaptive plan: the foreground rate grows with the foreground share r,
/// the background absorbs the rest so exactly round(rho * P) patches are
/// masked. r = 0 or r = 1 degenerates to uniform masking.
inline MaskPlan plan_mask(const std::vector<bool>& fg_patches, const MaskingConfig& cfg, std::uint64_t rng_seed) {
  validate(cfg);
  const std::size_t total_patches = fg_patches.size();
  ENDF_THROW_IF_NOT(total_patches >= 1, Errc::BadSpec, "plan_mask needs at least one patch");

  std::vector<std::size_t> fg_pool, bg_pool;
  for (std::size_t i = 0; i < total_patches; ++i) (fg_patches[i] ? fg_pool : bg_pool).push_back(i);
  const auto n_fg = static_cast<std::int64_t>(fg_pool.size());
  const auto n_bg = static_cast<std::int64_t>(bg_pool.size());
  const double r = static_cast<double>(n_fg) / static_cast<double>(total_patches);
  const auto total = static_cast<std::int64_t>(std::llround(cfg.ratio * static_cast<double>(total_patches)));

  std::int64_t take_fg = 0;
  if (n_fg > 0 && n_bg > 0) {
    take_fg = std::llround(masking_targets(r, cfg).fg_rate * static_cast<double>(n_fg));
  } else if (n_bg == 0) {
    take_fg = total;
  }
  std::int64_t take_bg = std::clamp<std::int64_t>(total - take_fg, 0, n_bg);
  take_fg = std::clamp<std::int64_t>(total - take_bg, 0, n_fg);

  // Rounding can leave the foreground rate above the background rate when the
  // slope saturates; shift masks to the background until p_b >= p_f.
  while (n_fg > 0 && n_bg > 0 && take_fg > 0 && take_bg < n_bg && take_fg * n_bg > take_bg * n_fg) {
    --take_fg;
    ++take_bg;
  }

  Rng rng(rng_seed);
  MaskPlan plan;
  plan.masked.assign(total_patches, false);
  plan.fg_patch = fg_patches;
  plan.overall_ratio = cfg.ratio;
  detail::mask_without_replacement(std::move(fg_pool), static_cast<std::size_t>(take_fg), rng, plan.masked);
  detail::mask_without_replacement(std::move(bg_pool), static_cast<std::size_t>(take_bg), rng, plan.masked);
  plan.fg_rate = n_fg > 0 ? static_cast<double>(take_fg) / static_cast<double>(n_fg) : 0.0;
  plan.bg_rate = n_bg > 0 ? static_cast<double>(take_bg) / static_cast<double>(n_bg) : 0.0;
  return plan;
}

}  // namespace endofinder
