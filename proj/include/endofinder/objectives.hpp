#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "endofinder/masking.hpp"
#include "endofinder/types.hpp"

namespace endofinder {

struct LossConfig {
  double temperature = 0.05;   // tau
  double entropy_weight = 1.0; // gamma
  double recon_weight = 1.0;   // lambda
  double entropy_floor = 1e-6; // minimum distance inside the log
  // Entropy term averaged over the first views only (indices [0, N)), as the
  // loss is usually written. Set to true to average over all 2N anchors.
  bool entropy_over_all_views = false;
};

inline void validate(const LossConfig& c) {
  ENDF_THROW_IF_NOT(c.temperature > 0.0, Errc::BadConfig, "temperature must be > 0");
  ENDF_THROW_IF_NOT(c.entropy_weight >= 0.0, Errc::BadConfig, "entropy_weight must be >= 0");
  ENDF_THROW_IF_NOT(c.recon_weight >= 0.0, Errc::BadConfig, "recon_weight must be >= 0");
  ENDF_THROW_IF_NOT(c.entropy_floor > 0.0, Errc::BadConfig, "entropy_floor must be > 0");
}

/// 2N embeddings where view 2 of original i sits at i + N.
struct BatchPairing {
  std::size_t n = 0;

  std::size_t size() const { return 2 * n; }
  std::size_t positive(std::size_t i) const { return i < n ? i + n : i - n; }
  bool in_closed_positive_set(std::size_t i, std::size_t j) const { return j == i || j == positive(i); }
};

// Reconstructions and originals are patch-major: image i is a P x Q row-major
// block where plans[i].masked[p] covers pixels [p*Q, (p+1)*Q).
using PatchPixels = std::vector<double>;

struct ContrastiveParts {
  double info_nce = 0.0;
  double entropy = 0.0;  // already multiplied by gamma
  double total() const { return info_nce + entropy; }
};

struct LossParts {
  double total = 0.0;
  double contrastive = 0.0;
  double reconstruction = 0.0;
  ContrastiveParts contrastive_parts;
};

struct LossGradients {
  std::vector<PatchPixels> d_recon;
  std::vector<std::vector<double>> d_z;
};

namespace detail {

inline std::size_t masked_pixel_count(const MaskPlan& plan, std::size_t patch_pixels) {
  return plan.num_masked() * patch_pixels;
}

inline void check_recon_inputs(std::span<const PatchPixels> recon, std::span<const PatchPixels> orig,
                               std::span<const MaskPlan> plans) {
  ENDF_THROW_IF_NOT(recon.size() == orig.size() && recon.size() == plans.size() && !recon.empty(),
                    Errc::DimMismatch, "reconstruction batch sizes differ");
  for (std::size_t i = 0; i < recon.size(); ++i) {
    ENDF_THROW_IF_NOT(recon[i].size() == orig[i].size(), Errc::DimMismatch, "reconstruction shape mismatch");
    const std::size_t p = plans[i].num_patches();
    ENDF_THROW_IF_NOT(p > 0 && recon[i].size() % p == 0, Errc::DimMismatch, "pixels not divisible by patch count");
    ENDF_THROW_IF_NOT(plans[i].num_masked() > 0, Errc::EmptyMask,
                      "image " + std::to_string(i) + " has no masked patches");
  }
}

inline void check_embeddings(std::span<const std::vector<double>> z, const BatchPairing& pairing) {
  ENDF_THROW_IF_NOT(pairing.n >= 1 && z.size() == pairing.size(), Errc::DimMismatch,
                    "contrastive batch must hold 2N embeddings");
  const std::size_t d = z[0].size();
  for (const auto& v : z) {
    ENDF_THROW_IF_NOT(v.size() == d, Errc::DimMismatch, "embedding dims differ within batch");
    double ss = 0.0;
    for (double x : v) ss += x * x;
    ENDF_THROW_IF_NOT(std::abs(std::sqrt(ss) - 1.0) <= kUnitNormTol, Errc::NotNormalized,
                      "embedding norm " + std::to_string(std::sqrt(ss)));
  }
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double ss = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) ss += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(ss);
}

// Nearest index outside {i, positive(i)}; ties go to the lowest index.
inline std::size_t nearest_negative(std::span<const std::vector<double>> z, const BatchPairing& pairing,
                                    std::size_t i, double& dist) {
  std::size_t best = i;
  dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (pairing.in_closed_positive_set(i, j)) continue;
    const double dj = distance(z[i], z[j]);
    if (dj < dist) {
      dist = dj;
      best = j;
    }
  }
  return best;
}

inline std::size_t entropy_anchor_count(const LossConfig& cfg, const BatchPairing& pairing) {
  return cfg.entropy_over_all_views ? pairing.size() : pairing.n;
}

inline std::vector<std::vector<double>> unwrap(std::span<const EmbeddingVector> z) {
  std::vector<std::vector<double>> out;
  out.reserve(z.size());
  for (const auto& e : z) out.emplace_back(e.values().begin(), e.values().end());
  return out;
}

}  // namespace detail

/// Mean over images of the squared error averaged over each image's masked pixels.
inline double mae_loss(std::span<const PatchPixels> recon, std::span<const PatchPixels> orig,
                       std::span<const MaskPlan> plans) {
  detail::check_recon_inputs(recon, orig, plans);
  double total = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const std::size_t q = recon[i].size() / plans[i].num_patches();
    double sse = 0.0;
    for (std::size_t p = 0; p < plans[i].num_patches(); ++p) {
      if (!plans[i].masked[p]) continue;
      for (std::size_t k = p * q; k < (p + 1) * q; ++k) sse += (recon[i][k] - orig[i][k]) * (recon[i][k] - orig[i][k]);
    }
    total += sse / static_cast<double>(detail::masked_pixel_count(plans[i], q));
  }
  return total / static_cast<double>(recon.size());
}

/// InfoNCE over the positive pairs plus gamma times the nearest-negative
/// entropy regulariser. Similarities are z_i . z_j / tau (cosine for unit
/// vectors), with max-subtraction inside the log-sum-exp.
inline ContrastiveParts contrastive_loss(std::span<const std::vector<double>> z, const BatchPairing& pairing,
                                         const LossConfig& cfg) {
  validate(cfg);
  detail::check_embeddings(z, pairing);
  const std::size_t m = pairing.size();
  ContrastiveParts parts;
  std::vector<double> row(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < m; ++v) {
      if (v == i) continue;
      row[v] = dot(z[i], z[v]) / cfg.temperature;
      mx = std::max(mx, row[v]);
    }
    double se = 0.0;
    for (std::size_t v = 0; v < m; ++v)
      if (v != i) se += std::exp(row[v] - mx);
    parts.info_nce += -(row[pairing.positive(i)] - mx - std::log(se));
  }
  parts.info_nce /= static_cast<double>(m);

  if (cfg.entropy_weight > 0.0 && m > 2) {
    const std::size_t anchors = detail::entropy_anchor_count(cfg, pairing);
    double acc = 0.0;
    for (std::size_t i = 0; i < anchors; ++i) {
      double d = 0.0;
      detail::nearest_negative(z, pairing, i, d);
      acc += -std::log(std::max(cfg.entropy_floor, d));
    }
    parts.entropy = cfg.entropy_weight * acc / static_cast<double>(anchors);
  }
  return parts;
}

inline ContrastiveParts contrastive_loss(std::span<const EmbeddingVector> z, const BatchPairing& pairing,
                                         const LossConfig& cfg) {
  const auto raw = detail::unwrap(z);
  return contrastive_loss(std::span<const std::vector<double>>(raw), pairing, cfg);
}

/// L = L_con + lambda * L_mae.
inline LossParts combined_loss(std::span<const PatchPixels> recon, std::span<const PatchPixels> orig,
                               std::span<const MaskPlan> plans, std::span<const std::vector<double>> z,
                               const BatchPairing& pairing, const LossConfig& cfg) {
  LossParts out;
  out.contrastive_parts = contrastive_loss(z, pairing, cfg);
  out.contrastive = out.contrastive_parts.total();
  out.reconstruction = mae_loss(recon, orig, plans);
  out.total = out.contrastive + cfg.recon_weight * out.reconstruction;
  return out;
}

/// Analytic gradients of combined_loss with respect to every reconstructed
/// pixel and every embedding coordinate (z treated as free coordinates).
inline LossGradients loss_gradients(std::span<const PatchPixels> recon, std::span<const PatchPixels> orig,
                                    std::span<const MaskPlan> plans, std::span<const std::vector<double>> z,
                                    const BatchPairing& pairing, const LossConfig& cfg) {
  validate(cfg);
  detail::check_recon_inputs(recon, orig, plans);
  detail::check_embeddings(z, pairing);
  LossGradients g;

  // Reconstruction: d/dI_hat = 2 (I_hat - I) / (B |M_i|) on masked pixels.
  const double b = static_cast<double>(recon.size());
  g.d_recon.resize(recon.size());
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const std::size_t q = recon[i].size() / plans[i].num_patches();
    const double scale = cfg.recon_weight * 2.0 / (b * static_cast<double>(detail::masked_pixel_count(plans[i], q)));
    g.d_recon[i].assign(recon[i].size(), 0.0);
    for (std::size_t p = 0; p < plans[i].num_patches(); ++p) {
      if (!plans[i].masked[p]) continue;
      for (std::size_t k = p * q; k < (p + 1) * q; ++k) g.d_recon[i][k] = scale * (recon[i][k] - orig[i][k]);
    }
  }

  const std::size_t m = pairing.size();
  const std::size_t d = z[0].size();
  g.d_z.assign(m, std::vector<double>(d, 0.0));

  // InfoNCE: A[i][v] = (softmax_iv - [v == pos(i)]) / 2N, then
  // dL/dz_i = sum_v (A[i][v] + A[v][i]) z_v / tau.
  std::vector<std::vector<double>> coef(m, std::vector<double>(m, 0.0));
  std::vector<double> row(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < m; ++v) {
      if (v == i) continue;
      row[v] = dot(z[i], z[v]) / cfg.temperature;
      mx = std::max(mx, row[v]);
    }
    double se = 0.0;
    for (std::size_t v = 0; v < m; ++v)
      if (v != i) se += std::exp(row[v] - mx);
    for (std::size_t v = 0; v < m; ++v) {
      if (v == i) continue;
      coef[i][v] = (std::exp(row[v] - mx) / se - (v == pairing.positive(i) ? 1.0 : 0.0)) / static_cast<double>(m);
    }
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t v = 0; v < m; ++v) {
      const double c = (coef[i][v] + coef[v][i]) / cfg.temperature;
      if (c == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) g.d_z[i][k] += c * z[v][k];
    }

  // Entropy: -gamma/A * log(dist) moves only the anchor and its arg-min neighbour.
  if (cfg.entropy_weight > 0.0 && m > 2) {
    const std::size_t anchors = detail::entropy_anchor_count(cfg, pairing);
    for (std::size_t i = 0; i < anchors; ++i) {
      double dist = 0.0;
      const std::size_t j = detail::nearest_negative(z, pairing, i, dist);
      if (dist <= cfg.entropy_floor) continue;
      const double c = -cfg.entropy_weight / static_cast<double>(anchors) / (dist * dist);
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = z[i][k] - z[j][k];
        g.d_z[i][k] += c * diff;
        g.d_z[j][k] -= c * diff;
      }
    }
  }
  return g;
}

}  // namespace endofinder
