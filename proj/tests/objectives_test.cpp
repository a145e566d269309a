#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_support.hpp"

namespace ef = endofinder;
using testutil::error_code_of;

namespace {

struct ReconBatch {
  std::vector<ef::PatchPixels> recon, orig;
  std::vector<ef::MaskPlan> plans;
};

ReconBatch random_recon(ef::Rng& rng, std::size_t images, std::size_t patches, std::size_t q) {
  ReconBatch b;
  for (std::size_t i = 0; i < images; ++i) {
    ef::PatchPixels r(patches * q), o(patches * q);
    for (auto& x : r) x = rng.normal();
    for (auto& x : o) x = rng.normal();
    ef::MaskPlan plan = ef::MaskPlan::none(patches);
    for (std::size_t p = 0; p < patches; ++p) plan.masked[p] = rng.bernoulli(0.5);
    plan.masked[rng.below(patches)] = true;
    b.recon.push_back(r);
    b.orig.push_back(o);
    b.plans.push_back(plan);
  }
  return b;
}

std::vector<std::vector<double>> random_z(ef::Rng& rng, std::size_t m, std::size_t d) {
  std::vector<std::vector<double>> z;
  for (std::size_t i = 0; i < m; ++i) {
    const auto u = testutil::random_unit(rng, d);
    z.emplace_back(u.values().begin(), u.values().end());
  }
  return z;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nb)), 1e-12);
  return std::sqrt(diff) / denom;
}

std::vector<double> flatten(const std::vector<std::vector<double>>& v) {
  std::vector<double> out;
  for (const auto& x : v) out.insert(out.end(), x.begin(), x.end());
  return out;
}

constexpr double kH = 1e-4;

}  // namespace

TEST(MaeLoss, WorkedExample) {
  // Two images of two 1-pixel patches; one masked each, errors 1 and 3.
  std::vector<ef::PatchPixels> recon = {{1.0, 50.0}, {0.0, 3.0}}, orig = {{0.0, 0.0}, {0.0, 0.0}};
  std::vector<ef::MaskPlan> plans(2, ef::MaskPlan::none(2));
  plans[0].masked[0] = true;
  plans[1].masked[1] = true;
  EXPECT_DOUBLE_EQ(ef::mae_loss(recon, orig, plans), 5.0);
}

TEST(MaeLoss, PerfectReconstructionAndMaskedOnly) {
  ef::Rng rng(1);
  auto b = random_recon(rng, 4, 6, 5);
  EXPECT_EQ(ef::mae_loss(b.orig, b.orig, b.plans), 0.0);
  const double base = ef::mae_loss(b.recon, b.orig, b.plans);
  EXPECT_GT(base, 0.0);
  auto doubled = b.recon;
  for (std::size_t i = 0; i < doubled.size(); ++i)
    for (std::size_t p = 0; p < 6; ++p)
      if (!b.plans[i].masked[p])
        for (std::size_t k = p * 5; k < (p + 1) * 5; ++k) doubled[i][k] = 2 * doubled[i][k] - b.orig[i][k];
  EXPECT_DOUBLE_EQ(ef::mae_loss(doubled, b.orig, b.plans), base);
}

TEST(MaeLoss, EmptyMaskRejected) {
  std::vector<ef::PatchPixels> r = {{1.0}}, o = {{0.0}};
  std::vector<ef::MaskPlan> plans = {ef::MaskPlan::none(1)};
  EXPECT_EQ(error_code_of([&] { ef::mae_loss(r, o, plans); }), ef::Errc::EmptyMask);
}

TEST(ContrastiveLoss, WorkedExampleInfoNce) {
  const std::vector<std::vector<double>> z = {{1, 0}, {0, 1}, {1, 0}, {0, 1}};
  ef::LossConfig cfg;
  cfg.temperature = 1.0;
  cfg.entropy_weight = 0.0;
  const auto parts = ef::contrastive_loss(z, ef::BatchPairing{2}, cfg);
  EXPECT_NEAR(parts.info_nce, -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)), 1e-12);
  EXPECT_NEAR(parts.info_nce, 0.5514, 1e-4);
  EXPECT_EQ(parts.entropy, 0.0);
}

TEST(ContrastiveLoss, WorkedExampleEntropy) {
  const std::vector<std::vector<double>> z = {{1, 0}, {0, 1}, {1, 0}, {0, 1}};
  ef::LossConfig cfg;
  cfg.temperature = 1.0;
  cfg.entropy_weight = 1.0;
  const auto parts = ef::contrastive_loss(z, ef::BatchPairing{2}, cfg);
  EXPECT_NEAR(parts.entropy, -std::log(std::sqrt(2.0)), 1e-12);
  EXPECT_NEAR(parts.entropy, -0.3466, 1e-4);
}

TEST(ContrastiveLoss, BruteForceOracle) {
  ef::Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(5), d = 3 + rng.below(10);
    const auto z = random_z(rng, 2 * n, d);
    ef::LossConfig cfg;
    cfg.temperature = rng.uniform(0.05, 1.0);
    cfg.entropy_weight = rng.uniform(0.0, 2.0);
    cfg.entropy_over_all_views = t % 2;
    const auto parts = ef::contrastive_loss(z, ef::BatchPairing{n}, cfg);

    auto cosine = [&](std::size_t a, std::size_t b) {
      double s = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < d; ++k) s += z[a][k] * z[b][k], na += z[a][k] * z[a][k], nb += z[b][k] * z[b][k];
      return s / std::sqrt(na * nb);
    };
    double nce = 0.0;
    for (std::size_t i = 0; i < 2 * n; ++i) {
      const std::size_t j = (i + n) % (2 * n);
      double denom = 0.0;
      for (std::size_t v = 0; v < 2 * n; ++v)
        if (v != i) denom += std::exp(cosine(i, v) / cfg.temperature);
      nce -= std::log(std::exp(cosine(i, j) / cfg.temperature) / denom);
    }
    nce /= double(2 * n);
    const std::size_t anchors = cfg.entropy_over_all_views ? 2 * n : n;
    double ent = 0.0;
    for (std::size_t i = 0; i < anchors; ++i) {
      double best = 1e300;
      for (std::size_t j = 0; j < 2 * n; ++j) {
        if (j == i || j == (i + n) % (2 * n)) continue;
        double dd = 0;
        for (std::size_t k = 0; k < d; ++k) dd += (z[i][k] - z[j][k]) * (z[i][k] - z[j][k]);
        best = std::min(best, std::sqrt(dd));
      }
      ent -= std::log(std::max(best, cfg.entropy_floor));
    }
    ent = cfg.entropy_weight * ent / double(anchors);
    EXPECT_NEAR(parts.info_nce, nce, 1e-9 * std::max(1.0, std::abs(nce)));
    EXPECT_NEAR(parts.entropy, ent, 1e-9 * std::max(1.0, std::abs(ent)));
  }
}

TEST(ContrastiveLoss, PermutingOriginalsLeavesLossUnchanged) {
  ef::Rng rng(5);
  const std::size_t n = 5;
  const auto z = random_z(rng, 2 * n, 8);
  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<std::vector<double>> zp(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    zp[i] = z[perm[i]];
    zp[i + n] = z[perm[i] + n];
  }
  ef::LossConfig cfg;
  cfg.entropy_over_all_views = true;  // the first-view-only sum is also permutation invariant
  EXPECT_NEAR(ef::contrastive_loss(z, {n}, cfg).total(), ef::contrastive_loss(zp, {n}, cfg).total(), 1e-12);
  cfg.entropy_over_all_views = false;
  EXPECT_NEAR(ef::contrastive_loss(z, {n}, cfg).total(), ef::contrastive_loss(zp, {n}, cfg).total(), 1e-12);
}

TEST(ContrastiveLoss, NotNormalizedRejected) {
  const std::vector<std::vector<double>> z = {{1, 0}, {0, 1}, {1, 0}, {0, 1.01}};
  EXPECT_EQ(error_code_of([&] { ef::contrastive_loss(z, ef::BatchPairing{2}, {}); }), ef::Errc::NotNormalized);
}

TEST(ContrastiveLoss, DuplicateEmbeddingsHitTheFloor) {
  const std::vector<std::vector<double>> z = {{1, 0}, {1, 0}, {1, 0}, {1, 0}};
  ef::LossConfig cfg;
  const auto parts = ef::contrastive_loss(z, ef::BatchPairing{2}, cfg);
  EXPECT_TRUE(std::isfinite(parts.entropy));
  EXPECT_NEAR(parts.entropy, -std::log(cfg.entropy_floor), 1e-9);
}

TEST(ContrastiveLoss, InfoNceFallsWhenPositiveMovesCloser) {
  ef::LossConfig cfg;
  cfg.entropy_weight = 0.0;
  cfg.temperature = 0.5;
  // Only s(0,2) (and its mirror) changes with c; every other similarity is fixed.
  auto loss_at = [&](double c) {
    const double s = std::sqrt(1 - c * c);
    const std::vector<std::vector<double>> z = {{1, 0, 0}, {0, 0, 1}, {c, s, 0}, {0, 0, -1}};
    return ef::contrastive_loss(z, {2}, cfg);
  };
  EXPECT_LT(loss_at(0.9).info_nce, loss_at(0.5).info_nce);
}

TEST(ContrastiveLoss, EntropyFallsAsNearestNegativeRecedes) {
  ef::LossConfig cfg;
  cfg.entropy_weight = 1.0;
  auto ent_at = [&](double angle) {
    const std::vector<std::vector<double>> z = {
        {1, 0, 0}, {std::cos(angle), std::sin(angle), 0}, {1, 0, 0}, {std::cos(angle), std::sin(angle), 0}};
    return ef::contrastive_loss(z, {2}, cfg).entropy;
  };
  EXPECT_GT(ent_at(0.2), ent_at(0.4));
  EXPECT_GT(ent_at(0.4), ent_at(1.0));
}

TEST(CombinedLoss, WeightsAndParts) {
  ef::Rng rng(9);
  auto b = random_recon(rng, 4, 5, 3);
  const auto z = random_z(rng, 4, 6);
  ef::LossConfig cfg;
  cfg.recon_weight = 0.0;
  const auto l0 = ef::combined_loss(b.recon, b.orig, b.plans, z, {2}, cfg);
  EXPECT_EQ(l0.total, l0.contrastive);
  cfg.recon_weight = 1.0;
  const auto l1 = ef::combined_loss(b.recon, b.orig, b.plans, z, {2}, cfg);
  cfg.recon_weight = 2.0;
  const auto l2 = ef::combined_loss(b.recon, b.orig, b.plans, z, {2}, cfg);
  EXPECT_NEAR(l2.total - l1.total, l1.reconstruction, 1e-12);
  EXPECT_EQ(l1.reconstruction, ef::mae_loss(b.recon, b.orig, b.plans));
  EXPECT_EQ(l1.contrastive, ef::contrastive_loss(z, {2}, cfg).total());
}

TEST(LossGradients, MaeClosedForm) {
  ef::Rng rng(10);
  auto b = random_recon(rng, 6, 4, 3);
  const auto z = random_z(rng, 6, 4);
  ef::LossConfig cfg;
  const auto g = ef::loss_gradients(b.recon, b.orig, b.plans, z, {3}, cfg);
  const double n = 3.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double m = double(b.plans[i].num_masked() * 3);
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t k = p * 3; k < p * 3 + 3; ++k) {
        if (b.plans[i].masked[p])
          EXPECT_NEAR(g.d_recon[i][k], (b.recon[i][k] - b.orig[i][k]) / (n * m), 1e-12);
        else
          EXPECT_EQ(g.d_recon[i][k], 0.0);
      }
  }
}

TEST(LossGradients, EntropyGradientOnlyOnArgminNeighbours) {
  ef::Rng rng(11);
  const std::size_t n = 4;
  const auto z = random_z(rng, 2 * n, 6);
  std::vector<ef::PatchPixels> r = {{0.0}}, o = {{0.0}};
  ef::LossConfig a, b;
  a.entropy_weight = 0.0;
  b.entropy_weight = 1.0;
  std::vector<ef::PatchPixels> rr(2 * n, {1.0}), oo(2 * n, {0.0});
  std::vector<ef::MaskPlan> plans(2 * n, ef::MaskPlan::none(1));
  for (auto& p : plans) p.masked[0] = true;
  const auto ga = ef::loss_gradients(rr, oo, plans, z, {n}, a);
  const auto gb = ef::loss_gradients(rr, oo, plans, z, {n}, b);
  // Indices touched by the entropy term: anchors 0..n-1 and their nearest negatives.
  std::vector<bool> touched(2 * n, false);
  for (std::size_t i = 0; i < n; ++i) {
    touched[i] = true;
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < 2 * n; ++j) {
      if (j == i || j == i + n) continue;
      double dd = 0;
      for (std::size_t k = 0; k < 6; ++k) dd += (z[i][k] - z[j][k]) * (z[i][k] - z[j][k]);
      if (dd < best) best = dd, arg = j;
    }
    touched[arg] = true;
  }
  for (std::size_t j = 0; j < 2 * n; ++j) {
    if (touched[j]) continue;
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(ga.d_z[j][k], gb.d_z[j][k]) << j;
  }
}

// Finite differences with h = 1e-4 (central) on 50 random batches per loss.
TEST(LossGradients, FiniteDifferenceReconstruction) {
  ef::Rng rng(21);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng.below(3);
    auto b = random_recon(rng, 2 * n, 2 + rng.below(4), 1 + rng.below(5));
    const auto z = random_z(rng, 2 * n, 4);
    ef::LossConfig cfg;
    cfg.recon_weight = rng.uniform(0.1, 2.0);
    const auto g = ef::loss_gradients(b.recon, b.orig, b.plans, z, {n}, cfg);
    std::vector<double> fd;
    for (std::size_t i = 0; i < b.recon.size(); ++i)
      for (std::size_t k = 0; k < b.recon[i].size(); ++k) {
        const double x = b.recon[i][k];
        b.recon[i][k] = x + kH;
        const double up = ef::combined_loss(b.recon, b.orig, b.plans, z, {n}, cfg).total;
        b.recon[i][k] = x - kH;
        const double dn = ef::combined_loss(b.recon, b.orig, b.plans, z, {n}, cfg).total;
        b.recon[i][k] = x;
        fd.push_back((up - dn) / (2 * kH));
      }
    worst = std::max(worst, rel_err(flatten(g.d_recon), fd));
  }
  EXPECT_LT(worst, 1e-4);
}

namespace {
// Smallest gap between the nearest and second-nearest negative over all views.
// Central differences straddle the arg-min switch when this is below the step.
double nearest_negative_gap(const std::vector<std::vector<double>>& z, std::size_t n) {
  const ef::BatchPairing pairing{n};
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < z.size(); ++i) {
    double first = std::numeric_limits<double>::infinity(), second = first;
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (pairing.in_closed_positive_set(i, j)) continue;
      double sq = 0.0;
      for (std::size_t k = 0; k < z[i].size(); ++k) sq += (z[i][k] - z[j][k]) * (z[i][k] - z[j][k]);
      const double dist = std::sqrt(sq);
      if (dist < first) {
        second = first;
        first = dist;
      } else if (dist < second) {
        second = dist;
      }
    }
    gap = std::min(gap, second - first);
  }
  return gap;
}

double contrastive_fd_worst(bool entropy, bool all_views, std::uint64_t seed) {
  ef::Rng rng(seed);
  double worst = 0.0;
  int checked = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(4), d = 8 + rng.below(9);
    auto z = random_z(rng, 2 * n, d);
    std::vector<ef::PatchPixels> rr(2 * n, {1.0}), oo(2 * n, {0.0});
    std::vector<ef::MaskPlan> plans(2 * n, ef::MaskPlan::none(1));
    for (auto& p : plans) p.masked[0] = true;
    ef::LossConfig cfg;
    cfg.temperature = rng.uniform(0.05, 0.5);
    cfg.entropy_weight = entropy ? rng.uniform(0.5, 2.0) : 0.0;
    cfg.entropy_over_all_views = all_views;
    if (entropy && nearest_negative_gap(z, n) < 10 * kH) continue;
    ++checked;
    const auto g = ef::loss_gradients(rr, oo, plans, z, {n}, cfg);
    std::vector<double> fd;
    for (std::size_t i = 0; i < z.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) {
        const double x = z[i][k];
        z[i][k] = x + kH;
        const double up = ef::combined_loss(rr, oo, plans, z, {n}, cfg).total;
        z[i][k] = x - kH;
        const double dn = ef::combined_loss(rr, oo, plans, z, {n}, cfg).total;
        z[i][k] = x;
        fd.push_back((up - dn) / (2 * kH));
      }
    worst = std::max(worst, rel_err(flatten(g.d_z), fd));
  }
  EXPECT_GE(checked, 45);
  return worst;
}
}  // namespace

TEST(LossGradients, FiniteDifferenceInfoNce) { EXPECT_LT(contrastive_fd_worst(false, false, 31), 1e-4); }
TEST(LossGradients, FiniteDifferenceInfoNcePlusEntropy) { EXPECT_LT(contrastive_fd_worst(true, false, 32), 1e-4); }
TEST(LossGradients, FiniteDifferenceEntropyOverAllViews) { EXPECT_LT(contrastive_fd_worst(true, true, 33), 1e-4); }
