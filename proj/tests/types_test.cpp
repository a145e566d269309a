#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace ef = endofinder;
using testutil::error_code_of;

TEST(L2Normalize, ThreeFourFive) {
  const auto z = ef::l2_normalize({3.0, 4.0});
  ASSERT_EQ(z.dim(), 2u);
  EXPECT_DOUBLE_EQ(z[0], 0.6);
  EXPECT_DOUBLE_EQ(z[1], 0.8);
}

TEST(L2Normalize, UnitVectorUnchanged) {
  const auto z = ef::l2_normalize({1.0, 0.0, 0.0});
  EXPECT_EQ(z[0], 1.0);
  EXPECT_EQ(z[1], 0.0);
  EXPECT_EQ(z[2], 0.0);
}

TEST(L2Normalize, ZeroVectorRejected) {
  EXPECT_EQ(error_code_of([] { ef::l2_normalize({0.0, 0.0}); }), ef::Errc::ZeroVector);
  EXPECT_EQ(error_code_of([] { ef::l2_normalize({1e-13, 0.0}); }), ef::Errc::ZeroVector);
}

TEST(L2Normalize, IdempotentAndUnitNorm) {
  ef::Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const auto v = testutil::random_vector(rng, 1 + rng.below(300));
    const auto a = ef::l2_normalize(v);
    const auto b = ef::l2_normalize(a.values());
    double ss = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-9);
      ss += a[i] * a[i];
    }
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-6);
  }
}

TEST(EmbeddingVector, FromNormalizedChecksNorm) {
  EXPECT_NO_THROW(ef::EmbeddingVector::from_normalized({0.6, 0.8}));
  EXPECT_EQ(error_code_of([] { ef::EmbeddingVector::from_normalized({0.6, 0.9}); }), ef::Errc::NotNormalized);
}

TEST(CosineSimilarity, WorkedExamples) {
  EXPECT_DOUBLE_EQ(ef::cosine_similarity(ef::l2_normalize({1, 0}), ef::l2_normalize({1, 0})), 1.0);
  EXPECT_DOUBLE_EQ(ef::cosine_similarity(ef::l2_normalize({1, 0}), ef::l2_normalize({0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(ef::cosine_similarity(ef::l2_normalize({1, 0}), ef::l2_normalize({-1, 0})), -1.0);
}

TEST(CosineSimilarity, DimMismatch) {
  EXPECT_EQ(error_code_of([] { ef::cosine_similarity(ef::l2_normalize({1, 0}), ef::l2_normalize({1, 0, 0})); }),
            ef::Errc::DimMismatch);
}

TEST(CosineSimilarity, SymmetricAndMatchesChordDistance) {
  ef::Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = 2 + rng.below(64);
    const auto a = testutil::random_unit(rng, d), b = testutil::random_unit(rng, d);
    const double s = ef::cosine_similarity(a, b);
    EXPECT_EQ(s, ef::cosine_similarity(b, a));
    double dist2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) dist2 += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_NEAR(s, 1.0 - 0.5 * dist2, 1e-9);
    EXPECT_LE(s, 1.0);
    EXPECT_GE(s, -1.0);
  }
}

TEST(HashCode, MsbFirstPacking) {
  ef::HashCode h(10);
  h.set_bit(0, true);
  h.set_bit(7, true);
  h.set_bit(8, true);
  ASSERT_EQ(h.bytes().size(), 2u);
  EXPECT_EQ(h.bytes()[0], 0x81);
  EXPECT_EQ(h.bytes()[1], 0x80);
  EXPECT_EQ(h.to_hex(), "8180");
}

TEST(HashCode, HexRoundTripAndPadBits) {
  ef::Rng rng(3);
  for (std::size_t bits : {1u, 7u, 8u, 9u, 63u, 64u, 65u, 256u}) {
    const auto h = testutil::random_code(rng, bits);
    const auto back = ef::HashCode::from_hex(h.to_hex(), bits);
    EXPECT_EQ(back, h);
    for (std::size_t k = 0; k < bits; ++k) EXPECT_EQ(back.bit(k), h.bit(k));
    if (bits % 8) {
      EXPECT_EQ(h.bytes().back() & (0xFF >> (bits % 8)), 0);
    }
    const auto inv = ~h;
    for (std::size_t k = 0; k < bits; ++k) EXPECT_NE(inv.bit(k), h.bit(k));
    if (bits % 8) {
      EXPECT_EQ(inv.bytes().back() & (0xFF >> (bits % 8)), 0);
    }
  }
}

TEST(HashCode, RejectsSetPadBits) {
  EXPECT_EQ(error_code_of([] { ef::HashCode::from_bytes(9, {0xFF, 0xFF}); }), ef::Errc::CorruptFile);
  EXPECT_EQ(error_code_of([] { ef::HashCode::from_bytes(9, {0xFF}); }), ef::Errc::DimMismatch);
}

TEST(Quantize, SignRuleZeroMapsToOne) {
  const auto h = ef::quantize({0.5, -0.25, 0.0, -0.0, -1e-9});
  EXPECT_TRUE(h.bit(0));
  EXPECT_FALSE(h.bit(1));
  EXPECT_TRUE(h.bit(2));
  EXPECT_TRUE(h.bit(3));
  EXPECT_FALSE(h.bit(4));
  EXPECT_EQ(h.bits(), 5u);
}

TEST(Hamming, PopcountMatchesBitwiseOracle) {
  ef::Rng rng(8);
  for (int t = 0; t < 300; ++t) {
    const std::size_t bits = 1 + rng.below(300);
    const auto a = testutil::random_code(rng, bits), b = testutil::random_code(rng, bits);
    std::uint32_t expect = 0;
    for (std::size_t k = 0; k < bits; ++k) expect += a.bit(k) != b.bit(k);
    EXPECT_EQ(ef::hamming(a, b), expect);
    EXPECT_EQ(ef::hamming(a, ~a), bits);
    EXPECT_EQ(ef::hamming(a, a), 0u);
  }
  EXPECT_EQ(error_code_of([] { ef::hamming(ef::HashCode(8), ef::HashCode(9)); }), ef::Errc::DimMismatch);
}

TEST(NeighborOrder, DistanceThenId) {
  std::vector<ef::Neighbor> v = {{"b", 1, 2.0}, {"a", 1, 2.0}, {"c", 2, 1.0}};
  std::sort(v.begin(), v.end(), ef::neighbor_less);
  EXPECT_EQ(v[0].id, "c");
  EXPECT_EQ(v[1].id, "a");
  EXPECT_EQ(v[2].id, "b");
}

TEST(ErrorNames, AreStable) {
  EXPECT_EQ(ef::errc_name(ef::Errc::ZeroVector), "ZeroVector");
  EXPECT_EQ(ef::errc_name(ef::Errc::CorruptFile), "CorruptFile");
  EXPECT_EQ(ef::errc_name(ef::Errc::KTooLarge), "KTooLarge");
}
