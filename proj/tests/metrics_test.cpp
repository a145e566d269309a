#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "test_support.hpp"

namespace ef = endofinder;
using testutil::error_code_of;

namespace {

std::vector<ef::ScoredPair> ranked(const std::string& pattern) {
  // One pair per character, descending scores in pattern order.
  std::vector<ef::ScoredPair> out;
  for (std::size_t i = 0; i < pattern.size(); ++i)
    out.push_back({"q", testutil::record_id(i), static_cast<double>(pattern.size() - i), pattern[i] == '+'});
  return out;
}

std::vector<bool> oracle_ranking(std::vector<ef::ScoredPair> pairs) {
  std::vector<std::tuple<double, std::string, std::string, bool>> keyed;
  for (const auto& p : pairs) keyed.emplace_back(-p.score, p.ref_id, p.query_id, p.is_match);
  std::sort(keyed.begin(), keyed.end());
  std::vector<bool> out;
  for (const auto& k : keyed) out.push_back(std::get<3>(k));
  return out;
}

double ap_oracle(const std::vector<bool>& r) {
  const auto total = std::count(r.begin(), r.end(), true);
  double sum = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!r[i]) continue;
    const auto hits = std::count(r.begin(), r.begin() + static_cast<long>(i) + 1, true);
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(total);
}

// Exact integer comparison: precision >= 9/10.
double r90_oracle(const std::vector<bool>& r) {
  const auto total = std::count(r.begin(), r.end(), true);
  long best = 0;
  for (std::size_t len = 1; len <= r.size(); ++len) {
    const long hits = std::count(r.begin(), r.begin() + static_cast<long>(len), true);
    if (10 * hits >= 9 * static_cast<long>(len)) best = std::max(best, hits);
  }
  return static_cast<double>(best) / static_cast<double>(total);
}

// Each (query, ref) pair appears at most once, as in a real ranking.
std::vector<ef::ScoredPair> random_pairs(ef::Rng& rng) {
  std::vector<ef::ScoredPair> pairs;
  const double keep = rng.uniform(0.05, 0.8), p_match = rng.uniform(0.05, 0.95);
  for (int q = 0; q < 5; ++q)
    for (int r = 0; r < 20; ++r)
      if (rng.bernoulli(keep))
        pairs.push_back({"q" + std::to_string(q), "r" + std::to_string(r),
                         static_cast<double>(rng.below(6)) / 2.0,  // coarse scores force ties
                         rng.bernoulli(p_match)});
  if (pairs.empty()) pairs.push_back({"q0", "r0", 0.0, true});
  pairs[rng.below(pairs.size())].is_match = true;
  return pairs;
}

}  // namespace

TEST(MicroAp, WorkedExamples) {
  EXPECT_DOUBLE_EQ(ef::micro_ap(ranked("+++--")), 1.0);
  EXPECT_DOUBLE_EQ(ef::micro_ap(ranked("-+")), 0.5);
  EXPECT_DOUBLE_EQ(ef::micro_ap(ranked("+-+")), (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_NEAR(ef::micro_ap(ranked("+-+")), 0.8333, 1e-4);
  EXPECT_EQ(error_code_of([] { ef::micro_ap(ranked("---")); }), ef::Errc::NoPositives);
}

TEST(MicroAp, TiesBreakByRefId) {
  std::vector<ef::ScoredPair> pairs{{"q", "b", 1.0, true}, {"q", "a", 1.0, false}};
  EXPECT_DOUBLE_EQ(ef::micro_ap(pairs), 0.5);
  std::swap(pairs[0].ref_id, pairs[1].ref_id);
  EXPECT_DOUBLE_EQ(ef::micro_ap(pairs), 1.0);
}

TEST(RecallAtP90, WorkedExamples) {
  EXPECT_DOUBLE_EQ(ef::recall_at_p90(ranked("++++---")), 1.0);
  EXPECT_DOUBLE_EQ(ef::recall_at_p90(ranked("++----")), 1.0);
  EXPECT_DOUBLE_EQ(ef::recall_at_p90(ranked("+-+")), 0.5);
  EXPECT_DOUBLE_EQ(ef::recall_at_p90(ranked("-+")), 0.0);
  EXPECT_EQ(error_code_of([] { ef::recall_at_p90(ranked("-")); }), ef::Errc::NoPositives);
}

TEST(RecallAtP90, ExactNinetyPercentPrefixQualifies) {
  // 63 hits in a 70-long prefix is exactly 0.9 precision; the last hit lands at 64/76.
  std::string pattern(63, '+');
  pattern += std::string(12, '-');
  pattern += "+";
  EXPECT_DOUBLE_EQ(ef::recall_at_p90(ranked(pattern)), 63.0 / 64.0);
  EXPECT_DOUBLE_EQ(r90_oracle(oracle_ranking(ranked(pattern))), 63.0 / 64.0);
}

TEST(RankingMetrics, MatchBruteForceOnRandomCases) {
  ef::Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    auto pairs = random_pairs(rng);
    const auto order = oracle_ranking(pairs);
    const double ap = ap_oracle(order), r90 = r90_oracle(order);
    EXPECT_EQ(ef::micro_ap(pairs), ap) << t;
    EXPECT_EQ(ef::recall_at_p90(pairs), r90) << t;
    rng.shuffle(pairs);
    EXPECT_EQ(ef::micro_ap(pairs), ap);
    EXPECT_EQ(ef::recall_at_p90(pairs), r90);
  }
}

TEST(AccAt1, Examples) {
  std::vector<ef::QueryRanking> qs;
  for (int i = 0; i < 4; ++i) {
    const std::string id = "x" + std::to_string(i);
    qs.push_back({id + "#q", id + "#r", {{id + "#r", i < 2 ? 0.9 : 0.1}, {"other", 0.5}}});
  }
  EXPECT_DOUBLE_EQ(ef::acc_at_1(qs), 0.5);
  for (auto& q : qs) q.candidates[0].score = 1.0;
  EXPECT_DOUBLE_EQ(ef::acc_at_1(qs), 1.0);
  for (auto& q : qs) q.candidates[0].score = 0.0;
  EXPECT_DOUBLE_EQ(ef::acc_at_1(qs), 0.0);
}

TEST(AccAt1, SkipsSelfAndBreaksTiesById) {
  std::vector<ef::QueryRanking> qs{{"a", "b", {{"a", 1.0}, {"b", 0.7}, {"c", 0.7}}}};
  EXPECT_DOUBLE_EQ(ef::acc_at_1(qs), 1.0);
  qs[0].true_match = "c";
  EXPECT_DOUBLE_EQ(ef::acc_at_1(qs), 0.0);
}

TEST(ClassificationMetrics, WorkedExamples) {
  const std::vector<int> truth{1, 1, 1, 1, 0, 0, 0, 0}, pred{1, 1, 1, 0, 0, 0, 1, 1};
  const auto m = ef::classification_metrics(pred, truth, 1);
  EXPECT_EQ(m.tp, 3u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 2u);
  EXPECT_EQ(m.fp, 2u);
  EXPECT_DOUBLE_EQ(*m.sen, 0.75);
  EXPECT_DOUBLE_EQ(*m.spe, 0.5);
  EXPECT_DOUBLE_EQ(*m.acc, 0.625);
  EXPECT_NEAR(*m.f1, 0.6667, 1e-4);
  const auto perfect = ef::classification_metrics(truth, truth, 1);
  EXPECT_EQ(*perfect.acc, 1.0);
  EXPECT_EQ(*perfect.sen, 1.0);
  EXPECT_EQ(*perfect.spe, 1.0);
  EXPECT_EQ(*perfect.f1, 1.0);
  const std::vector<int> negatives{0, 0, 0};
  const auto none = ef::classification_metrics(negatives, negatives, 1);
  EXPECT_FALSE(none.sen.has_value());
  EXPECT_FALSE(none.f1.has_value());
  EXPECT_EQ(*none.spe, 1.0);
  EXPECT_EQ(error_code_of([&] { ef::classification_metrics(pred, negatives, 1); }), ef::Errc::LengthMismatch);
}

TEST(ClassificationMetrics, MatchFormulaOnRandomCases) {
  ef::Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto n = 1 + rng.below(50);
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(3));
      pred[i] = static_cast<int>(rng.below(3));
    }
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = pred[i] == 2, y = truth[i] == 2;
      tp += p && y;
      fp += p && !y;
      tn += !p && !y;
      fn += !p && y;
    }
    const auto m = ef::classification_metrics(pred, truth, 2);
    EXPECT_EQ(*m.acc, static_cast<double>(tp + tn) / static_cast<double>(n));
    EXPECT_EQ(m.sen.has_value(), tp + fn > 0);
    if (tp + fn > 0) {
      EXPECT_EQ(*m.sen, static_cast<double>(tp) / static_cast<double>(tp + fn));
    }
    EXPECT_EQ(m.spe.has_value(), tn + fp > 0);
    if (tn + fp > 0) {
      EXPECT_EQ(*m.spe, static_cast<double>(tn) / static_cast<double>(tn + fp));
    }
    EXPECT_EQ(m.f1.has_value(), 2 * tp + fp + fn > 0);
    if (m.f1) {
      EXPECT_EQ(*m.f1, static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn));
    }
  }
}

TEST(Kfold, SizesPartitionAndDeterminism) {
  const auto ten = ef::kfold(10, 5, 3);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(ten.members(f).size(), 2u);
  const auto eleven = ef::kfold(11, 5, 3);
  std::multiset<std::size_t> sizes;
  for (std::size_t f = 0; f < 5; ++f) sizes.insert(eleven.members(f).size());
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{2, 2, 2, 2, 3}));
  EXPECT_EQ(ef::kfold(11, 5, 3).assignment, eleven.assignment);
  EXPECT_NE(ef::kfold(150, 5, 4).assignment, ef::kfold(150, 5, 3).assignment);

  const auto plan = ef::kfold(150, 5, 9);
  std::vector<int> hit(150, 0);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto m = plan.members(f), c = plan.complement(f);
    EXPECT_EQ(m.size() + c.size(), 150u);
    for (auto i : m) ++hit[i];
    std::vector<std::size_t> merged(m);
    merged.insert(merged.end(), c.begin(), c.end());
    std::sort(merged.begin(), merged.end());
    for (std::size_t i = 0; i < 150; ++i) EXPECT_EQ(merged[i], i);
  }
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_EQ(error_code_of([] { ef::kfold(4, 5, 0); }), ef::Errc::TooFewItems);
  EXPECT_EQ(error_code_of([] { ef::kfold(4, 0, 0); }), ef::Errc::BadConfig);
}
