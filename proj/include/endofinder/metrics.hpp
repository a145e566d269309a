#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "endofinder/error.hpp"
#include "endofinder/rng.hpp"

namespace endofinder {

/// One (query, reference) comparison; higher score = more similar.
struct ScoredPair {
  std::string query_id;
  std::string ref_id;
  double score = 0.0;
  bool is_match = false;
};

namespace detail {

// Global ranking: descending score, then ascending ref_id, then ascending
// query_id so the order is total.
inline std::vector<const ScoredPair*> rank_pairs(std::span<const ScoredPair> pairs) {
  std::vector<const ScoredPair*> order;
  order.reserve(pairs.size());
  for (const auto& p : pairs) {
    ENDF_THROW_IF_NOT(std::isfinite(p.score), Errc::BadSpec, "non-finite score for " + p.query_id + "/" + p.ref_id);
    order.push_back(&p);
  }
  std::sort(order.begin(), order.end(), [](const ScoredPair* a, const ScoredPair* b) {
    if (a->score != b->score) return a->score > b->score;
    if (a->ref_id != b->ref_id) return a->ref_id < b->ref_id;
    return a->query_id < b->query_id;
  });
  return order;
}

inline std::size_t count_positives(std::span<const ScoredPair> pairs) {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.is_match ? 1 : 0;
  ENDF_THROW_IF_NOT(n > 0, Errc::NoPositives, "ranking contains no positive pairs");
  return n;
}

}  // namespace detail

/// Micro-averaged AP over all pairs pooled into one ranking.
inline double micro_ap(std::span<const ScoredPair> pairs) {
  const std::size_t total = detail::count_positives(pairs);
  const auto order = detail::rank_pairs(pairs);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i]->is_match) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  return sum / static_cast<double>(total);
}

/// Recall of the longest ranking prefix whose precision is at least
/// `min_precision`; 0 if none qualifies.
inline double recall_at_precision(std::span<const ScoredPair> pairs, double min_precision) {
  const std::size_t total = detail::count_positives(pairs);
  const auto order = detail::rank_pairs(pairs);
  std::size_t hits = 0, best = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    hits += order[i]->is_match ? 1 : 0;
    // Division is correctly rounded, so an exact ratio such as 63/70 equals the
    // literal 0.9; the product 0.9 * 70 would round above 63.
    if (static_cast<double>(hits) / static_cast<double>(i + 1) >= min_precision) best = hits;
  }
  return static_cast<double>(best) / static_cast<double>(total);
}

inline double recall_at_p90(std::span<const ScoredPair> pairs) { return recall_at_precision(pairs, 0.9); }

struct Candidate {
  std::string ref_id;
  double score = 0.0;
};

struct QueryRanking {
  std::string query_id;
  std::string true_match;
  std::vector<Candidate> candidates;
};

/// Fraction of queries whose top candidate (ties by ascending ref_id) is the
/// true match. A candidate with the query's own id is never counted.
inline double acc_at_1(std::span<const QueryRanking> queries) {
  if (queries.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& q : queries) {
    const Candidate* top = nullptr;
    for (const auto& c : q.candidates) {
      if (c.ref_id == q.query_id) continue;
      if (!top || c.score > top->score || (c.score == top->score && c.ref_id < top->ref_id)) top = &c;
    }
    correct += (top && top->ref_id == q.true_match) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(queries.size());
}

struct ClassificationMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> acc, sen, spe, f1;  // absent when the denominator is 0
};

inline ClassificationMetrics classification_metrics(std::span<const int> predictions, std::span<const int> truths,
                                                    int positive_class) {
  ENDF_THROW_IF_NOT(predictions.size() == truths.size(), Errc::LengthMismatch,
                    std::to_string(predictions.size()) + " predictions vs " + std::to_string(truths.size()) + " truths");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const bool p = predictions[i] == positive_class, t = truths[i] == positive_class;
    if (p && t) ++m.tp;
    else if (p) ++m.fp;
    else if (t) ++m.fn;
    else ++m.tn;
  }
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.acc = ratio(m.tp + m.tn, truths.size());
  m.sen = ratio(m.tp, m.tp + m.fn);
  m.spe = ratio(m.tn, m.tn + m.fp);
  m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
  return m;
}

struct FoldPlan {
  std::size_t n_items = 0;
  std::size_t n_folds = 5;
  std::uint64_t seed = 0;
  std::vector<std::size_t> assignment;  // fold index per item

  std::vector<std::size_t> members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> complement(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != fold) out.push_back(i);
    return out;
  }
};

/// Seeded shuffle of item indices, then round-robin into folds.
inline FoldPlan kfold(std::size_t n_items, std::size_t n_folds, std::uint64_t seed) {
  ENDF_THROW_IF_NOT(n_folds >= 1, Errc::BadConfig, "n_folds must be >= 1");
  ENDF_THROW_IF_NOT(n_folds <= n_items, Errc::TooFewItems,
                    std::to_string(n_items) + " items cannot fill " + std::to_string(n_folds) + " folds");
  std::vector<std::size_t> perm(n_items);
  for (std::size_t i = 0; i < n_items; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  FoldPlan plan{n_items, n_folds, seed, std::vector<std::size_t>(n_items)};
  for (std::size_t pos = 0; pos < n_items; ++pos) plan.assignment[perm[pos]] = pos % n_folds;
  return plan;
}

}  // namespace endofinder
