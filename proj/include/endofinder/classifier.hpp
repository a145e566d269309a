#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "endofinder/hash_index.hpp"
#include "endofinder/types.hpp"

namespace endofinder {

enum class Metric { Hamming, Cosine };

inline const char* metric_name(Metric m) { return m == Metric::Hamming ? "hamming" : "cosine"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "hamming") return Metric::Hamming;
  if (s == "cosine") return Metric::Cosine;
  throw Error(Errc::BadConfig, "unknown metric '" + s + "' (expected hamming or cosine)");
}

struct KnnConfig {
  std::size_t k = 5;
  Metric metric = Metric::Hamming;
};

inline void validate(const KnnConfig& c) { ENDF_THROW_IF_NOT(c.k >= 1, Errc::BadConfig, "knn.k must be >= 1"); }

/// Majority vote. A tie between classes goes to the tied class holding the
/// single nearest neighbour; if the nearest tied neighbours are equidistant,
/// the lowest label wins. Input order does not matter.
inline RetrievalResult vote(std::vector<Neighbor> neighbors) {
  RetrievalResult out;
  std::map<int, double> nearest;
  for (const auto& n : neighbors) {
    ++out.vote_histogram[n.label];
    auto [it, fresh] = nearest.emplace(n.label, n.distance);
    if (!fresh) it->second = std::min(it->second, n.distance);
  }
  int best_votes = -1;
  double best_dist = 0.0;
  for (const auto& [label, count] : out.vote_histogram) {
    const double d = nearest[label];
    if (count > best_votes || (count == best_votes && d < best_dist)) {
      best_votes = count;
      best_dist = d;
      out.predicted_label = label;
    }
  }
  std::sort(neighbors.begin(), neighbors.end(), neighbor_less);
  out.neighbors = std::move(neighbors);
  return out;
}

namespace detail {
inline void check_k(std::size_t k, std::size_t n) {
  ENDF_THROW_IF_NOT(n > 0, Errc::EmptyDatabase, "reference database is empty");
  ENDF_THROW_IF_NOT(k >= 1, Errc::BadConfig, "k must be >= 1");
  ENDF_THROW_IF_NOT(k <= n, Errc::KTooLarge, "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " records");
}
}  // namespace detail

/// k-NN over a plain record list. Hamming quantises the query first; cosine
/// uses each record's raw embedding.
inline RetrievalResult classify(std::span<const ReferenceRecord> records, const EmbeddingVector& query,
                                const KnnConfig& cfg) {
  detail::check_k(cfg.k, records.size());
  if (cfg.metric == Metric::Cosine) return vote(linear_scan_cosine(records, query, cfg.k));
  return vote(linear_scan(records, quantize(query), cfg.k));
}

/// k-NN over the ball tree (Hamming only; the index carries no raw features).
inline RetrievalResult classify(const BallTreeIndex& index, const HashCode& code, std::size_t k) {
  detail::check_k(k, index.size());
  return vote(index.query(code, {k, std::nullopt}));
}

inline RetrievalResult classify(const BallTreeIndex& index, const EmbeddingVector& query, const KnnConfig& cfg) {
  ENDF_THROW_IF_NOT(cfg.metric == Metric::Hamming, Errc::BadConfig,
                    "a hash index only supports the hamming metric; use the record list for cosine");
  ENDF_THROW_IF_NOT(query.dim() == index.code_bits(), Errc::DimMismatch,
                    "query dim " + std::to_string(query.dim()) + " vs " + std::to_string(index.code_bits()) + " code bits");
  return classify(index, quantize(query), cfg.k);
}

struct EvidenceRow {
  std::string id;
  int label = 0;
  double distance = 0.0;
  std::size_t rank = 0;  // 1-based

  bool operator==(const EvidenceRow&) const = default;
};

struct EvidenceReport {
  std::string query_id;
  int predicted_label = 0;
  int margin = 0;  // top-class votes minus runner-up votes
  std::map<int, int> vote_histogram;
  std::vector<EvidenceRow> neighbors;

  bool operator==(const EvidenceReport&) const = default;
};

/// Builds the evidence report; `known` says whether an id exists in the
/// reference database.
template <typename Known>
  requires std::is_invocable_r_v<bool, Known, const std::string&>
EvidenceReport explain(const RetrievalResult& result, Known&& known, std::string query_id = {}) {
  EvidenceReport rep;
  rep.query_id = std::move(query_id);
  rep.predicted_label = result.predicted_label;
  rep.vote_histogram = result.vote_histogram;
  std::vector<int> counts;
  for (const auto& [label, c] : result.vote_histogram) counts.push_back(c);
  std::sort(counts.rbegin(), counts.rend());
  rep.margin = counts.empty() ? 0 : counts[0] - (counts.size() > 1 ? counts[1] : 0);
  std::size_t rank = 1;
  for (const auto& n : result.neighbors) {
    ENDF_THROW_IF_NOT(known(n.id), Errc::UnknownId, "neighbor id '" + n.id + "' is not in the reference database");
    rep.neighbors.push_back({n.id, n.label, n.distance, rank++});
  }
  return rep;
}

inline EvidenceReport explain(const RetrievalResult& result, const BallTreeIndex& index, std::string query_id = {}) {
  return explain(result, [&](const std::string& id) { return index.find(id).has_value(); }, std::move(query_id));
}

inline EvidenceReport explain(const RetrievalResult& result, std::span<const ReferenceRecord> records,
                              std::string query_id = {}) {
  std::unordered_set<std::string> ids;
  for (const auto& r : records) ids.insert(r.id);
  return explain(result, [&](const std::string& id) { return ids.count(id) > 0; }, std::move(query_id));
}

inline nlohmann::json to_json(const EvidenceReport& r) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [label, c] : r.vote_histogram) hist[std::to_string(label)] = c;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& n : r.neighbors)
    rows.push_back({{"id", n.id}, {"label", n.label}, {"distance", n.distance}, {"rank", n.rank}});
  return {{"query_id", r.query_id},
          {"predicted_label", r.predicted_label},
          {"margin", r.margin},
          {"vote_histogram", hist},
          {"neighbors", rows}};
}

inline EvidenceReport evidence_from_json(const nlohmann::json& j) {
  try {
    EvidenceReport r;
    r.query_id = j.at("query_id").get<std::string>();
    r.predicted_label = j.at("predicted_label").get<int>();
    r.margin = j.at("margin").get<int>();
    if (j.contains("vote_histogram"))
      for (const auto& [k, v] : j.at("vote_histogram").items()) r.vote_histogram[std::stoi(k)] = v.get<int>();
    for (const auto& n : j.at("neighbors"))
      r.neighbors.push_back({n.at("id").get<std::string>(), n.at("label").get<int>(), n.at("distance").get<double>(),
                             n.at("rank").get<std::size_t>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadConfig, std::string("malformed evidence report: ") + e.what());
  }
}

}  // namespace endofinder
