#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "endofinder/hash_index.hpp"
#include "endofinder/rng.hpp"

namespace endofinder {

struct BenchSpec {
  std::size_t corpus_size = 100000;
  std::size_t dim = 256;
  std::size_t n_queries = 1000;
  std::size_t k = 5;
  double query_noise = 0.5;  // query = corpus vector + noise, renormalised
  std::uint64_t seed = 0;
};

struct BenchReport {
  BenchSpec spec;
  double build_s = 0.0;
  double hash_query_s = 0.0;  // median per query
  double raw_scan_s = 0.0;    // median per query
  double fps = 0.0;           // 1 / hash_query_s
  double raw_fps = 0.0;
  double speedup = 0.0;
  std::size_t top1_agreement = 0;  // queries whose hash top-1 equals the raw top-1
  std::string note;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Raw-feature baseline over a dense row-major float matrix of unit rows.
// Eight partial sums let the compiler vectorise without fast-math.
inline float dot_f32(const float* a, const float* b, std::size_t n) {
  float acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  float s = 0.0f;
  for (int l = 0; l < 8; ++l) s += acc[l];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<std::size_t> raw_cosine_topk(const std::vector<float>& matrix, std::size_t dim, const float* q,
                                                std::size_t k) {
  const std::size_t n = matrix.size() / dim;
  std::vector<std::pair<float, std::size_t>> heap;  // min-heap on similarity
  heap.reserve(k + 1);
  auto cmp = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
  for (std::size_t r = 0; r < n; ++r) {
    const float s = dot_f32(matrix.data() + r * dim, q, dim);
    if (heap.size() < k) {
      heap.emplace_back(s, r);
      std::push_heap(heap.begin(), heap.end(), cmp);
    } else if (s > heap.front().first) {
      std::pop_heap(heap.begin(), heap.end(), cmp);
      heap.back() = {s, r};
      std::push_heap(heap.begin(), heap.end(), cmp);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), cmp);
  std::vector<std::size_t> out;
  for (const auto& h : heap) out.push_back(h.second);
  return out;
}

}  // namespace detail

/// Times a ball-tree Hamming query against a raw-float cosine scan on the
/// same synthetic corpus, one query at a time on the calling thread.
inline BenchReport bench_retrieval(const BenchSpec& spec) {
  ENDF_THROW_IF_NOT(spec.corpus_size >= 1 && spec.dim >= 1 && spec.n_queries >= 1 && spec.k >= 1 &&
                        spec.k <= spec.corpus_size,
                    Errc::BadConfig, "bench sizes must be >= 1 and k <= corpus size");
  using clock = std::chrono::steady_clock;
  Rng rng(spec.seed);
  const std::size_t d = spec.dim;

  auto unit_row = [&](float* out, const float* base, double noise) {
    double norm = 0.0;
    std::vector<double> v(d);
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = (base ? base[j] : 0.0) + noise * rng.normal();
      norm += v[j] * v[j];
    }
    norm = std::sqrt(std::max(norm, 1e-24));
    for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(v[j] / norm);
  };

  std::vector<float> matrix(spec.corpus_size * d);
  std::vector<ReferenceRecord> records(spec.corpus_size);
  for (std::size_t r = 0; r < spec.corpus_size; ++r) {
    float* row = matrix.data() + r * d;
    unit_row(row, nullptr, 1.0);
    records[r].id = "r" + std::to_string(r);
    records[r].label = static_cast<int>(r % 2);
    records[r].code = quantize(std::span<const float>(row, d));
  }
  // Queries are perturbed corpus rows, as in re-identification.
  std::vector<float> queries(spec.n_queries * d);
  const double noise = spec.query_noise / std::sqrt(static_cast<double>(d));
  for (std::size_t q = 0; q < spec.n_queries; ++q) {
    const auto src = rng.below(spec.corpus_size);
    unit_row(queries.data() + q * d, matrix.data() + src * d, noise);
  }

  BenchReport rep;
  rep.spec = spec;
  auto t0 = clock::now();
  const auto index = BallTreeIndex::build(records, {32, 64, mix_seed(spec.seed, 0x1d)});
  rep.build_s = std::chrono::duration<double>(clock::now() - t0).count();

  std::vector<double> hash_t, raw_t;
  hash_t.reserve(spec.n_queries);
  raw_t.reserve(spec.n_queries);
  for (std::size_t q = 0; q < spec.n_queries; ++q) {
    const float* qv = queries.data() + q * d;
    auto a = clock::now();
    const auto code = quantize(std::span<const float>(qv, d));
    const auto hits = index.query(code, {spec.k, std::nullopt});
    auto b = clock::now();
    const auto raw = detail::raw_cosine_topk(matrix, d, qv, spec.k);
    auto c = clock::now();
    hash_t.push_back(std::chrono::duration<double>(b - a).count());
    raw_t.push_back(std::chrono::duration<double>(c - b).count());
    if (!hits.empty() && !raw.empty() && hits.front().id == records[raw.front()].id) ++rep.top1_agreement;
  }
  rep.hash_query_s = detail::median(hash_t);
  rep.raw_scan_s = detail::median(raw_t);
  rep.fps = rep.hash_query_s > 0 ? 1.0 / rep.hash_query_s : 0.0;
  rep.raw_fps = rep.raw_scan_s > 0 ? 1.0 / rep.raw_scan_s : 0.0;
  rep.speedup = rep.hash_query_s > 0 ? rep.raw_scan_s / rep.hash_query_s : 0.0;
  rep.note = "single query thread; median wall-clock per query (steady_clock); hash time includes quantisation";
  return rep;
}

inline nlohmann::json to_json(const BenchReport& r) {
  return {{"corpus_size", r.spec.corpus_size},
          {"dim", r.spec.dim},
          {"code_bits", r.spec.dim},
          {"n_queries", r.spec.n_queries},
          {"k", r.spec.k},
          {"query_noise", r.spec.query_noise},
          {"seed", r.spec.seed},
          {"build_s", r.build_s},
          {"hash_query_s", r.hash_query_s},
          {"raw_scan_s", r.raw_scan_s},
          {"fps", r.fps},
          {"raw_fps", r.raw_fps},
          {"speedup", r.speedup},
          {"top1_agreement", r.top1_agreement},
          {"note", r.note}};
}

}  // namespace endofinder
