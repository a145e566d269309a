#pragma once

#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "endofinder/bench.hpp"
#include "endofinder/classifier.hpp"
#include "endofinder/config.hpp"
#include "endofinder/embedding_file.hpp"
#include "endofinder/encoder.hpp"
#include "endofinder/hash_index.hpp"
#include "endofinder/metrics.hpp"
#include "endofinder/synth.hpp"

namespace endofinder {

/// Which image each sample contributes when embedding a corpus.
enum class View { Clean, A, B };

inline View parse_view(const std::string& s) {
  if (s == "clean") return View::Clean;
  if (s == "a") return View::A;
  if (s == "b") return View::B;
  throw Error(Errc::BadConfig, "unknown view '" + s + "' (expected clean, a or b)");
}

/// The augmented view used for evaluation. Views A and B of one instance
/// differ; both depend only on (seed, instance index).
inline SynthSample eval_view(const SynthSample& s, std::size_t index, View view, std::uint64_t seed) {
  if (view == View::Clean) return s;
  return augment(s, mix_seed(seed, 2 * index + (view == View::B ? 1 : 0)));
}

inline EmbeddingTable embed_samples(const EncoderParams& params, const std::vector<SynthSample>& samples, View view,
                                    std::uint64_t seed) {
  EmbeddingTable t;
  t.dim = static_cast<std::uint32_t>(params.shape.dim);
  t.rows.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto v = eval_view(samples[i], i, view, seed);
    const auto z = embed_image(params, v.image);
    EmbeddingRow row{v.instance_id, v.class_label, {}};
    row.values.reserve(z.dim());
    for (double x : z.values()) row.values.push_back(static_cast<float>(x));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Embedding row -> record; the code is the sign pattern of the stored floats.
inline ReferenceRecord to_record(const EmbeddingRow& row) {
  return {row.id, row.label, quantize(std::span<const float>(row.values)), row.values};
}

inline std::vector<ReferenceRecord> to_records(const EmbeddingTable& t) {
  std::vector<ReferenceRecord> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.push_back(to_record(r));
  return out;
}

/// Query embedding from a stored row; re-normalises float rounding.
inline EmbeddingVector to_embedding(const std::vector<float>& v) {
  return l2_normalize(std::vector<double>(v.begin(), v.end()));
}

// ---------------------------------------------------------------------------
// Re-identification: each query in `a` has its twin (same id) in `b`.

struct ReidScores {
  double uap = 0.0;
  double acc1 = 0.0;
  double recall_p90 = 0.0;
  double query_s = 0.0;  // median per query
  double fps = 0.0;
};

struct ReidReport {
  std::size_t n_queries = 0;
  std::size_t n_refs = 0;
  std::size_t code_bits = 0;
  ReidScores raw;
  ReidScores hash;
};

inline ReidReport eval_reid(const EmbeddingTable& a, const EmbeddingTable& b, const BallTreeConfig& index_cfg = {}) {
  ENDF_THROW_IF_NOT(a.dim == b.dim, Errc::DimMismatch, "query and reference embeddings differ in dimension");
  ENDF_THROW_IF_NOT(!a.rows.empty() && !b.rows.empty(), Errc::EmptyDatabase, "re-identification needs rows on both sides");
  const std::string qs = "#q", rs = "#r";  // keep query and reference ids distinct
  auto refs = to_records(b);
  for (auto& r : refs) r.id += rs;
  std::map<std::string, bool> ref_ids;
  for (const auto& r : refs) ref_ids[r.id] = true;

  std::vector<ScoredPair> raw_pairs, hash_pairs;
  std::vector<QueryRanking> raw_rank, hash_rank;
  std::vector<double> raw_t, hash_t;
  const auto index = BallTreeIndex::build(refs, index_cfg);
  using clock = std::chrono::steady_clock;

  for (const auto& row : a.rows) {
    const std::string qid = row.id + qs, truth = row.id + rs;
    ENDF_THROW_IF_NOT(ref_ids.count(truth), Errc::UnknownId, "query '" + row.id + "' has no twin in the reference set");
    const auto q = to_embedding(row.values);
    const auto code = quantize(std::span<const float>(row.values));
    QueryRanking rr{qid, truth, {}}, hr{qid, truth, {}};
    for (const auto& ref : refs) {
      const double cos = static_cast<double>(detail::dot_f32(row.values.data(), ref.raw->data(), a.dim));
      const double ham = -static_cast<double>(hamming(code, ref.code));
      const bool match = ref.id == truth;
      raw_pairs.push_back({qid, ref.id, cos, match});
      hash_pairs.push_back({qid, ref.id, ham, match});
      rr.candidates.push_back({ref.id, cos});
      hr.candidates.push_back({ref.id, ham});
    }
    raw_rank.push_back(std::move(rr));
    hash_rank.push_back(std::move(hr));

    // Retrieval timing for one top-1 lookup each way.
    auto t0 = clock::now();
    (void)linear_scan_cosine(refs, q, 1);
    auto t1 = clock::now();
    (void)index.query(quantize(std::span<const float>(row.values)), {1, std::nullopt});
    auto t2 = clock::now();
    raw_t.push_back(std::chrono::duration<double>(t1 - t0).count());
    hash_t.push_back(std::chrono::duration<double>(t2 - t1).count());
  }

  ReidReport rep;
  rep.n_queries = a.rows.size();
  rep.n_refs = b.rows.size();
  rep.code_bits = a.dim;
  auto fill = [](ReidScores& s, const auto& pairs, const auto& ranks, const std::vector<double>& times) {
    s.uap = micro_ap(pairs);
    s.acc1 = acc_at_1(ranks);
    s.recall_p90 = recall_at_p90(pairs);
    s.query_s = detail::median(times);
    s.fps = s.query_s > 0 ? 1.0 / s.query_s : 0.0;
  };
  fill(rep.raw, raw_pairs, raw_rank, raw_t);
  fill(rep.hash, hash_pairs, hash_rank, hash_t);
  return rep;
}

inline nlohmann::json to_json(const ReidScores& s) {
  return {{"uAP", s.uap}, {"Acc@1", s.acc1}, {"Recall@90%", s.recall_p90}, {"time_s", s.query_s}, {"fps", s.fps}};
}

inline nlohmann::json to_json(const ReidReport& r) {
  return {{"n_queries", r.n_queries},
          {"n_refs", r.n_refs},
          {"code_bits", r.code_bits},
          {"raw", to_json(r.raw)},
          {"hash", to_json(r.hash)}};
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string opt_fmt(const std::optional<double>& v) { return v ? fmt("%.3f", *v) : std::string("n/a"); }

// Aligned text table; first column left-aligned, the rest right-aligned.
inline std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < r.size() ? r[c] : "";
      const std::string pad(width[c] - cell.size(), ' ');
      if (c) out << "  ";
      out << (c == 0 ? cell + pad : pad + cell);
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

}  // namespace detail

inline std::string reid_table(const ReidReport& r) {
  auto row = [](const char* name, const ReidScores& s) {
    return std::vector<std::string>{name,
                                    detail::fmt("%.3f", s.uap),
                                    detail::fmt("%.3f", s.acc1),
                                    detail::fmt("%.3f", s.recall_p90),
                                    detail::fmt("%.6f", s.query_s),
                                    detail::fmt("%.1f", s.fps)};
  };
  return detail::render_table({"Method", "uAP", "Acc@1", "Recall@90%", "Time(s)", "FPS"},
                              {row("Raw", r.raw), row("Hash", r.hash)});
}

// ---------------------------------------------------------------------------
// Cross-validated retrieval classification.

struct FoldScores {
  std::size_t fold = 0;
  std::size_t n_test = 0;
  ClassificationMetrics raw;
  ClassificationMetrics hash;
};

struct ClassifyReport {
  std::size_t n_items = 0;
  std::size_t n_folds = 0;
  std::size_t k = 0;
  int positive_class = 0;
  std::vector<FoldScores> folds;
  std::map<std::string, std::optional<double>> mean_raw, mean_hash;
};

namespace detail {
inline std::map<std::string, std::optional<double>> mean_metrics(const std::vector<FoldScores>& folds, bool hash) {
  std::map<std::string, std::optional<double>> out;
  auto avg = [&](auto get) -> std::optional<double> {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& f : folds)
      if (auto v = get(hash ? f.hash : f.raw)) {
        s += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
  };
  out["ACC"] = avg([](const ClassificationMetrics& m) { return m.acc; });
  out["SEN"] = avg([](const ClassificationMetrics& m) { return m.sen; });
  out["SPE"] = avg([](const ClassificationMetrics& m) { return m.spe; });
  out["F1"] = avg([](const ClassificationMetrics& m) { return m.f1; });
  return out;
}
}  // namespace detail

/// k-fold CV: each fold in turn is the query set, the rest the reference
/// database. Raw votes over cosine, Hash over Hamming via the ball tree.
inline ClassifyReport eval_classify(const EmbeddingTable& table, std::size_t n_folds, std::size_t k, std::uint64_t seed,
                                    int positive_class, const BallTreeConfig& index_cfg = {}) {
  const auto plan = kfold(table.rows.size(), n_folds, seed);
  const auto records = to_records(table);
  ClassifyReport rep;
  rep.n_items = table.rows.size();
  rep.n_folds = n_folds;
  rep.k = k;
  rep.positive_class = positive_class;
  for (std::size_t f = 0; f < n_folds; ++f) {
    std::vector<ReferenceRecord> refs;
    for (auto i : plan.complement(f)) refs.push_back(records[i]);
    const auto index = BallTreeIndex::build(refs, index_cfg);
    std::vector<int> truth, pred_raw, pred_hash;
    for (auto i : plan.members(f)) {
      const auto& row = table.rows[i];
      const auto q = to_embedding(row.values);
      truth.push_back(row.label);
      pred_raw.push_back(classify(refs, q, {k, Metric::Cosine}).predicted_label);
      pred_hash.push_back(classify(index, records[i].code, k).predicted_label);
    }
    rep.folds.push_back({f, truth.size(), classification_metrics(pred_raw, truth, positive_class),
                         classification_metrics(pred_hash, truth, positive_class)});
  }
  rep.mean_raw = detail::mean_metrics(rep.folds, false);
  rep.mean_hash = detail::mean_metrics(rep.folds, true);
  return rep;
}

inline nlohmann::json to_json(const ClassificationMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"ACC", opt(m.acc)}, {"SEN", opt(m.sen)}, {"SPE", opt(m.spe)}, {"F1", opt(m.f1)},
          {"TP", m.tp},        {"FP", m.fp},        {"TN", m.tn},        {"FN", m.fn}};
}

inline nlohmann::json to_json(const ClassifyReport& r) {
  auto means = [](const std::map<std::string, std::optional<double>>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[k] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    return j;
  };
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"fold", f.fold}, {"n_test", f.n_test}, {"raw", to_json(f.raw)}, {"hash", to_json(f.hash)}});
  return {{"n_items", r.n_items},     {"n_folds", r.n_folds},        {"k", r.k},
          {"positive_class", r.positive_class}, {"folds", folds}, {"mean", {{"raw", means(r.mean_raw)}, {"hash", means(r.mean_hash)}}}};
}

inline std::string classify_table(const ClassifyReport& r) {
  std::vector<std::vector<std::string>> rows;
  auto add = [&](const std::string& name, const ClassificationMetrics& m) {
    rows.push_back({name, detail::opt_fmt(m.acc), detail::opt_fmt(m.sen), detail::opt_fmt(m.spe), detail::opt_fmt(m.f1)});
  };
  for (const auto& f : r.folds) {
    add("fold " + std::to_string(f.fold) + " Raw", f.raw);
    add("fold " + std::to_string(f.fold) + " Hash", f.hash);
  }
  auto mean_row = [&](const std::string& name, const std::map<std::string, std::optional<double>>& m) {
    rows.push_back({name, detail::opt_fmt(m.at("ACC")), detail::opt_fmt(m.at("SEN")), detail::opt_fmt(m.at("SPE")),
                    detail::opt_fmt(m.at("F1"))});
  };
  mean_row("mean Raw", r.mean_raw);
  mean_row("mean Hash", r.mean_hash);
  return detail::render_table({"Method", "ACC", "SEN", "SPE", "F1"}, rows);
}

// ---------------------------------------------------------------------------
// Corpora used by the evaluation flows, all derived from the pipeline seed.

inline std::vector<SynthSample> training_corpus(const PipelineConfig& c) {
  SynthSpec s = c.synth_spec();
  s.num_instances = c.eval.reid_train_instances;
  return generate(s);
}

inline std::vector<SynthSample> heldout_corpus(const PipelineConfig& c, int n, std::uint64_t salt) {
  SynthSpec s = c.synth_spec();
  s.num_instances = n;
  s.seed = mix_seed(c.seed, salt);
  auto out = generate(s);
  for (auto& smp : out) smp.instance_id = "held_" + smp.instance_id;
  return out;
}

inline constexpr std::uint64_t kReidSalt = 0x4e1d;
inline constexpr std::uint64_t kClassifySalt = 0xc1a5;

}  // namespace endofinder
