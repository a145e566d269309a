// Command-line front end for the endofinder pipeline.
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "endofinder/endofinder.hpp"

namespace ef = endofinder;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ef::PipelineConfig load(const Common& c) {
  ef::PipelineConfig cfg = c.config_path.empty() ? ef::PipelineConfig{} : ef::load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  ef::validate(cfg);
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  ef::write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// JSON report to --out (if given) and to stdout, optionally followed by a table.
void emit(const Common& c, const json& report, const std::string& table = {}) {
  const std::string text = report.dump(2) + "\n";
  if (!c.out.empty()) write_text(c.out, text);
  if (!table.empty()) std::cout << table;
  if (c.out.empty() || table.empty()) std::cout << text;
}

void add_common(CLI::App* sub, Common& c, bool with_out = true) {
  sub->add_option("--config", c.config_path, "Pipeline config JSON (defaults used when omitted)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Master seed; all randomness derives from it");
  if (with_out) sub->add_option("--out", c.out, "Output path");
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"endofinder: polyp-aware embeddings, binary hashing and ball-tree retrieval"};
  app.require_subcommand(1);

  // synth-gen
  Common synth_c;
  std::string synth_split = "train";
  auto* synth = app.add_subcommand("synth-gen", "Write a synthetic corpus (images, masks, manifest.json)");
  add_common(synth, synth_c);
  synth->get_option("--out")->required()->description("Output directory");
  synth->add_option("--split", synth_split, "Which corpus: train, reid (held-out twins) or classify")
      ->check(CLI::IsMember({"train", "reid", "classify"}));

  // train
  Common train_c;
  std::string train_corpus, train_log;
  std::optional<int> train_epochs;
  auto* trn = app.add_subcommand("train", "Train the toy encoder on a corpus and write .endp parameters");
  add_common(trn, train_c);
  trn->get_option("--out")->required()->description("Output .endp path");
  trn->add_option("--corpus", train_corpus, "Corpus directory")->required();
  trn->add_option("--epochs", train_epochs, "Override train.epochs");
  trn->add_option("--log", train_log, "Write per-epoch losses as JSON");

  // embed
  Common embed_c;
  std::string embed_params, embed_corpus, embed_view = "clean";
  auto* emb = app.add_subcommand("embed", "Embed a corpus into an .endf file");
  add_common(emb, embed_c);
  emb->get_option("--out")->required()->description("Output .endf path");
  emb->add_option("--params", embed_params, "Encoder parameters (.endp)")->required();
  emb->add_option("--corpus", embed_corpus, "Corpus directory")->required();
  emb->add_option("--view", embed_view, "clean, or augmented view a / b")->check(CLI::IsMember({"clean", "a", "b"}));

  // hash
  Common hash_c;
  std::string hash_in;
  auto* hsh = app.add_subcommand("hash", "Quantise an .endf file into hex hash codes (JSON)");
  add_common(hsh, hash_c);
  hsh->add_option("--in", hash_in, "Input .endf")->required();

  // index-build
  Common ib_c;
  std::string ib_in;
  auto* ib = app.add_subcommand("index-build", "Build a ball-tree index (.endx) from an .endf file");
  add_common(ib, ib_c);
  ib->get_option("--out")->required()->description("Output .endx path");
  ib->add_option("--in", ib_in, "Input .endf")->required();

  // index-query
  Common iq_c;
  std::string iq_index, iq_hex, iq_emb, iq_id;
  std::optional<std::size_t> iq_k;
  auto* iq = app.add_subcommand("index-query", "k-NN vote against an index; prints the evidence report");
  add_common(iq, iq_c);
  iq->add_option("--index", iq_index, "Index .endx")->required();
  auto* iq_hex_opt = iq->add_option("--hash-hex", iq_hex, "Query hash code in hex");
  auto* iq_emb_opt = iq->add_option("--embeddings", iq_emb, "Take the query from this .endf (with --id)");
  iq->add_option("--id", iq_id, "Row id inside --embeddings");
  iq->add_option("--k", iq_k, "Neighbour count (default knn.k)");
  iq_hex_opt->excludes(iq_emb_opt);

  // eval-reid
  Common er_c;
  std::string er_a, er_b, er_params, er_corpus;
  auto* er = app.add_subcommand("eval-reid", "Re-identification report (uAP, Acc@1, Recall@90%, time, FPS)");
  add_common(er, er_c);
  er->add_option("--queries", er_a, "Query embeddings (.endf); twins share ids with --refs");
  er->add_option("--refs", er_b, "Reference embeddings (.endf)");
  er->add_option("--params", er_params, "Encoder parameters; embeds views a/b of --corpus");
  er->add_option("--corpus", er_corpus, "Corpus directory (with --params)");

  // eval-classify
  Common ec_c;
  std::string ec_emb, ec_params, ec_corpus;
  std::optional<std::size_t> ec_k, ec_folds;
  auto* ec = app.add_subcommand("eval-classify", "k-fold retrieval classification report (ACC, SEN, SPE, F1)");
  add_common(ec, ec_c);
  ec->add_option("--embeddings", ec_emb, "Labelled embeddings (.endf)");
  ec->add_option("--params", ec_params, "Encoder parameters; embeds view a of --corpus");
  ec->add_option("--corpus", ec_corpus, "Corpus directory (with --params)");
  ec->add_option("--k", ec_k, "Neighbour count (default knn.k)");
  ec->add_option("--folds", ec_folds, "Fold count (default eval.folds)");

  // bench
  Common bench_c;
  ef::BenchSpec bench_spec;
  auto* bn = app.add_subcommand("bench", "Time ball-tree Hamming queries against a raw cosine scan");
  add_common(bn, bench_c);
  bn->add_option("--records", bench_spec.corpus_size, "Corpus size")->check(CLI::PositiveNumber);
  bn->add_option("--dim", bench_spec.dim, "Embedding dimension = code bits")->check(CLI::PositiveNumber);
  bn->add_option("--queries", bench_spec.n_queries, "Query count")->check(CLI::PositiveNumber);
  bn->add_option("--k", bench_spec.k, "Neighbour count")->check(CLI::PositiveNumber);

  // serve
  Common serve_c;
  std::string sv_index, sv_params, sv_host;
  std::optional<int> sv_port, sv_threads;
  auto* sv = app.add_subcommand("serve", "HTTP query service over an index");
  add_common(sv, serve_c, false);
  sv->add_option("--index", sv_index, "Index .endx")->required();
  sv->add_option("--params", sv_params, "Encoder parameters; checks that dim matches the index");
  sv->add_option("--host", sv_host, "Bind address (default serve.host)");
  sv->add_option("--port", sv_port, "Port (default serve.port; 0 picks a free one)");
  sv->add_option("--threads", sv_threads, "Worker threads (default serve.threads)");

  // mask-plan
  Common mp_c;
  std::string mp_corpus, mp_id;
  bool mp_dump = false;
  auto* mp = app.add_subcommand("mask-plan", "Adaptive masking plan for one corpus sample");
  add_common(mp, mp_c);
  mp->add_option("--corpus", mp_corpus, "Corpus directory")->required();
  mp->add_option("--id", mp_id, "Sample id (default: first sample)");
  mp->add_flag("--dump", mp_dump, "Emit the full plan as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  auto usage = [](const std::string& msg) {
    std::cerr << "usage error: " << msg << "\n";
    return 1;
  };

  try {
    if (*synth) {
      const auto cfg = load(synth_c);
      std::vector<ef::SynthSample> samples;
      if (synth_split == "train")
        samples = ef::training_corpus(cfg);
      else if (synth_split == "reid")
        samples = ef::heldout_corpus(cfg, cfg.eval.reid_test_instances, ef::kReidSalt);
      else
        samples = ef::heldout_corpus(cfg, cfg.eval.classify_samples, ef::kClassifySalt);
      ef::write_corpus(synth_c.out, cfg.synth_spec(), samples);
      std::cout << json{{"corpus", synth_c.out}, {"split", synth_split}, {"samples", samples.size()}}.dump() << "\n";
    } else if (*trn) {
      auto cfg = load(train_c);
      if (train_epochs) cfg.train.epochs = *train_epochs;
      ef::validate(cfg);
      const auto corpus = ef::read_corpus(train_corpus);
      auto tc = cfg.training();
      tc.shape.patch_size = corpus.patch_size;
      const auto res = ef::train(corpus.samples, tc);
      ef::save_params(res.params, train_c.out);
      json log = json::array();
      for (const auto& e : res.log)
        log.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"contrastive", e.contrastive}, {"reconstruction", e.reconstruction}});
      if (!train_log.empty()) write_text(train_log, log.dump(2) + "\n");
      json summary = {{"params", train_c.out}, {"epochs", tc.epochs}, {"config", ef::to_json(cfg)}};
      if (!res.log.empty()) {
        summary["initial_loss"] = res.log.front().loss;
        summary["final_loss"] = res.log.back().loss;
      }
      std::cout << summary.dump(2) << "\n";
    } else if (*emb) {
      const auto cfg = load(embed_c);
      const auto params = ef::load_params(embed_params);
      const auto corpus = ef::read_corpus(embed_corpus);
      const auto table = ef::embed_samples(params, corpus.samples, ef::parse_view(embed_view), ef::mix_seed(cfg.seed, 0xe7b));
      ef::save_embeddings(table, embed_c.out);
      std::cout << json{{"embeddings", embed_c.out}, {"rows", table.rows.size()}, {"dim", table.dim}}.dump() << "\n";
    } else if (*hsh) {
      const auto table = ef::load_embeddings(hash_in);
      json codes = json::array();
      for (const auto& row : table.rows)
        codes.push_back({{"id", row.id}, {"label", row.label}, {"hash_hex", ef::to_record(row).code.to_hex()}});
      emit(hash_c, json{{"code_bits", table.dim}, {"codes", codes}});
    } else if (*ib) {
      const auto cfg = load(ib_c);
      const auto table = ef::load_embeddings(ib_in);
      const auto index = ef::BallTreeIndex::build(ef::to_records(table), cfg.index_config());
      index.save(ib_c.out);
      std::cout << json{{"index", ib_c.out}, {"records", index.size()}, {"nodes", index.nodes().size()}, {"code_bits", index.code_bits()}}.dump()
                << "\n";
    } else if (*iq) {
      const auto cfg = load(iq_c);
      const auto index = ef::BallTreeIndex::load(iq_index);
      ef::HashCode code;
      std::string qid;
      if (!iq_hex.empty()) {
        code = ef::HashCode::from_hex(iq_hex, index.code_bits());
      } else if (!iq_emb.empty()) {
        if (iq_id.empty()) return usage("--embeddings needs --id");
        const auto table = ef::load_embeddings(iq_emb);
        const ef::EmbeddingRow* row = nullptr;
        for (const auto& r : table.rows)
          if (r.id == iq_id) row = &r;
        if (!row) throw ef::Error(ef::Errc::UnknownId, "id '" + iq_id + "' not found in " + iq_emb);
        code = ef::to_record(*row).code;
        qid = iq_id;
      } else {
        return usage("index-query needs --hash-hex or --embeddings/--id");
      }
      const auto result = ef::classify(index, code, iq_k.value_or(cfg.knn.k));
      emit(iq_c, ef::to_json(ef::explain(result, index, qid)));
    } else if (*er) {
      const auto cfg = load(er_c);
      ef::EmbeddingTable a, b;
      if (!er_a.empty() || !er_b.empty()) {
        if (er_a.empty() || er_b.empty()) return usage("--queries and --refs go together");
        a = ef::load_embeddings(er_a);
        b = ef::load_embeddings(er_b);
      } else if (!er_params.empty() && !er_corpus.empty()) {
        const auto params = ef::load_params(er_params);
        const auto corpus = ef::read_corpus(er_corpus);
        a = ef::embed_samples(params, corpus.samples, ef::View::A, ef::mix_seed(cfg.seed, 0xe7b));
        b = ef::embed_samples(params, corpus.samples, ef::View::B, ef::mix_seed(cfg.seed, 0xe7b));
      } else {
        return usage("eval-reid needs --queries/--refs or --params/--corpus");
      }
      const auto rep = ef::eval_reid(a, b, cfg.index_config());
      emit(er_c, ef::to_json(rep), ef::reid_table(rep));
    } else if (*ec) {
      const auto cfg = load(ec_c);
      ef::EmbeddingTable t;
      if (!ec_emb.empty()) {
        t = ef::load_embeddings(ec_emb);
      } else if (!ec_params.empty() && !ec_corpus.empty()) {
        const auto params = ef::load_params(ec_params);
        const auto corpus = ef::read_corpus(ec_corpus);
        t = ef::embed_samples(params, corpus.samples, ef::View::A, ef::mix_seed(cfg.seed, 0xe7b));
      } else {
        return usage("eval-classify needs --embeddings or --params/--corpus");
      }
      const auto rep = ef::eval_classify(t, ec_folds.value_or(static_cast<std::size_t>(cfg.eval.folds)),
                                         ec_k.value_or(cfg.knn.k), ef::mix_seed(cfg.seed, 0xf01d), cfg.eval.positive_class,
                                         cfg.index_config());
      emit(ec_c, ef::to_json(rep), ef::classify_table(rep));
    } else if (*bn) {
      const auto cfg = load(bench_c);
      bench_spec.seed = ef::mix_seed(cfg.seed, 0xbe7c);
      const auto rep = ef::bench_retrieval(bench_spec);
      emit(bench_c, ef::to_json(rep));
    } else if (*sv) {
      const auto cfg = load(serve_c);
      auto index = std::make_shared<const ef::BallTreeIndex>(ef::BallTreeIndex::load(sv_index));
      if (!sv_params.empty()) {
        const auto params = ef::load_params(sv_params);
        if (static_cast<std::size_t>(params.shape.dim) != index->code_bits())
          throw ef::Error(ef::Errc::DimMismatch, "encoder dim " + std::to_string(params.shape.dim) + " vs index " +
                                                     std::to_string(index->code_bits()) + " bits");
      }
      auto svc = std::make_shared<const ef::QueryService>(index, cfg.knn.k);
      ef::HttpService http(svc, sv_threads.value_or(cfg.serve.threads));
      const std::string host = sv_host.empty() ? cfg.serve.host : sv_host;
      const int port = http.start(host, sv_port.value_or(cfg.serve.port));
      std::cout << json{{"listening", host + ":" + std::to_string(port)}, {"records", index->size()}}.dump() << std::endl;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      http.stop();
    } else if (*mp) {
      const auto cfg = load(mp_c);
      const auto corpus = ef::read_corpus(mp_corpus);
      if (corpus.samples.empty()) throw ef::Error(ef::Errc::EmptyDatabase, "corpus is empty");
      const ef::SynthSample* s = &corpus.samples.front();
      if (!mp_id.empty()) {
        s = nullptr;
        for (const auto& c : corpus.samples)
          if (c.instance_id == mp_id) s = &c;
        if (!s) throw ef::Error(ef::Errc::UnknownId, "sample '" + mp_id + "' not in corpus");
      }
      const auto fg = ef::classify_patches(s->mask, corpus.patch_size, cfg.masking.fg_threshold);
      const auto plan = ef::plan_mask(fg, cfg.masking, ef::mix_seed(cfg.seed, 0x3a5c));
      json out = {{"id", s->instance_id},
                  {"num_patches", plan.num_patches()},
                  {"num_masked", plan.num_masked()},
                  {"overall_ratio", plan.overall_ratio},
                  {"fg_rate", plan.fg_rate},
                  {"bg_rate", plan.bg_rate}};
      if (mp_dump) {
        out["masked"] = plan.masked;
        out["fg_patch"] = plan.fg_patch;
      }
      emit(mp_c, out);
    }
  } catch (const ef::Error& e) {
    std::cerr << "error [" << ef::errc_name(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
