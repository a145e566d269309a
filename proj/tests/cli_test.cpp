#include <gtest/gtest.h>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>
#include <unistd.h>

#include "test_support.hpp"

namespace ef = endofinder;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(ENDOFINDER_CLI) + " " + args + " 2>/dev/null";
  RunResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void write_small_config(const fs::path& path) {
  std::ofstream(path) << json{{"seed", 21},
                              {"synth", {{"image_size", 32}}},
                              {"train", {{"epochs", 2}, {"batch", 4}, {"hidden", 16}, {"dim", 64}}},
                              {"hash", {{"leaf_capacity", 4}}},
                              {"eval", {{"reid_train_instances", 12}, {"reid_test_instances", 10}, {"classify_samples", 20}}}}
                             .dump();
}

// synth-gen -> train -> embed -> index-build into `dir`.
void run_pipeline(const fs::path& dir, const fs::path& cfg) {
  const std::string c = " --config " + q(cfg);
  ASSERT_EQ(run("synth-gen" + c + " --out " + q(dir / "train")).code, 0);
  ASSERT_EQ(run("synth-gen --split reid" + c + " --out " + q(dir / "reid")).code, 0);
  ASSERT_EQ(run("train" + c + " --corpus " + q(dir / "train") + " --out " + q(dir / "model.endp")).code, 0);
  ASSERT_EQ(run("embed" + c + " --params " + q(dir / "model.endp") + " --corpus " + q(dir / "reid") + " --view a --out " +
                q(dir / "a.endf"))
                .code,
            0);
  ASSERT_EQ(run("embed" + c + " --params " + q(dir / "model.endp") + " --corpus " + q(dir / "reid") + " --view b --out " +
                q(dir / "b.endf"))
                .code,
            0);
  ASSERT_EQ(run("index-build" + c + " --in " + q(dir / "b.endf") + " --out " + q(dir / "b.endx")).code, 0);
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("index-build").code, 1);
  EXPECT_EQ(run("bench --records -5").code, 1);
  EXPECT_EQ(run("embed --params x --corpus y --view sideways").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, DataErrorsExitTwo) {
  testutil::TempDir dir;
  EXPECT_EQ(run("index-query --index " + q(dir / "missing.endx") + " --hash-hex 00").code, 2);
  std::ofstream(dir / "junk.endx") << "ENDX1 definitely not an index";
  EXPECT_EQ(run("index-query --index " + q(dir / "junk.endx") + " --hash-hex 00").code, 2);
  std::ofstream(dir / "bad.json") << R"({"knn": {"k": 0}})";
  EXPECT_EQ(run("bench --records 10 --queries 2 --config " + q(dir / "bad.json")).code, 2);
}

TEST(Cli, PipelineIsByteDeterministic) {
  testutil::TempDir dir;
  write_small_config(dir / "cfg.json");
  fs::create_directories(dir / "run1");
  fs::create_directories(dir / "run2");
  run_pipeline(dir / "run1", dir / "cfg.json");
  run_pipeline(dir / "run2", dir / "cfg.json");
  for (const char* f : {"model.endp", "a.endf", "b.endf", "b.endx"})
    EXPECT_EQ(ef::read_file_bytes(dir / "run1" / f), ef::read_file_bytes(dir / "run2" / f)) << f;
  // A different seed changes the artifacts.
  fs::create_directories(dir / "run3");
  ASSERT_EQ(run("synth-gen --config " + q(dir / "cfg.json") + " --seed 22 --out " + q(dir / "run3" / "reid") +
                " --split reid")
                .code,
            0);
  EXPECT_NE(ef::read_file_bytes(dir / "run3" / "reid" / "manifest.json"),
            ef::read_file_bytes(dir / "run1" / "reid" / "manifest.json"));
}

TEST(Cli, QueryAndReportsMatchLibrary) {
  testutil::TempDir dir;
  write_small_config(dir / "cfg.json");
  run_pipeline(dir.path(), dir / "cfg.json");
  const auto a = ef::load_embeddings(dir / "a.endf");
  const auto index = ef::BallTreeIndex::load(dir / "b.endx");

  for (std::size_t i = 0; i < a.rows.size(); i += 3) {
    const auto r = run("index-query --index " + q(dir / "b.endx") + " --embeddings " + q(dir / "a.endf") + " --id " +
                       a.rows[i].id + " --k 3");
    ASSERT_EQ(r.code, 0);
    const auto lib = ef::explain(ef::classify(index, ef::to_record(a.rows[i]).code, 3), index, a.rows[i].id);
    EXPECT_EQ(json::parse(r.out), ef::to_json(lib));
  }
  const auto hex = ef::to_record(a.rows[0]).code.to_hex();
  const auto by_hex = run("index-query --index " + q(dir / "b.endx") + " --hash-hex " + hex + " --k 2");
  ASSERT_EQ(by_hex.code, 0);
  EXPECT_EQ(json::parse(by_hex.out), ef::to_json(ef::explain(ef::classify(index, ef::to_record(a.rows[0]).code, 2), index)));

  const auto hashed = run("hash --in " + q(dir / "a.endf"));
  ASSERT_EQ(hashed.code, 0);
  const auto codes = json::parse(hashed.out)["codes"];
  ASSERT_EQ(codes.size(), a.rows.size());
  EXPECT_EQ(codes[1]["hash_hex"], ef::to_record(a.rows[1]).code.to_hex());

  // Identical query and reference embeddings: the perfect-embedding limit for raw scores.
  // Hash codes of a barely trained model can collide, so those are checked against the library.
  const auto self = run("eval-reid --queries " + q(dir / "a.endf") + " --refs " + q(dir / "a.endf") + " --out " +
                        q(dir / "self.json"));
  ASSERT_EQ(self.code, 0);
  const auto rep = json::parse(std::ifstream(dir / "self.json"));
  const auto lib_self = ef::eval_reid(a, a);
  EXPECT_EQ(rep["raw"]["uAP"], 1.0);
  EXPECT_EQ(rep["raw"]["Acc@1"], 1.0);
  EXPECT_DOUBLE_EQ(rep["hash"]["uAP"].get<double>(), lib_self.hash.uap);
  EXPECT_DOUBLE_EQ(rep["hash"]["Acc@1"].get<double>(), lib_self.hash.acc1);

  const auto lib_reid = ef::eval_reid(a, ef::load_embeddings(dir / "b.endf"));
  const auto cli_reid = run("eval-reid --config " + q(dir / "cfg.json") + " --params " + q(dir / "model.endp") +
                            " --corpus " + q(dir / "reid") + " --out " + q(dir / "reid.json"));
  ASSERT_EQ(cli_reid.code, 0);
  const auto cr = json::parse(std::ifstream(dir / "reid.json"));
  EXPECT_DOUBLE_EQ(cr["raw"]["uAP"].get<double>(), lib_reid.raw.uap);
  EXPECT_DOUBLE_EQ(cr["hash"]["Acc@1"].get<double>(), lib_reid.hash.acc1);
  EXPECT_NE(cli_reid.out.find("Recall@90%"), std::string::npos);

  const auto cls = run("eval-classify --config " + q(dir / "cfg.json") + " --embeddings " + q(dir / "a.endf") +
                       " --folds 5 --k 3 --out " + q(dir / "cls.json"));
  ASSERT_EQ(cls.code, 0);
  EXPECT_EQ(json::parse(std::ifstream(dir / "cls.json"))["folds"].size(), 5u);

  const auto plan = run("mask-plan --corpus " + q(dir / "reid") + " --dump");
  ASSERT_EQ(plan.code, 0);
  EXPECT_EQ(json::parse(plan.out)["masked"].size(), 16u);
}

TEST(Cli, BenchReport) {
  const auto r = run("bench --records 2000 --dim 64 --queries 20 --k 5");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["corpus_size"], 2000);
  EXPECT_GT(j["hash_query_s"].get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(j["fps"].get<double>(), 1.0 / j["hash_query_s"].get<double>());
}

TEST(Cli, ServeAnswersAndStopsOnSigterm) {
  testutil::TempDir dir;
  write_small_config(dir / "cfg.json");
  run_pipeline(dir.path(), dir / "cfg.json");
  int fds[2];
  ASSERT_EQ(pipe(fds), 0);
  const std::string index = (dir / "b.endx").string();
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    dup2(fds[1], STDOUT_FILENO);
    close(fds[0]);
    execl(ENDOFINDER_CLI, ENDOFINDER_CLI, "serve", "--index", index.c_str(), "--port", "0", "--threads", "2",
          static_cast<char*>(nullptr));
    _exit(127);
  }
  close(fds[1]);
  std::string line;
  char ch;
  while (read(fds[0], &ch, 1) == 1 && ch != '\n') line += ch;
  close(fds[0]);
  const auto hello = json::parse(line);
  const std::string addr = hello["listening"];
  const int port = std::stoi(addr.substr(addr.rfind(':') + 1));

  httplib::Client cli("127.0.0.1", port);
  const auto health = cli.Get("/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const auto idx = ef::BallTreeIndex::load(dir / "b.endx");
  const auto code = idx.records()[2].code;
  const auto res = cli.Post("/v1/query", json{{"hash_hex", code.to_hex()}, {"k", 1}}.dump(), "application/json");
  ASSERT_TRUE(res);
  const auto body = json::parse(res->body);
  EXPECT_EQ(body["neighbors"][0]["id"], idx.records()[2].id);
  EXPECT_EQ(body["neighbors"][0]["distance"], 0.0);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}
