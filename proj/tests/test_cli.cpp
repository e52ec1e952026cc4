#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "webformer/corpus.hpp"
#include "webformer/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir_;

  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("webformer_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static CliResult run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" + WEBFORMER_CLI + "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static fs::path path(const std::string& name) { return dir_ / name; }

  static std::size_t lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string s; std::getline(in, s);) n += !s.empty();
    return n;
  }
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, GenCorpusWritesThreeSplitsDeterministically) {
  auto r = run("gen-corpus --domains events,products,movies --pages-per-domain 10 --seed 4 --out c1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("resolved config"), std::string::npos);
  EXPECT_EQ(lines(path("c1/train.jsonl")), 24u);
  EXPECT_EQ(lines(path("c1/dev.jsonl")), 3u);
  EXPECT_EQ(lines(path("c1/test.jsonl")), 3u);
  ASSERT_EQ(run("gen-corpus --domains events,products,movies --pages-per-domain 10 --seed 4 --out c2").code, 0);
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl"})
    EXPECT_EQ(slurp(path("c1") / f), slurp(path("c2") / f)) << f;
}

TEST_F(Cli, GenCorpusErrors) {
  EXPECT_EQ(run("gen-corpus --pages-per-domain 0 --out z").code, 2);
  EXPECT_EQ(run("gen-corpus --pages-per-domain 2 --out /proc/webformer/none").code, 3);
  EXPECT_EQ(run("gen-corpus --pages-per-domain 2 --domains weather --out z").code, 2);
  EXPECT_EQ(run("gen-corpus --pages-per-domain 2").code, 2);                  // --out missing
  EXPECT_EQ(run("gen-corpus --pages-per-domain two --out z").code, 2);        // not a number
  EXPECT_EQ(run("gen-corpus --pages-per-domain 2 --out z --colour red").code, 2);  // unknown flag
  EXPECT_EQ(run("no-such-command").code, 2);
}

TEST_F(Cli, ConfigFileWithFlagOverrides) {
  std::ofstream(path("gen.json")) << R"({"domains": "events", "pages_per_domain": 3, "out": "cfgout"})";
  auto r = run("gen-corpus --config gen.json --pages-per-domain 5");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(path("cfgout/train.jsonl")), 5u);
  EXPECT_NE(r.err.find("\"pages_per_domain\":5"), std::string::npos);
  std::ofstream(path("bad.json")) << R"({"pages_per_domain": 3, "colour": "red"})";
  EXPECT_EQ(run("gen-corpus --config bad.json --out q").code, 2);
  std::ofstream(path("typed.json")) << R"({"pages_per_domain": "three"})";
  EXPECT_EQ(run("gen-corpus --config typed.json --out q").code, 2);
  EXPECT_EQ(run("gen-corpus --config missing.json --out q").code, 3);
}

TEST_F(Cli, TrainEvalExtractRoundTrip) {
  ASSERT_EQ(run("gen-corpus --domains events --pages-per-domain 10 --seed 9 --out ev").code, 0);
  auto v = run("build-vocab --data ev/train.jsonl --min-freq 1 --out ev/vocab.json");
  ASSERT_EQ(v.code, 0) << v.err;
  EXPECT_EQ(json::parse(v.out)["fields"].size(), 4u);

  // Overfit a tiny model on eight pages, selecting on the same pages.
  const std::string train_args =
      "train --train ev/train.jsonl --dev ev/train.jsonl --vocab ev/vocab.json --epochs 60 --lr 0.003 --batch-size 4 "
      "--hidden 32 --heads 2 --ffn 64 --dropout 0 --seed 3";
  auto t = run(train_args + " --out ck");
  ASSERT_EQ(t.code, 0) << t.err;
  const auto summary = json::parse(t.out);
  EXPECT_GE(summary["train_em"].get<double>(), 0.95);
  EXPECT_TRUE(fs::exists(path("ck/manifest.json")));
  EXPECT_TRUE(fs::exists(path("ck/history.json")));

  // extract on a training page returns its gold value
  const auto pages = webformer::read_dataset(path("ev/train.jsonl").string());
  std::ofstream(path("page.html")) << pages[0].html;
  std::string gold;
  for (const auto& l : pages[0].labels)
    if (l.field == "name") gold = l.value;
  auto x = run("extract --html page.html --field name --checkpoint ck");
  ASSERT_EQ(x.code, 0) << x.err;
  const auto got = json::parse(x.out);
  EXPECT_EQ(webformer::split_words(got["text"].get<std::string>()), webformer::split_words(gold));
  EXPECT_LE(got["score"].get<double>(), 0.0);
  EXPECT_EQ(run("extract --html page.html --field colour --checkpoint ck").code, 6);
  EXPECT_EQ(run("extract --html nowhere.html --field name --checkpoint ck").code, 3);

  // eval: JSON on stdout with four length buckets, plus CSV
  auto e = run("eval --data ev/test.jsonl --checkpoint ck --out-json m.json --out-csv m.csv");
  ASSERT_EQ(e.code, 0) << e.err;
  const auto m = json::parse(e.out);
  EXPECT_EQ(m["per_bucket"].size(), 4u);
  EXPECT_EQ(json::parse(slurp(path("m.json"))), m);
  EXPECT_EQ(slurp(path("m.csv")).rfind("group,key,em,f1,count\n", 0), 0u);

  // A different vocabulary is refused.
  ASSERT_EQ(run("build-vocab --data ev/test.jsonl --min-freq 1 --out other.json").code, 0);
  EXPECT_EQ(run("eval --data ev/test.jsonl --checkpoint ck --vocab other.json").code, 12);

  // Same seed, same checkpoint bytes and history.
  ASSERT_EQ(run(train_args + " --out ck2").code, 0);
  EXPECT_EQ(slurp(path("ck/params.bin")), slurp(path("ck2/params.bin")));
  auto h1 = json::parse(slurp(path("ck/history.json"))), h2 = json::parse(slurp(path("ck2/history.json")));
  for (auto* h : {&h1, &h2})
    for (auto& e2 : *h) e2.erase("seconds");
  EXPECT_EQ(h1, h2);
}

TEST_F(Cli, CorruptCheckpointExitCode) {
  ASSERT_EQ(run("gen-corpus --domains events --pages-per-domain 10 --out ev2").code, 0);
  ASSERT_EQ(run("train --train ev2/train.jsonl --epochs 1 --hidden 32 --heads 2 --ffn 64 --out ckc").code, 0);
  const auto pages = webformer::read_dataset(path("ev2/train.jsonl").string());
  std::ofstream(path("p2.html")) << pages[0].html;
  ASSERT_EQ(run("extract --html p2.html --field name --checkpoint ckc").code, 0);
  {
    std::string blob = slurp(path("ckc/params.bin"));
    blob.resize(blob.size() / 2);
    std::ofstream(path("ckc/params.bin"), std::ios::binary | std::ios::trunc) << blob;
  }
  auto r = run("extract --html p2.html --field name --checkpoint ckc");
  EXPECT_EQ(r.code, 11);
  EXPECT_NE(r.err.find("CorruptCheckpoint"), std::string::npos);
  EXPECT_EQ(run("extract --html p2.html --field name --checkpoint no_such_dir").code, 11);
}

TEST_F(Cli, GradcheckPassFailAndConfig) {
  auto ok = run("gradcheck --coords 40 --seed 2");
  ASSERT_EQ(ok.code, 0) << ok.err;
  const auto j = json::parse(ok.out);
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_LE(j["worst"]["rel_error"].get<double>(), 1e-5);
  EXPECT_NE(ok.err.find("worst relative error"), std::string::npos);

  auto bad = run("gradcheck --coords 40 --seed 2 --corrupt-adjoint");
  EXPECT_EQ(bad.code, 14);
  EXPECT_NE(bad.err.find("ffn.w"), std::string::npos);
  EXPECT_FALSE(json::parse(bad.out)["failures"].empty());

  EXPECT_EQ(run("gradcheck --coords 0").code, 2);
}

TEST_F(Cli, BenchAttnCsv) {
  auto r = run("bench-attn --lengths 512,1024,2048 --mode webformer --repeats 3 --out bench.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(path("bench.csv"));
  std::string header, row;
  std::getline(in, header);
  EXPECT_EQ(header, "mode,length,flops,ms");
  std::size_t rows = 0;
  while (std::getline(in, row)) {
    EXPECT_EQ(row.rfind("webformer,", 0), 0u);
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
  // Short nodes relative to the window grow faster than linearly; the run
  // still writes its CSV but reports the unmet criterion.
  auto slow = run("bench-attn --lengths 128,256 --html-nodes 16 --repeats 1 --out short.csv");
  EXPECT_EQ(slow.code, 1);
  EXPECT_EQ(lines(path("short.csv")), 3u);
  auto full = run("bench-attn --lengths 128,256 --mode full --html-nodes 16 --repeats 1");
  ASSERT_EQ(full.code, 0) << full.err;
  EXPECT_NE(full.out.find("full,256,"), std::string::npos);
  EXPECT_EQ(run("bench-attn --mode sparse").code, 2);
  EXPECT_EQ(run("bench-attn --lengths 512,abc").code, 2);
}

TEST_F(Cli, AblateRejectsUnknownPattern) {
  auto r = run("ablate --disable h2h,x2y");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("x2y"), std::string::npos);
}

TEST_F(Cli, AblateTinyRun) {
  auto r = run("ablate --disable t2t --domains events --pages-per-domain 10 --epochs 1 --hidden 32 --heads 2 --ffn 64 "
               "--seeds 1,2 --out-csv abl.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["variant"], "full");
  EXPECT_EQ(j[1]["variant"], "-t2t");
  EXPECT_EQ(j[1]["em"].size(), 2u);
  EXPECT_EQ(lines(path("abl.csv")), 3u);
}

TEST_F(Cli, IngestDumpFields) {
  std::ofstream(path("fig.html")) << "<html><body><h1>Spark Social</h1><div><p>Fun Fest</p></div></body></html>";
  auto r = run("ingest-dump --html fig.html --radius 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  const auto& d = j["document"];
  EXPECT_EQ(d["n_html"], 5);
  EXPECT_EQ(d["n_text"], 4);
  EXPECT_EQ(d["nodes"][2]["tag"], "h1");
  EXPECT_EQ(d["nodes"][2]["tokens"], json({"spark", "social"}));
  EXPECT_EQ(d["flat_index"][3], json({4, 1}));
  EXPECT_TRUE(j["topology"].contains("h2h"));
  EXPECT_EQ(run("ingest-dump --html nowhere.html").code, 3);
  std::ofstream(path("empty.html")) << "<div><img></div>";
  EXPECT_EQ(run("ingest-dump --html empty.html").code, 4);
}

TEST_F(Cli, HelpExitsZero) {
  auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("gen-corpus"), std::string::npos);
}
