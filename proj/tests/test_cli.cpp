#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "test_support.hpp"
#include "valc/cli.hpp"
#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/synth.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = valc::cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

/// Writes a small planted corpus with labels and CLS embeddings.
fs::path planted_corpus(const fs::path& dir) {
  const fs::path path = dir / "corpus.valc";
  const Outcome o = run({"synth-corpus", "--out", path.string(), "--docs", "30", "--tokens", "10", "--stop-tokens", "5",
                         "--k", "3", "--d", "4", "--seed", "5"});
  REQUIRE(o.code == 0);
  return path;
}

}  // namespace

TEST_CASE("help and usage errors") {
  const Outcome help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("synth-validate") != std::string::npos);
  CHECK(run({"train", "--help"}).code == 0);
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"train", "--no-such-flag"}).code == 1);
  CHECK(run({"train", "--k", "many"}).code == 1);
  CHECK(run({"train"}).code == 1);
}

TEST_CASE("missing input is a data error naming the path") {
  const auto dir = testing::scratch_dir("cli_missing");
  const std::string missing = (dir / "nope.valc").string();
  const Outcome o = run({"train", "--corpus", missing, "--out", (dir / "b.valb").string()});
  CHECK(o.code == 2);
  CHECK(o.err.find(missing) != std::string::npos);
}

TEST_CASE("config files set defaults that flags override") {
  const auto dir = testing::scratch_dir("cli_config");
  const fs::path corpus = planted_corpus(dir);
  const fs::path cfg = dir / "run.json";
  write_text(cfg, R"({"k": 2, "epochs": 3, "counts": "identical"})");
  const Outcome o = run({"train", "--config", cfg.string(), "--corpus", corpus.string(), "--out",
                         (dir / "b.valb").string(), "--epochs", "2", "--threads", "1"});
  REQUIRE(o.code == 0);
  const auto line = o.out.substr(o.out.find("config: ") + 8, o.out.find('\n') - 8);
  const auto echoed = nlohmann::json::parse(line);
  CHECK(echoed["k"] == 2);
  CHECK(echoed["epochs"] == 2);
  CHECK(echoed["counts"] == "identical");
  CHECK(echoed["phi_mode"] == "derived");
  CHECK(valc::read_bank_file(dir / "b.valb").size() == 2);

  write_text(cfg, R"({"kk": 2})");
  CHECK(run({"train", "--config", cfg.string()}).code == 1);
  write_text(cfg, R"({"k": "two"})");
  CHECK(run({"train", "--config", cfg.string()}).code == 1);
  write_text(cfg, "{not json");
  CHECK(run({"train", "--config", cfg.string()}).code == 1);

  valc::cli::RunConfig rc;
  valc::cli::apply_config_json(rc, valc::cli::config_to_json(rc));
  CHECK(valc::cli::config_to_json(rc) == valc::cli::config_to_json(valc::cli::RunConfig{}));
}

TEST_CASE("train, infer, topics and edit pipeline is reproducible") {
  const auto dir = testing::scratch_dir("cli_pipeline");
  const fs::path corpus = planted_corpus(dir);
  for (const char* tag : {"a", "b"}) {
    const fs::path sub = dir / tag;
    fs::create_directories(sub);
    const std::string bank = (sub / "bank.valb").string();
    REQUIRE(run({"train", "--corpus", corpus.string(), "--out", bank, "--k", "3", "--epochs", "4", "--seed", "3",
                 "--threads", "1"})
                .code == 0);
    REQUIRE(run({"infer", "--model", bank, "--corpus", corpus.string(), "--out", (sub / "infer.json").string(),
                 "--threads", "1"})
                .code == 0);
    REQUIRE(run({"topics", "--model", bank, "--corpus", corpus.string(), "--out", (sub / "topics").string(),
                 "--top", "3", "--threads", "1"})
                .code == 0);
    REQUIRE(run({"edit", "--model", bank, "--corpus", corpus.string(), "--out", (sub / "edit.json").string(),
                 "--threads", "1"})
                .code == 0);
  }
  for (const char* f : {"bank.valb", "bank.valb.json", "infer.json", "topics/report.json", "topics/theta.csv",
                        "topics/projection.csv", "edit.json"}) {
    REQUIRE(fs::exists(dir / "a" / f));
    CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
  }
  const auto report = nlohmann::json::parse(slurp(dir / "a" / "infer.json"));
  CHECK(report["K"] == 3);
  CHECK(report["documents"].size() == 30);
  CHECK(report["documents"][0]["tokens"].size() == 15);
  const auto edit = nlohmann::json::parse(slurp(dir / "a" / "edit.json"));
  CHECK(edit["schemes"].size() == 3);
}

TEST_CASE("dimension mismatch between bank and corpus") {
  const auto dir = testing::scratch_dir("cli_dims");
  const fs::path corpus = planted_corpus(dir);
  std::mt19937_64 rng(1);
  valc::write_bank_file(testing::random_bank(2, 5, valc::CovarianceMode::Full, rng), dir / "wide.valb");
  const Outcome o = run({"infer", "--model", (dir / "wide.valb").string(), "--corpus", corpus.string(), "--out",
                         (dir / "x.json").string()});
  CHECK(o.code == 2);
}

TEST_CASE("synth-validate reports per-seed orderings") {
  const auto dir = testing::scratch_dir("cli_validate");
  const fs::path out = dir / "v.json";
  const Outcome o = run({"synth-validate", "--seeds", "10", "--docs", "10", "--epochs", "2", "--k", "3", "--d", "4",
                         "--tokens", "8", "--stop-tokens", "4", "--out", out.string(), "--threads", "1"});
  REQUIRE(o.code == 0);
  CHECK(o.out.find("ordering fraction: ") != std::string::npos);
  const auto v = nlohmann::json::parse(slurp(out));
  CHECK(v["seeds"].size() == 10);
  CHECK(v["fraction"].get<double>() >= 0.0);
  CHECK(run({"synth-validate", "--seeds", "3"}).code == 1);
}

TEST_CASE("installed binary maps errors to exit codes") {
  const char* bin = std::getenv("VALC_BIN");
  if (bin == nullptr) {
    MESSAGE("VALC_BIN not set; skipping subprocess checks");
    return;
  }
  auto status = [&](const std::string& args) {
    const int raw = std::system((std::string(bin) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("--help") == 0);
  CHECK(status("train --bogus") == 1);
  CHECK(status("train --corpus /nonexistent/valc.bin --out /tmp/valc_never.valb") == 2);
}
