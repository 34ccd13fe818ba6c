#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "harness.hpp"
#include "pljp/cli.hpp"
#include "pljp/config.hpp"
#include "pljp/text.hpp"

using namespace pljp;
using pljp::testing::run_cli;
using pljp::testing::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the installed binary with stderr discarded.
Run run_binary(const std::string& args) {
  const std::string cmd = std::string(PLJP_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const pljp::testing::SmokeLayout& smoke() {
  static TempDir dir("pljp-cli-smoke");
  static const auto layout = pljp::testing::build_smoke(dir.path());
  return layout;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 1") {
    CHECK(run_cli({}) == kExitUsage);
    CHECK(run_cli({"evl", "run"}) == kExitUsage);
    CHECK(run_cli({"eval"}) == kExitUsage);
    CHECK(run_cli({"eval", "run"}) == kExitUsage);
    CHECK(run_cli({"corpus", "validate", "/definitely/missing.jsonl"}) == kExitUsage);
    CHECK(run_cli({"--jobs", "0", "llm", "probe"}) == kExitUsage);
    CHECK(run_cli({"llm", "probe", "extra"}) == kExitUsage);
    CHECK(run_cli({"--help"}) == kExitOk);
  }

  TEST_CASE("unknown command suggests the closest one") {
    const auto r = run_binary("evl run");
    CHECK(r.code == kExitUsage);
    CHECK(std::system((std::string(PLJP_CLI_PATH) + " evl 2>&1 | grep -q \"did you mean 'eval'\"").c_str()) == 0);
  }

  TEST_CASE("runtime errors exit 2") {
    TempDir dir;
    pljp::testing::write_file(dir / "bad.jsonl", "{not json}\n");
    CHECK(run_cli({"corpus", "validate", (dir / "bad.jsonl").string()}) == kExitRuntime);
    CHECK(run_cli({"llm", "probe", "--backend", "nonsense"}) == kExitRuntime);
  }

  TEST_CASE("llm probe with the echo backend") {
    const auto r = run_binary("llm probe --backend echo");
    CHECK(r.code == 0);
    CHECK(r.out.starts_with("echo-mock:"));
  }

  TEST_CASE("global config file and overrides") {
    TempDir dir;
    pljp::testing::write_file(dir / "cfg.json", R"({"backend": "echo", "jobs": 2})");
    CHECK(run_cli({"--config", (dir / "cfg.json").string(), "llm", "probe"}) == kExitOk);
    pljp::testing::write_file(dir / "bad.json", R"({"no_such_key": 1})");
    CHECK(run_cli({"--config", (dir / "bad.json").string(), "llm", "probe"}) != kExitOk);

    GlobalConfig g;
    g.overlay(nlohmann::json::parse(R"({"n": 5, "seed": 9})"));
    CHECK(g.n == 5);
    CHECK(g.seed == 9);
    CHECK_THROWS(g.overlay(nlohmann::json::parse(R"({"bogus": true})")));
  }

  TEST_CASE("predictor topn prints ranked candidates") {
    const auto& s = smoke();
    pljp::testing::write_file(s.root / "fact.txt", "The defendant secretly took a bicycle worth 3000 yuan.");
    const auto r = run_binary("predictor topn --model " + q(s.root / "models/charge.bin") + " --fact-file " +
                              q(s.root / "fact.txt") + " --n 3");
    CHECK(r.code == 0);
    const auto lines = text::split(text::trim(r.out), "\n");
    REQUIRE(lines.size() == 3);
    CHECK(lines[0].starts_with("1\t"));
    CHECK(lines[2].starts_with("3\t"));
  }

  TEST_CASE("retriever query returns one precedent per candidate") {
    const auto& s = smoke();
    pljp::testing::write_file(s.root / "rf.json", R"({"sub": "greed", "obj": "took a bicycle", "ex": "confessed"})");
    const auto r = run_binary("retriever query --index " + q(s.root / "work/index.bin") + " --model " +
                              q(s.root / "models/retriever.bin") + " --db " + q(s.root / "work/db.jsonl") +
                              " --rf " + q(s.root / "rf.json") + " --task charge --candidates theft,robbery");
    CHECK(r.code == 0);
    const auto lines = text::split(text::trim(r.out), "\n");
    REQUIRE(lines.size() == 2);
    const auto first = nlohmann::json::parse(lines[0]);
    CHECK(first["label"] == "theft");
    CHECK(first["charge"] == "theft");
    CHECK(first.contains("rf"));
    CHECK(nlohmann::json::parse(lines[1])["charge"] == "robbery");
  }

  TEST_CASE("judge predict on one case") {
    const auto& s = smoke();
    const auto tests = load_cases(s.root / "data/test.jsonl").cases;
    save_cases(s.root / "one.jsonl", std::vector<Case>{tests.front()});
    const auto r = run_binary("judge predict --case-file " + q(s.root / "one.jsonl") + " --models " +
                              q(s.root / "models") + " --index " + q(s.root / "work/index.bin") + " --db " +
                              q(s.root / "work/db.jsonl") + " --vocab " + q(s.root / "data/vocab.json") +
                              " --ablate no_dependency");
    CHECK(r.code == 0);
    const auto j = nlohmann::json::parse(text::trim(r.out));
    CHECK(j["id"] == tests.front().id);
    CHECK(j["stages"].size() == 3);
    CHECK(j["stages"][0]["provenance"] == "llm");
  }

  TEST_CASE("eval run, then record and replay its transcript") {
    const auto& s = smoke();
    CHECK(run_cli({"--log-level", "error", "eval", "run", "--config", s.spec().string()}) == kExitOk);
    const auto report = pljp::testing::read_file(s.root / "out/report.json");
    CHECK(run_cli({"--log-level", "error", "llm", "record-fixtures", "--transcript",
                   (s.root / "out/transcript.jsonl").string(), "--out", (s.root / "fixtures.jsonl").string()}) ==
          kExitOk);

    auto j = nlohmann::json::parse(pljp::testing::read_file(s.spec()));
    j["backend"] = "replay:fixtures.jsonl";
    j["output"] = "out_replay";
    pljp::testing::write_file(s.root / "replay.json", j.dump());
    CHECK(run_cli({"--log-level", "error", "eval", "run", "--config", (s.root / "replay.json").string()}) ==
          kExitOk);
    const auto a = nlohmann::json::parse(report);
    const auto b = nlohmann::json::parse(pljp::testing::read_file(s.root / "out_replay/report.json"));
    CHECK(a["metrics"] == b["metrics"]);
    CHECK(a["provenance"] == b["provenance"]);
  }
}
