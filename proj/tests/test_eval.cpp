#include <doctest.h>

#include <nlohmann/json.hpp>

#include "harness.hpp"
#include "pljp/eval.hpp"
#include "pljp/text.hpp"

using namespace pljp;
using pljp::testing::TempDir;

namespace {

LabelVocab ab_vocab(std::size_t k = 2) {
  std::vector<LabelId> labels;
  for (std::size_t i = 0; i < k; ++i) labels.push_back(std::string(1, static_cast<char>('A' + i)));
  return LabelVocab(Task::charge, labels);
}

// Smoke artifacts shared by the pipeline tests in this file.
const pljp::testing::SmokeLayout& smoke() {
  static TempDir dir("pljp-eval-smoke");
  static const auto layout = pljp::testing::build_smoke(dir.path());
  return layout;
}

std::vector<Case> smoke_test_cases() { return load_cases(smoke().root / "data/test.jsonl").cases; }
VocabSet smoke_vocab() { return VocabSet::load(smoke().root / "data/vocab.json"); }

ExperimentSpec spec_with_output(const std::string& out) {
  auto spec = ExperimentSpec::load(smoke().spec());
  spec.output = out;
  return spec;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("confusion counts over the full vocabulary") {
    const auto vocab = ab_vocab(3);
    const std::vector<LabelId> golds = {"A", "A", "B", "B"}, preds = {"A", "B", "B", "B"};
    const auto t = confusion_counts(preds, golds, vocab);
    CHECK(t.classes[0] == ClassCounts{1, 0, 1});
    CHECK(t.classes[1] == ClassCounts{2, 1, 0});
    CHECK(t.classes[2] == ClassCounts{0, 0, 0});
    CHECK(t.correct == 3);
    CHECK(t.total == 4);
    const std::vector<LabelId> one = {"A"}, unknown = {"Z"};
    CHECK_THROWS_AS(confusion_counts(one, golds, vocab), EvalError);
    CHECK_THROWS_AS(confusion_counts(unknown, one, vocab), EvalError);
  }

  TEST_CASE("hand-computed metrics") {
    const std::vector<LabelId> golds = {"A", "A", "B", "B"}, preds = {"A", "B", "B", "B"};
    const auto m = metrics(confusion_counts(preds, golds, ab_vocab()));
    CHECK(m.acc == doctest::Approx(75.00).epsilon(1e-4));
    CHECK(m.ma_p == doctest::Approx(83.333).epsilon(1e-4));
    CHECK(m.ma_r == doctest::Approx(75.00).epsilon(1e-4));
    CHECK(m.ma_f == doctest::Approx(73.333).epsilon(1e-4));
  }

  TEST_CASE("perfect predictions and absent classes") {
    const std::vector<LabelId> golds = {"A", "B"};
    const auto perfect = metrics(confusion_counts(golds, golds, ab_vocab()));
    CHECK(perfect == Metrics{100, 100, 100, 100});
    const auto with_absent = metrics(confusion_counts(golds, golds, ab_vocab(4)));
    CHECK(with_absent.acc == 100);
    CHECK(with_absent.ma_f == doctest::Approx(50));
    CHECK_THROWS_AS(metrics(ConfusionTable{}), EvalError);
  }

  TEST_CASE("accuracy equals micro recall; bounds hold (property)") {
    Rng rng(51);
    for (int t = 0; t < 200; ++t) {
      const std::size_t k = 2 + rng.below(6), n = 1 + rng.below(50);
      const auto vocab = ab_vocab(k);
      std::vector<LabelId> preds, golds;
      for (std::size_t i = 0; i < n; ++i) {
        preds.push_back(vocab.label(rng.below(k)));
        golds.push_back(vocab.label(rng.below(k)));
      }
      const auto table = confusion_counts(preds, golds, vocab);
      std::size_t tp = 0, fn = 0, fp = 0;
      for (const auto& c : table.classes) {
        tp += c.tp;
        fn += c.fn;
        fp += c.fp;
      }
      CHECK(tp + fn == n);
      CHECK(fp == fn);
      const auto m = metrics(table);
      CHECK(m.acc == doctest::Approx(100.0 * static_cast<double>(tp) / static_cast<double>(n)));
      for (double v : {m.acc, m.ma_p, m.ma_r, m.ma_f}) {
        CHECK(v >= 0);
        CHECK(v <= 100);
      }
    }
  }

  TEST_CASE("experiment spec parsing and echo") {
    TempDir dir;
    pljp::testing::write_file(dir / "exp.json",
                              R"({"test": "t.jsonl", "models": "m", "index": "i.bin", "database": "db.jsonl",
                                  "output": "out", "ablation": ["no_precedents", "no_dependency"], "n": 2})");
    const auto s = ExperimentSpec::load(dir / "exp.json");
    CHECK(s.resolve(s.test) == dir / "t.jsonl");
    CHECK(s.resolve("/abs/x") == "/abs/x");
    CHECK(s.ablation.no_precedents);
    CHECK(s.ablation.no_dependency);
    CHECK(s.n == 2);
    const auto j = s.to_json();
    CHECK(j["ablation"] == "no_precedents,no_dependency");
    CHECK(j["backend"] == "echo");
    CHECK(j["prompt_budget"] == kDefaultPromptBudget);
    CHECK(ExperimentSpec::from_json(nlohmann::json::parse(j.dump()), dir.path()).to_json() == j);

    auto bad = nlohmann::json::parse(j.dump());
    bad.erase("test");
    CHECK_THROWS_AS(ExperimentSpec::from_json(bad, dir.path()), EvalError);
    bad = nlohmann::json::parse(j.dump());
    bad["n"] = 0;
    CHECK_THROWS_AS(ExperimentSpec::from_json(bad, dir.path()), EvalError);
    bad = nlohmann::json::parse(j.dump());
    bad["ablation"] = "nonsense";
    CHECK_THROWS_AS(ExperimentSpec::from_json(bad, dir.path()), EvalError);
  }

  TEST_CASE("run writes report, table, case log and transcript") {
    const auto res = run_experiment(spec_with_output("out_basic"));
    const auto out = smoke().root / "out_basic";
    for (const char* f : {"report.json", "report.txt", "cases.jsonl", "transcript.jsonl", "reorg_cache.jsonl"}) {
      CHECK(std::filesystem::exists(out / f));
    }
    const auto report = nlohmann::json::parse(pljp::testing::read_file(out / "report.json"));
    CHECK(report["cases"] == smoke_test_cases().size());
    CHECK(report["macro_average_over"] == "all vocabulary labels");
    for (const char* t : {"article", "charge", "term"}) {
      CHECK(report["provenance"][t].contains("fallback-top1"));
      CHECK(report["metrics"][t].contains("ma_f"));
    }
    CHECK(report["config"]["n"] == 3);
    CHECK(report["fingerprint"] == res.report.fingerprint);
    const auto lines = text::split(text::trim(pljp::testing::read_file(out / "cases.jsonl")), "\n");
    CHECK(lines.size() == res.records.size());
    CHECK(pljp::testing::read_file(out / "report.txt") == res.report.render_table());
    // Scoring the log again gives the same metrics.
    const auto again = score_records(res.records, smoke_vocab());
    for (auto t : kAllTasks) CHECK(again[t] == res.report[t]);
  }

  TEST_CASE("results do not depend on the worker count") {
    auto one = spec_with_output("out_j1");
    one.jobs = 1;
    auto four = spec_with_output("out_j4");
    four.jobs = 4;
    const auto a = run_experiment(one);
    const auto b = run_experiment(four);
    CHECK(pljp::testing::read_file(smoke().root / "out_j1/cases.jsonl") ==
          pljp::testing::read_file(smoke().root / "out_j4/cases.jsonl"));
    for (auto t : kAllTasks) CHECK(a.report[t] == b.report[t]);
  }

  TEST_CASE("fingerprint tracks configuration") {
    auto s = spec_with_output("out_fp1");
    const auto a = run_experiment(s).report.fingerprint;
    s.output = "out_fp2";
    s.n = 2;
    const auto b = run_experiment(s).report.fingerprint;
    CHECK(a != b);
  }

  TEST_CASE("failed reorganization falls back to the raw fact") {
    ScriptedConfig c;
    c.faults.push_back({"reorg", LlmErrc::remote_failure});
    c.default_response = "LABEL: none";
    auto s = spec_with_output("out_noreorg");
    s.reorg_cache.reset();
    const auto res = run_experiment(s, RunOptions{std::make_shared<ScriptedMock>(c)});
    CHECK(res.report.reorg_failures == res.records.size());
    const auto& rec = res.records.front();
    REQUIRE(rec.reorg_error);
    const auto& prompt = rec.stages.front().prompt;
    CHECK(prompt.find("Subjective motivation: none stated") != std::string::npos);
    const auto cases = smoke_test_cases();
    CHECK(prompt.find("Objective behavior: " + cases.front().fact) != std::string::npos);
    for (auto t : kAllTasks) CHECK(res.report.provenance[task_index(t)].at("fallback-parse") == res.records.size());
  }

  TEST_CASE("every stage degrades to top-1 when the judge backend fails") {
    const auto vocab = smoke_vocab();
    auto backend = pljp::testing::gold_if_present(smoke_test_cases(), vocab, {{"judge", LlmErrc::remote_timeout}});
    const auto res = run_experiment(spec_with_output("out_down"), RunOptions{backend});
    for (auto t : kAllTasks) CHECK(res.report.provenance[task_index(t)].at("fallback-top1") == res.records.size());
    CHECK(res.report.stage_failures == 3 * res.records.size());
    for (const auto& rec : res.records) {
      for (const auto& st : rec.stages) {
        CHECK(st.label == st.candidates.front());
        REQUIRE(st.error);
        CHECK(st.error->starts_with("RemoteTimeout"));
      }
    }
  }

  TEST_CASE("n outside the vocabulary is rejected") {
    auto s = spec_with_output("out_badn");
    s.n = 50;
    try {
      run_experiment(s);
      FAIL("expected bad_n");
    } catch (const EvalError& e) {
      CHECK(e.kind() == EvalErrc::bad_n);
    }
    const std::vector<std::size_t> ns = {1, 99};
    CHECK_THROWS_AS(sweep_precedents(s, ns), EvalError);
  }

  TEST_CASE("ablation matrix and sweep outputs") {
    const auto rows = run_ablations(spec_with_output("out_abl"));
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].name == "base");
    CHECK(rows[1].name == "w/o p");
    CHECK(rows[1].ablation.no_precedents);
    CHECK(rows[5].ablation.with_explanation);
    CHECK(std::filesystem::exists(smoke().root / "out_abl/ablation.txt"));
    CHECK(std::filesystem::exists(smoke().root / "out_abl/wo_c/report.json"));

    const std::vector<std::size_t> ns = {1, 2};
    const auto sweep = sweep_precedents(spec_with_output("out_sweep"), ns);
    REQUIRE(sweep.size() == 6);
    CHECK(sweep[0].n == 1);
    CHECK(sweep[0].task == Task::article);
    CHECK(sweep[5].n == 2);
    CHECK(sweep[5].task == Task::term);
    const auto tsv = pljp::testing::read_file(smoke().root / "out_sweep/sweep.tsv");
    CHECK(tsv.starts_with("n\ttask\tacc\tma_p\tma_r\tma_f\n"));
  }
}
