#include <doctest.h>

#include <algorithm>
#include <set>

#include "harness.hpp"
#include "pljp/corpus.hpp"

namespace pljp {
bool operator==(const CaseDatabase& a, const CaseDatabase& b) { return a.entries == b.entries; }
}  // namespace pljp

using namespace pljp;
using pljp::testing::TempDir;

namespace {

std::string record(const std::string& id, int article, const std::string& charge, int term) {
  return R"({"id":")" + id + R"(","fact":"The defendant took a bag.","article":)" + std::to_string(article) +
         R"(,"charge":")" + charge + R"(","term_months":)" + std::to_string(term) + R"(,"date":"2021-01-02"})";
}

std::vector<Case> synthetic_cases(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Case> cases;
  for (std::size_t i = 0; i < n; ++i) {
    Case c;
    c.id = "c" + std::to_string(i);
    c.fact = pljp::testing::random_sentence(rng, 3, 10);
    c.article = 260 + static_cast<int>(rng.below(5));
    c.charge = "charge" + std::to_string(rng.below(4));
    c.term_months = static_cast<int>(rng.below(200));
    c.date = "2020-01-01";
    cases.push_back(c);
  }
  return cases;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("term bins are half-open and cover every term") {
    const TermBins bins;
    CHECK(bins.count() == 10);
    CHECK(bins.bin(0) == 0);
    CHECK(bins.bin(5) == 0);
    CHECK(bins.bin(6) == 1);
    CHECK(bins.bin(179) == 8);
    CHECK(bins.bin(180) == 9);
    CHECK(bins.bin(100000) == 9);
    CHECK(bins.bin(kLifeSentence) == 9);
    CHECK(bins.bin(kDeathSentence) == 9);
    CHECK_THROWS_AS(bins.bin(-5), CorpusError);
    CHECK(bins.display(0) == "less than 6 months");
    CHECK(bins.display(4) == "24 to 36 months");
    CHECK(bins.display(9) == "180 months or more");
  }

  TEST_CASE("every term lands in exactly one bin (property)") {
    const TermBins bins;
    Rng rng(3);
    for (int i = 0; i < 5000; ++i) {
      const int t = static_cast<int>(rng.below(400));
      const int b = bins.bin(t);
      REQUIRE(b >= 0);
      REQUIRE(b < static_cast<int>(bins.count()));
      CHECK(bins.edges()[b] <= t);
      CHECK(t < bins.edges()[b + 1]);
    }
  }

  TEST_CASE("bad bin definitions are rejected") {
    CHECK_THROWS_AS(TermBins({1, TermBins::kOpenEnd}), CorpusError);
    CHECK_THROWS_AS(TermBins({0, 10}), CorpusError);
    CHECK_THROWS_AS(TermBins({0, 10, 10, TermBins::kOpenEnd}), CorpusError);
    CHECK_THROWS_AS(TermBins({0, TermBins::kOpenEnd}, 3), CorpusError);
    const TermBins custom({0, 12, TermBins::kOpenEnd}, 0, 1);
    CHECK(custom.bin(kLifeSentence) == 0);
    CHECK(TermBins::from_json(custom.to_json()).edges() == custom.edges());
  }

  TEST_CASE("parse errors carry kind and line") {
    const std::string good = record("a", 264, "theft", 10);
    auto kind_of = [](const std::string& text) {
      try {
        parse_cases(text);
      } catch (const CorpusError& e) {
        return std::make_pair(e.kind(), e.line());
      }
      FAIL("expected a CorpusError");
      return std::make_pair(CorpusErrc::empty_input, std::size_t{0});
    };
    CHECK(kind_of(good + "\n{not json}\n") == std::make_pair(CorpusErrc::malformed_line, std::size_t{2}));
    CHECK(kind_of(R"({"id":"x","fact":"f","article":1,"charge":"c","date":"2020-01-01"})").first ==
          CorpusErrc::missing_field);
    CHECK(kind_of(good + "\n" + good).first == CorpusErrc::duplicate_id);
    CHECK(kind_of(record("b", 264, "theft", -7)).first == CorpusErrc::negative_term);
    CHECK(kind_of(R"({"id":"x","fact":"f","article":1,"charge":"c","term_months":1,"date":"2020-13-01"})").first ==
          CorpusErrc::malformed_line);
  }

  TEST_CASE("blank lines are ignored and facts are normalized") {
    const auto r = parse_cases("\n" + record("a", 264, "theft", 10) + "\n\n");
    REQUIRE(r.cases.size() == 1);
    const auto r2 = parse_cases(R"({"id":"n","fact":"  café   x ","article":1,"charge":"c","term_months":1,"date":"2020-01-01"})");
    CHECK(r2.cases[0].fact == "caf\xC3\xA9 x");
  }

  TEST_CASE("strict and lenient vocabulary checks") {
    const auto cases = parse_cases(record("a", 264, "theft", 10)).cases;
    const VocabSet vocab = VocabSet::from_cases(cases);
    const std::string text = record("a", 264, "theft", 10) + "\n" + record("b", 999, "arson", 1);
    CHECK_THROWS_AS(parse_cases(text, {&vocab, true}), CorpusError);
    const auto lenient = parse_cases(text, {&vocab, false});
    CHECK(lenient.cases.size() == 1);
    CHECK(lenient.skipped_lines == std::vector<std::size_t>{2});
  }

  TEST_CASE("save and load round-trip") {
    TempDir dir;
    const auto cases = synthetic_cases(20, 9);
    save_cases(dir / "c.jsonl", cases);
    CHECK(load_cases(dir / "c.jsonl").cases == cases);
  }

  TEST_CASE("split sizes and partition (property)") {
    CHECK(split_sizes(300, {}) == std::array<std::size_t, 3>{240, 30, 30});
    CHECK(split_sizes(10, {0.4, 0.3, 0.3}) == std::array<std::size_t, 3>{4, 3, 3});
    CHECK_THROWS_AS(split_sizes(10, {0.5, 0.5, 0.5}), CorpusError);
    CHECK_THROWS_AS(split_dataset({}, {}, 1), CorpusError);

    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
      const auto n = 1 + rng.below(120);
      const auto cases = synthetic_cases(n, trial);
      const auto seed = rng.next();
      const auto split = split_dataset(cases, {}, seed);
      const auto sizes = split_sizes(n, {});
      CHECK(split.train.size() == sizes[0]);
      CHECK(split.validation.size() == sizes[1]);
      CHECK(split.test.size() == sizes[2]);
      std::set<std::string> ids;
      for (const auto* part : {&split.train, &split.validation, &split.test}) {
        for (const auto& c : *part) CHECK(ids.insert(c.id).second);
      }
      CHECK(ids.size() == n);
      const auto again = split_dataset(cases, {}, seed);
      CHECK(again.test == split.test);
      CHECK(again.train == split.train);
    }
  }

  TEST_CASE("vocabulary is sorted, numeric for articles, and round-trips") {
    const auto cases = synthetic_cases(50, 4);
    const auto vocab = VocabSet::from_cases(cases);
    CHECK(std::is_sorted(vocab.article.labels().begin(), vocab.article.labels().end(),
                         [](const auto& a, const auto& b) { return std::stoi(a) < std::stoi(b); }));
    CHECK(vocab.term.size() == vocab.bins.count());
    CHECK(vocab.term.display(4) == "24 to 36 months");
    const auto back = VocabSet::from_json(vocab.to_json());
    CHECK(back.article == vocab.article);
    CHECK(back.charge.hash() == vocab.charge.hash());
    CHECK_THROWS_AS(vocab.charge.require_index("nope"), CorpusError);
    CHECK(vocab.charge.find_display(vocab.charge.display(0)) == std::optional<std::size_t>{0});
  }

  TEST_CASE("case database sampling") {
    const auto cases = synthetic_cases(40, 5);
    std::unordered_map<std::string, ReorganizedFact> rfs;
    for (const auto& c : cases) rfs[c.id] = {"s " + c.id, "o", "e", ""};
    const auto db = sample_case_database(cases, rfs, 15, 3);
    CHECK(db.size() == 15);
    std::set<std::string> ids;
    for (const auto& e : db.entries) {
      CHECK(ids.insert(e.id).second);
      CHECK(e.rf.source_case_id == e.id);
      CHECK(e.rf.sub == "s " + e.id);
    }
    CHECK(sample_case_database(cases, rfs, 15, 3) == db);
    CHECK(CaseDatabase::from_jsonl(db.to_jsonl()).entries == db.entries);
    CHECK_THROWS_AS(sample_case_database(cases, rfs, 41, 3), CorpusError);
    rfs.erase(cases[0].id);
    try {
      sample_case_database(cases, rfs, 40, 3);
      FAIL("expected missing_reorganization");
    } catch (const CorpusError& e) {
      CHECK(e.kind() == CorpusErrc::missing_reorganization);
    }
  }

  TEST_CASE("fixture corpus loads cleanly") {
    const auto r = load_cases(pljp::testing::fixture_cases());
    CHECK(r.cases.size() == 300);
    const auto vocab = VocabSet::from_cases(r.cases);
    CHECK(vocab.article.size() == 12);
    CHECK(vocab.charge.size() == 8);
  }
}

