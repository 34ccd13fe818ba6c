// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "harness.hpp"
#include "pljp/eval.hpp"
#include "pljp/judge.hpp"
#include "pljp/predictor.hpp"
#include "pljp/retriever.hpp"
#include "pljp/text.hpp"

using namespace pljp;
using pljp::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Built once and shared by the pipeline criteria.
const pljp::testing::SmokeLayout& smoke() {
  static TempDir dir("pljp-acceptance");
  static const auto layout = pljp::testing::build_smoke(dir.path());
  return layout;
}

ExperimentSpec smoke_spec(const std::string& output) {
  auto s = ExperimentSpec::load(smoke().spec());
  s.output = output;
  return s;
}

std::vector<Case> smoke_tests() { return load_cases(smoke().root / "data/test.jsonl").cases; }
VocabSet smoke_vocab() { return VocabSet::load(smoke().root / "data/vocab.json"); }

// 1 -------------------------------------------------------------------------

Outcome precedent_selection() {
  const auto t0 = Clock::now();
  Rng rng(101);
  std::size_t mismatches = 0, queries = 0;
  for (int db = 0; db < 100; ++db) {
    const std::size_t size = 1 + rng.below(1000), dim = 2 + rng.below(31), k = 2 + rng.below(9);
    PrecedentIndex idx;
    idx.dim = dim;
    for (std::size_t i = 0; i < size; ++i) {
      idx.ids.push_back(fmt::format("case-{:05d}", rng.below(100000)));
      for (std::size_t j = 0; j < dim; ++j) {
        // Coarse values make exact ties between distinct entries likely.
        idx.vectors.push_back(static_cast<float>(static_cast<int>(rng.below(5)) - 2));
      }
      if (std::all_of(idx.vectors.end() - static_cast<long>(dim), idx.vectors.end(), [](float x) { return x == 0; })) {
        idx.vectors.back() = 1;
      }
      idx.verdicts.push_back({"1", fmt::format("L{}", rng.below(k)), "0"});
    }
    std::set<LabelId> present;
    for (const auto& v : idx.verdicts) present.insert(v.charge);

    for (int q = 0; q < 5; ++q, ++queries) {
      std::vector<float> query(dim);
      for (auto& x : query) x = static_cast<float>(rng.uniform(-1, 1));
      CandidateSet cands;
      cands.task = Task::charge;
      for (const auto& l : present) {
        if (rng.below(2) || cands.labels.empty()) cands.labels.push_back(l);
      }
      rng.shuffle(cands.labels);
      const auto got = select_precedents(query, cands, idx);

      for (std::size_t c = 0; c < cands.labels.size(); ++c) {
        std::optional<std::size_t> best;
        double best_score = 0;
        for (std::size_t i = 0; i < size; ++i) {
          if (idx.verdicts[i].charge != cands.labels[c]) continue;
          const std::span<const float> row(idx.vectors.data() + i * dim, dim);
          const double s = cosine_similarity(std::span<const float>(query), row);
          if (!best || s > best_score || (s == best_score && idx.ids[i] < idx.ids[*best])) {
            best = i;
            best_score = s;
          }
        }
        if (c >= got.size() || got[c].case_id != idx.ids[*best] || got[c].verdict.charge != cands.labels[c]) {
          ++mismatches;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 60,
          fmt::format("{} queries over 100 databases, {} mismatches, {:.1f}s", queries, mismatches, secs)};
}

// 2 -------------------------------------------------------------------------

Outcome metric_correctness() {
  const LabelVocab ab(Task::charge, {"A", "B"});
  const std::vector<LabelId> golds = {"A", "A", "B", "B"}, preds = {"A", "B", "B", "B"};
  const auto hand = metrics(confusion_counts(preds, golds, ab));
  const bool hand_ok = std::abs(hand.acc - 75.0) < 0.01 && std::abs(hand.ma_p - 83.33) < 0.01 &&
                       std::abs(hand.ma_r - 75.0) < 0.01 && std::abs(hand.ma_f - 73.33) < 0.01;

  Rng rng(202);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 2 + rng.below(9), n = 1 + rng.below(200);
    std::vector<LabelId> labels;
    for (std::size_t i = 0; i < k; ++i) labels.push_back(fmt::format("c{}", i));
    const LabelVocab vocab(Task::charge, labels);
    std::vector<LabelId> p, g;
    for (std::size_t i = 0; i < n; ++i) {
      g.push_back(labels[rng.below(k)]);
      p.push_back(rng.below(3) == 0 ? g.back() : labels[rng.below(k)]);
    }
    const auto m = metrics(confusion_counts(p, g, vocab));

    double correct = 0, sp = 0, sr = 0, sf = 0;
    for (std::size_t i = 0; i < n; ++i) correct += p[i] == g[i];
    for (const auto& c : labels) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += p[i] == c && g[i] == c;
        fp += p[i] == c && g[i] != c;
        fn += p[i] != c && g[i] == c;
      }
      const double pr = tp + fp > 0 ? tp / (tp + fp) : 0;
      const double rc = tp + fn > 0 ? tp / (tp + fn) : 0;
      sp += pr;
      sr += rc;
      sf += pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0;
    }
    const double kk = static_cast<double>(k);
    worst = std::max({worst, std::abs(m.acc / 100 - correct / static_cast<double>(n)),
                      std::abs(m.ma_p / 100 - sp / kk), std::abs(m.ma_r / 100 - sr / kk),
                      std::abs(m.ma_f / 100 - sf / kk)});
  }
  return {hand_ok && worst < 1e-9,
          fmt::format("hand example Acc {:.2f} MaP {:.2f} MaR {:.2f} MaF {:.2f}; 1000 random tables, max error {:.2e}",
                      hand.acc, hand.ma_p, hand.ma_r, hand.ma_f, worst)};
}

// 3 -------------------------------------------------------------------------

Outcome head_gradients_check() {
  Rng rng(303);
  const double eps = 1e-5;
  double worst = 0;
  auto loss_of = [](const ClassifierHead& head, std::span<const double> h, std::size_t y) {
    return -std::log(softmax(head.logits(h))[y]);
  };
  auto rel = [](double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::max(std::abs(analytic), std::abs(numeric)));
  };
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 2 + rng.below(9), d = 2 + rng.below(15);
    ClassifierHead head{m, d, {}, {}};
    for (std::size_t i = 0; i < m * d; ++i) head.weights.push_back(rng.uniform(-1, 1));
    for (std::size_t i = 0; i < m; ++i) head.bias.push_back(rng.uniform(-1, 1));
    const auto h = pljp::testing::random_vector(rng, d);
    const std::size_t y = rng.below(m);
    const auto g = head_gradients(head, h, y);
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
      auto plus = head, minus = head;
      plus.weights[i] += eps;
      minus.weights[i] -= eps;
      worst = std::max(worst, rel(g.d_weights[i], (loss_of(plus, h, y) - loss_of(minus, h, y)) / (2 * eps)));
    }
    for (std::size_t i = 0; i < m; ++i) {
      auto plus = head, minus = head;
      plus.bias[i] += eps;
      minus.bias[i] -= eps;
      worst = std::max(worst, rel(g.d_bias[i], (loss_of(plus, h, y) - loss_of(minus, h, y)) / (2 * eps)));
    }
  }
  return {worst < 1e-4, fmt::format("50 instances, max relative error {:.2e}", worst)};
}

// 4 -------------------------------------------------------------------------

Outcome separable_training() {
  const auto t0 = Clock::now();
  const auto train = pljp::testing::separable_two_class(200, 404);
  const auto held = pljp::testing::separable_two_class(100, 405);
  const PredictorHyper hy;
  PredictorTrainReport rep;
  const auto model = train_predictor(train.facts, train.labels, Task::charge, train.vocab, hy, &rep);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < held.facts.size(); ++i) {
    const auto c = candidate_labels(model.predict(held.facts[i]), 1, held.vocab);
    correct += c.indices.front() == held.labels[i];
  }
  const double acc = 100.0 * static_cast<double>(correct) / static_cast<double>(held.facts.size());
  const double secs = seconds_since(t0);
  return {acc >= 99 && rep.final_accuracy * 100 >= 99 && secs < 30,
          fmt::format("{} epochs, train accuracy {:.1f}%, held-out accuracy {:.1f}%, {:.1f}s", hy.epochs,
                      rep.final_accuracy * 100, acc, secs)};
}

// 5 -------------------------------------------------------------------------

Outcome retriever_training() {
  std::vector<std::string> docs;
  for (const auto& c : load_cases(pljp::testing::fixture_cases()).cases) docs.push_back(c.fact);
  const RetrieverConfig cfg;
  RetrieverTrainReport rep;
  const auto model = train_retriever(docs, cfg, &rep);

  Rng rng(505);
  std::vector<std::vector<double>> a, b;
  for (const auto& d : docs) {
    std::vector<std::size_t> buckets;
    for (const auto& tok : text::tokenize(d)) buckets.push_back(model.bucket_of(tok));
    a.push_back(model.embed_buckets(random_crop(buckets, cfg.crop_min, cfg.crop_max, rng)));
    b.push_back(model.embed_buckets(random_crop(buckets, cfg.crop_min, cfg.crop_max, rng)));
  }
  double same = 0, cross = 0;
  std::size_t cross_n = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    same += cosine_similarity(a[i], b[i]);
    for (std::size_t j = 0; j < docs.size(); ++j) {
      if (i == j) continue;
      cross += cosine_similarity(a[i], b[j]);
      ++cross_n;
    }
  }
  same /= static_cast<double>(docs.size());
  cross /= static_cast<double>(cross_n);
  const double ln_batch = std::log(static_cast<double>(cfg.batch));
  const double init = rep.loss_curve.front();
  const bool init_ok = std::abs(init - ln_batch) <= 0.2 * ln_batch;
  return {same - cross >= 0.1 && init_ok,
          fmt::format("same-doc {:.3f}, cross-doc {:.3f}, margin {:.3f}; initial loss {:.3f} vs ln({}) = {:.3f}", same,
                      cross, same - cross, init, cfg.batch, ln_batch)};
}

// 6 -------------------------------------------------------------------------

Outcome gold_oracle_accuracy() {
  const auto tests = smoke_tests();
  const auto vocab = smoke_vocab();
  const auto spec = smoke_spec("acc_gold");
  const auto res = run_experiment(spec, RunOptions{pljp::testing::gold_if_present(tests, vocab)});

  std::string detail;
  bool ok = true;
  for (auto task : kAllTasks) {
    const auto model = PredictiveModel::load(smoke().root / "models" / (std::string(task_name(task)) + ".bin"));
    std::size_t hits = 0;
    for (const auto& c : tests) {
      const auto cands = candidate_labels(model.predict(c.fact), spec.n, vocab[task]);
      const auto gold = verdict_of(c, vocab.bins)[task];
      hits += std::find(cands.labels.begin(), cands.labels.end(), gold) != cands.labels.end();
    }
    const double hit_rate = 100.0 * static_cast<double>(hits) / static_cast<double>(tests.size());
    const double acc = res.report[task].acc;
    ok = ok && std::abs(acc - hit_rate) < 1e-9;
    detail += fmt::format("{}{} Acc {:.2f} vs top-{} hit rate {:.2f}", detail.empty() ? "" : "; ", task_name(task),
                          acc, spec.n, hit_rate);
  }
  return {ok, detail};
}

// 7 -------------------------------------------------------------------------

Outcome sweep_monotone() {
  const auto tests = smoke_tests();
  const auto vocab = smoke_vocab();
  const std::vector<std::size_t> ns = {1, 2, 3, 4, 5};
  const auto rows =
      sweep_precedents(smoke_spec("acc_sweep"), ns, RunOptions{pljp::testing::gold_if_present(tests, vocab)});
  std::map<Task, std::vector<double>> acc;
  for (const auto& r : rows) acc[r.task].push_back(r.metrics.acc);
  bool ok = rows.size() == 15;
  std::string detail;
  for (auto task : kAllTasks) {
    const auto& v = acc[task];
    ok = ok && std::is_sorted(v.begin(), v.end());
    detail += fmt::format("{}{}:", detail.empty() ? "" : "; ", task_name(task));
    for (double x : v) detail += fmt::format(" {:.1f}", x);
  }
  return {ok, detail};
}

// 8 -------------------------------------------------------------------------

std::vector<std::string> drop_blocks(const std::string& prompt, const std::function<bool(const std::string&)>& drop) {
  std::vector<std::string> kept;
  for (auto& b : text::split(prompt, "\n\n")) {
    if (!drop(b)) kept.push_back(std::move(b));
  }
  return kept;
}

bool has_line(const std::string& prompt, std::string_view prefix) {
  for (const auto& l : text::split(prompt, "\n")) {
    if (l.starts_with(prefix)) return true;
  }
  return false;
}

Outcome ablation_prompts() {
  // Every judge answer is unparseable, so each stage takes the predictor's
  // top-1 label whatever the prompt says and all variants see the same
  // upstream labels.
  ScriptedConfig cfg;
  auto echo = std::make_shared<EchoMock>();
  cfg.rule = [echo](const LlmRequest& r) -> std::optional<std::string> {
    if (r.tag.starts_with("reorg")) return echo->generate(r);
    return std::nullopt;
  };
  cfg.default_response = "LABEL: none";
  const RunOptions opts{std::make_shared<ScriptedMock>(cfg)};

  auto run = [&](const std::string& out, auto set) {
    auto s = smoke_spec(out);
    set(s.ablation);
    return run_experiment(s, opts).records;
  };
  const auto base = run("abl_base", [](Ablation&) {});
  const auto wo_p = run("abl_p", [](Ablation& a) { a.no_precedents = true; });
  const auto wo_d = run("abl_d", [](Ablation& a) { a.no_dependency = true; });
  const auto wo_c = run("abl_c", [](Ablation& a) { a.no_candidates = true; });

  auto is_precedent = [](const std::string& b) { return b.starts_with("Precedent "); };
  auto is_upstream = [](const std::string& b) { return b.starts_with(kUpstreamArticle); };
  auto is_candidate = [](const std::string& b) { return b.starts_with(kCandidateLinePrefix); };

  std::size_t prompts = 0, bad_p = 0, bad_d = 0, bad_c = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (std::size_t s = 0; s < base[i].stages.size(); ++s) {
      const auto& bp = base[i].stages[s].prompt;
      const auto& pp = wo_p[i].stages[s].prompt;
      const auto& dp = wo_d[i].stages[s].prompt;
      const auto& cp = wo_c[i].stages[s].prompt;
      ++prompts;
      if (has_line(pp, "Precedent ") || drop_blocks(bp, is_precedent) != text::split(pp, "\n\n")) ++bad_p;
      if (has_line(dp, kUpstreamArticle) || has_line(dp, kUpstreamCharge) ||
          drop_blocks(bp, is_upstream) != text::split(dp, "\n\n")) {
        ++bad_d;
      }
      if (has_line(cp, kCandidateLinePrefix) || drop_blocks(bp, is_candidate) != text::split(cp, "\n\n")) ++bad_c;
    }
  }
  return {prompts > 0 && bad_p + bad_d + bad_c == 0,
          fmt::format("{} prompts per variant; differing beyond the removed section: w/o p {}, w/o d {}, w/o c {}",
                      prompts, bad_p, bad_d, bad_c)};
}

// 9 -------------------------------------------------------------------------

Outcome reproducibility() {
  const auto t0 = Clock::now();
  TempDir one("pljp-repro-a"), two("pljp-repro-b");
  std::vector<std::pair<std::string, std::string>> files;
  for (const TempDir* d : {&one, &two}) {
    const auto layout = pljp::testing::build_smoke(d->path());
    if (pljp::testing::run_cli({"--log-level", "error", "eval", "run", "--config", layout.spec().string()}) != 0) {
      return {false, "eval run failed"};
    }
    files.emplace_back(pljp::testing::read_file(layout.root / "out/report.json"),
                       pljp::testing::read_file(layout.root / "work/index.bin"));
  }
  const bool report_same = files[0].first == files[1].first;
  const bool index_same = files[0].second == files[1].second;
  const double secs = seconds_since(t0);
  return {report_same && index_same && secs < 300,
          fmt::format("report.json {}, index.bin {}, {:.1f}s", report_same ? "identical" : "differs",
                      index_same ? "identical" : "differs", secs)};
}

// 10 ------------------------------------------------------------------------

Outcome stage_fault_isolation() {
  const auto tests = smoke_tests();
  const auto vocab = smoke_vocab();
  const auto res = run_experiment(
      smoke_spec("acc_fault"),
      RunOptions{pljp::testing::gold_if_present(tests, vocab, {{"judge.charge", LlmErrc::remote_failure}})});
  std::size_t bad = 0;
  for (const auto& rec : res.records) {
    if (rec.stages.size() != 3) {
      ++bad;
      continue;
    }
    const auto& article = rec.stages[0];
    const auto& charge = rec.stages[1];
    const auto& term = rec.stages[2];
    const bool charge_ok = charge.provenance == Provenance::fallback_top1 && charge.label == charge.candidates.front();
    const bool others_ok = article.provenance != Provenance::fallback_top1 && !article.error &&
                           term.provenance != Provenance::fallback_top1 && !term.error;
    const auto& display = vocab.charge.display(vocab.charge.require_index(charge.label));
    const bool carried = term.prompt.find(std::string(kUpstreamCharge) + display) != std::string::npos;
    bad += !(charge_ok && others_ok && carried && rec.judgment.labels.charge == charge.label);
  }
  return {bad == 0 && !res.records.empty(),
          fmt::format("{} cases, {} violating fault isolation", res.records.size(), bad)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"precedent selection matches exhaustive search", precedent_selection},
      {"metrics match hand example and brute force", metric_correctness},
      {"head gradients match finite differences", head_gradients_check},
      {"predictor separates a separable set", separable_training},
      {"retriever learns crop similarity", retriever_training},
      {"gold-if-present accuracy equals top-n hit rate", gold_oracle_accuracy},
      {"accuracy non-decreasing in n", sweep_monotone},
      {"ablations remove exactly their section", ablation_prompts},
      {"rebuild is byte-identical", reproducibility},
      {"stage failure stays isolated", stage_fault_isolation},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    fmt::print("{} {:>2} {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
