#include "pljp/eval.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pljp/binio.hpp"
#include "pljp/parallel.hpp"
#include "pljp/text.hpp"
#include "pljp/util.hpp"

namespace pljp {

using nlohmann::json;
using nlohmann::ordered_json;

// --- Metrics ----------------------------------------------------------------

ConfusionTable confusion_counts(std::span<const LabelId> preds, std::span<const LabelId> golds,
                                const LabelVocab& vocab) {
  if (preds.size() != golds.size()) {
    throw EvalError(EvalErrc::length_mismatch,
                    fmt::format("{} predictions for {} gold labels", preds.size(), golds.size()));
  }
  ConfusionTable t;
  t.task = vocab.task();
  t.labels = vocab.labels();
  t.classes.assign(vocab.size(), {});
  auto index = [&](const LabelId& l) {
    auto i = vocab.index_of(l);
    if (!i) throw EvalError(EvalErrc::unknown_label, fmt::format("label '{}' not in the {} vocabulary", l,
                                                                 task_name(vocab.task())));
    return *i;
  };
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto p = index(preds[k]);
    const auto g = index(golds[k]);
    if (p == g) {
      ++t.classes[g].tp;
      ++t.correct;
    } else {
      ++t.classes[p].fp;
      ++t.classes[g].fn;
    }
    ++t.total;
  }
  return t;
}

std::vector<ClassScores> class_scores(const ConfusionTable& table) {
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  std::vector<ClassScores> out;
  out.reserve(table.classes.size());
  for (const auto& c : table.classes) {
    ClassScores s;
    s.precision = ratio(c.tp, c.tp + c.fp);
    s.recall = ratio(c.tp, c.tp + c.fn);
    s.f1 = s.precision + s.recall == 0 ? 0.0 : 2 * s.precision * s.recall / (s.precision + s.recall);
    out.push_back(s);
  }
  return out;
}

Metrics metrics(const ConfusionTable& table) {
  if (table.total == 0 || table.classes.empty()) {
    throw EvalError(EvalErrc::empty_table, "metrics of an empty confusion table");
  }
  const auto scores = class_scores(table);
  Metrics m;
  for (const auto& s : scores) {
    m.ma_p += s.precision;
    m.ma_r += s.recall;
    m.ma_f += s.f1;
  }
  const auto k = static_cast<double>(scores.size());
  m.acc = 100.0 * static_cast<double>(table.correct) / static_cast<double>(table.total);
  m.ma_p = 100.0 * m.ma_p / k;
  m.ma_r = 100.0 * m.ma_r / k;
  m.ma_f = 100.0 * m.ma_f / k;
  return m;
}

// --- Spec -------------------------------------------------------------------

std::filesystem::path ExperimentSpec::resolve(const std::string& p) const {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

ExperimentSpec ExperimentSpec::from_json(const json& j, const std::filesystem::path& base_dir) {
  ExperimentSpec s;
  s.base_dir = base_dir;
  try {
    s.test = j.at("test").get<std::string>();
    s.models = j.at("models").get<std::string>();
    s.index = j.at("index").get<std::string>();
    s.database = j.at("database").get<std::string>();
    s.output = j.at("output").get<std::string>();
    if (j.contains("vocab") && !j["vocab"].is_null()) s.vocab = j["vocab"].get<std::string>();
    s.backend = j.value("backend", s.backend);
    if (j.contains("reorg_cache") && !j["reorg_cache"].is_null()) s.reorg_cache = j["reorg_cache"].get<std::string>();
    if (j.contains("reorg_instruction") && !j["reorg_instruction"].is_null()) {
      s.reorg_instruction = j["reorg_instruction"].get<std::string>();
    }
    s.n = j.value("n", s.n);
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      if (a.is_array()) {
        std::vector<std::string> flags = a.get<std::vector<std::string>>();
        s.ablation = Ablation::parse(text::join(flags, ","));
      } else {
        s.ablation = Ablation::parse(a.get<std::string>());
      }
    }
    s.seed = j.value("seed", s.seed);
    s.prompt_budget = j.value("prompt_budget", s.prompt_budget);
    s.raw_excerpt = j.value("raw_excerpt", s.raw_excerpt);
    s.jobs = j.value("jobs", s.jobs);
  } catch (const json::exception& e) {
    throw EvalError(EvalErrc::bad_config, fmt::format("experiment spec: {}", e.what()));
  } catch (const JudgeError& e) {
    throw EvalError(EvalErrc::bad_config, fmt::format("experiment spec: {}", e.what()));
  }
  if (s.n == 0) throw EvalError(EvalErrc::bad_n, "n must be at least 1");
  if (s.jobs == 0) throw EvalError(EvalErrc::bad_config, "jobs must be at least 1");
  return s;
}

ExperimentSpec ExperimentSpec::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw EvalError(EvalErrc::bad_config, fmt::format("{}: {}", path.string(), e.what()));
  }
  return from_json(j, path.parent_path());
}

ordered_json ExperimentSpec::to_json() const {
  ordered_json j;
  j["test"] = test;
  j["models"] = models;
  j["index"] = index;
  j["database"] = database;
  j["output"] = output;
  j["vocab"] = vocab ? json(*vocab) : json(nullptr);
  j["backend"] = backend;
  j["reorg_cache"] = reorg_cache ? json(*reorg_cache) : json(nullptr);
  j["reorg_instruction"] = reorg_instruction ? json(*reorg_instruction) : json(nullptr);
  j["n"] = n;
  j["ablation"] = ablation.to_string();
  j["seed"] = seed;
  j["prompt_budget"] = prompt_budget;
  j["raw_excerpt"] = raw_excerpt;
  j["jobs"] = jobs;
  return j;
}

// --- Report -----------------------------------------------------------------

namespace {

ordered_json metrics_json(const Metrics& m) {
  auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
  ordered_json j;
  j["acc"] = round2(m.acc);
  j["ma_p"] = round2(m.ma_p);
  j["ma_r"] = round2(m.ma_r);
  j["ma_f"] = round2(m.ma_f);
  return j;
}

std::string metrics_header() { return fmt::format("{:<8} {:>7} {:>7} {:>7} {:>7}", "task", "Acc", "Ma-P", "Ma-R", "Ma-F"); }

std::string metrics_row(std::string_view name, const Metrics& m) {
  return fmt::format("{:<8} {:>7.2f} {:>7.2f} {:>7.2f} {:>7.2f}", name, m.acc, m.ma_p, m.ma_r, m.ma_f);
}

}  // namespace

ordered_json MetricsReport::to_json() const {
  ordered_json j;
  j["fingerprint"] = fingerprint;
  ordered_json tj;
  for (auto t : kAllTasks) tj[std::string(task_name(t))] = metrics_json(tasks[task_index(t)]);
  j["metrics"] = std::move(tj);
  j["macro_average_over"] = "all vocabulary labels";
  ordered_json pj;
  for (auto t : kAllTasks) {
    ordered_json h;
    for (const auto& [k, v] : provenance[task_index(t)]) h[k] = v;
    pj[std::string(task_name(t))] = std::move(h);
  }
  j["provenance"] = std::move(pj);
  j["cases"] = cases;
  j["skipped_cases"] = skipped_cases;
  j["reorg_failures"] = reorg_failures;
  j["stage_failures"] = stage_failures;
  j["config"] = config;
  j["fingerprint_inputs"] = fingerprint_inputs;
  return j;
}

std::string MetricsReport::render_table() const {
  std::string out = metrics_header() + "\n";
  for (auto t : kAllTasks) out += metrics_row(task_name(t), tasks[task_index(t)]) + "\n";
  out += fmt::format("\ncases {} (skipped {}), reorganization failures {}, stage failures {}\n", cases,
                     skipped_cases, reorg_failures, stage_failures);
  for (auto t : kAllTasks) {
    std::vector<std::string> parts;
    for (const auto& [k, v] : provenance[task_index(t)]) parts.push_back(fmt::format("{}={}", k, v));
    out += fmt::format("provenance {}: {}\n", task_name(t), text::join(parts, " "));
  }
  out += "macro averages over all vocabulary labels\n";
  out += fmt::format("fingerprint {}\n", fingerprint);
  return out;
}

MetricsReport score_records(std::span<const CaseRecord> records, const VocabSet& vocab) {
  MetricsReport r;
  r.cases = records.size();
  for (auto t : kAllTasks) {
    std::vector<LabelId> preds, golds;
    auto& hist = r.provenance[task_index(t)];
    for (auto p : {Provenance::llm, Provenance::fallback_top1, Provenance::fallback_parse}) {
      hist[std::string(provenance_name(p))] = 0;
    }
    for (const auto& rec : records) {
      preds.push_back(rec.judgment.labels[t]);
      golds.push_back(rec.gold[t]);
      ++hist[std::string(provenance_name(rec.judgment.provenance[task_index(t)]))];
    }
    r.tasks[task_index(t)] = metrics(confusion_counts(preds, golds, vocab[t]));
  }
  for (const auto& rec : records) {
    if (rec.reorg_error) ++r.reorg_failures;
    for (const auto& s : rec.stages) {
      if (s.error) ++r.stage_failures;
    }
  }
  return r;
}

// --- Runner -----------------------------------------------------------------

namespace {

std::string file_hash(const std::filesystem::path& p) { return hex64(fnv1a(read_file(p))); }

std::string resolve_backend(const ExperimentSpec& spec) {
  const auto colon = spec.backend.find(':');
  if (colon == std::string::npos) return spec.backend;
  return spec.backend.substr(0, colon + 1) + spec.resolve(spec.backend.substr(colon + 1)).string();
}

ReorgTemplates reorg_templates_for(const ExperimentSpec& spec) {
  return spec.reorg_instruction ? ReorgTemplates::with_instruction_file(spec.resolve(*spec.reorg_instruction))
                                : ReorgTemplates::builtin();
}

void write_text(const std::filesystem::path& p, const std::string& s) { write_file(p, s); }

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  const auto out_dir = spec.resolve(spec.output);
  std::filesystem::create_directories(out_dir);

  const auto db = CaseDatabase::load(spec.resolve(spec.database));
  const auto vocab_path = spec.vocab ? spec.resolve(*spec.vocab) : spec.resolve(spec.models) / "vocab.json";
  const auto models = JudgeModels::load(spec.resolve(spec.models), spec.resolve(spec.index), &db, vocab_path);
  for (auto t : kAllTasks) {
    if (spec.n < 1 || spec.n > models.vocab[t].size()) {
      throw EvalError(EvalErrc::bad_n, fmt::format("n = {} outside [1, {}] for {}", spec.n, models.vocab[t].size(),
                                                   task_name(t)));
    }
  }

  LoadOptions load_opts;
  load_opts.vocab = &models.vocab;
  load_opts.strict = false;
  auto loaded = load_cases(spec.resolve(spec.test), load_opts);
  if (loaded.cases.empty()) throw EvalError(EvalErrc::bad_config, "no test cases to evaluate");

  auto backend = options.backend ? options.backend : make_backend(resolve_backend(spec));
  GateOptions gate_opts;
  gate_opts.prompt_budget = spec.prompt_budget;
  gate_opts.transcript = std::make_shared<Transcript>(out_dir / "transcript.jsonl");
  LlmGate gate(backend, gate_opts);

  ReorgCache cache(out_dir / "reorg_cache.jsonl");
  if (spec.reorg_cache) cache.seed_from(spec.resolve(*spec.reorg_cache));

  JudgeConfig config;
  config.n = spec.n;
  config.ablation = spec.ablation;
  config.reorg_templates = reorg_templates_for(spec);
  config.raw_excerpt = spec.raw_excerpt;

  ExperimentResult result;
  result.records.resize(loaded.cases.size());
  parallel_for(loaded.cases.size(), spec.jobs, [&](std::size_t i) {
    predict_judgment(loaded.cases[i], models, gate, cache, config, &result.records[i]);
  });

  auto& report = result.report;
  report = score_records(result.records, models.vocab);
  report.skipped_cases = loaded.skipped_lines.size();
  report.config = spec.to_json();

  ordered_json fp;
  fp["judge_templates"] = config.templates.version();
  fp["reorg_templates"] = config.reorg_templates.version();
  fp["seed"] = spec.seed;
  fp["n"] = spec.n;
  fp["ablation"] = spec.ablation.to_string();
  fp["backend"] = std::string(backend->kind());
  fp["prompt_budget"] = spec.prompt_budget;
  fp["raw_excerpt"] = spec.raw_excerpt;
  ordered_json files;
  const auto models_dir = spec.resolve(spec.models);
  files["vocab"] = file_hash(vocab_path);
  for (auto t : kAllTasks) files[std::string(task_name(t))] = file_hash(models_dir / fmt::format("{}.bin", task_name(t)));
  files["retriever"] = file_hash(models_dir / "retriever.bin");
  files["index"] = file_hash(spec.resolve(spec.index));
  files["database"] = file_hash(spec.resolve(spec.database));
  files["test"] = file_hash(spec.resolve(spec.test));
  fp["files"] = std::move(files);
  report.fingerprint = hex64(fnv1a(fp.dump()));
  report.fingerprint_inputs = std::move(fp);

  write_text(out_dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(out_dir / "report.txt", report.render_table());
  std::string log;
  for (const auto& rec : result.records) log += rec.to_json().dump() + "\n";
  write_text(out_dir / "cases.jsonl", log);
  spdlog::info("evaluated {} cases into {}", result.records.size(), out_dir.string());
  return result;
}

// --- Ablations --------------------------------------------------------------

namespace {

std::string join_output(const std::string& base, const std::string& sub) {
  return (std::filesystem::path(base) / sub).generic_string();
}

}  // namespace

std::vector<AblationRow> run_ablations(const ExperimentSpec& base, const RunOptions& options) {
  struct Variant {
    const char* name;
    const char* slug;
    bool Ablation::*flag;
  };
  const std::array<Variant, 6> variants{{
      {"base", "base", nullptr},
      {"w/o p", "wo_p", &Ablation::no_precedents},
      {"w/o c", "wo_c", &Ablation::no_candidates},
      {"w/o d", "wo_d", &Ablation::no_dependency},
      {"w/o r", "wo_r", &Ablation::raw_fact_retrieval},
      {"w/ e", "w_e", &Ablation::with_explanation},
  }};
  std::vector<AblationRow> rows;
  std::optional<std::string> shared_cache = base.reorg_cache;
  for (const auto& v : variants) {
    ExperimentSpec spec = base;
    spec.output = join_output(base.output, v.slug);
    if (v.flag) spec.ablation.*(v.flag) = true;
    spec.reorg_cache = shared_cache;
    AblationRow row{v.name, v.slug, spec.ablation, run_experiment(spec, options).report};
    // Later variants reuse the base run's reorganizations.
    if (!shared_cache) shared_cache = join_output(spec.output, "reorg_cache.jsonl");
    rows.push_back(std::move(row));
  }

  ordered_json j = ordered_json::array();
  std::string table = fmt::format("{:<8}", "variant");
  for (auto t : kAllTasks) table += fmt::format(" | {:^31}", task_name(t));
  table += "\n" + fmt::format("{:<8}", "");
  for (std::size_t i = 0; i < 3; ++i) table += fmt::format(" | {:>7}{:>8}{:>8}{:>8}", "Acc", "Ma-P", "Ma-R", "Ma-F");
  table += "\n";
  for (const auto& r : rows) {
    ordered_json rj;
    rj["variant"] = r.name;
    rj["ablation"] = r.ablation.to_string();
    rj["fingerprint"] = r.report.fingerprint;
    ordered_json tj;
    table += fmt::format("{:<8}", r.name);
    for (auto t : kAllTasks) {
      const auto& m = r.report[t];
      tj[std::string(task_name(t))] = metrics_json(m);
      table += fmt::format(" | {:>7.2f}{:>8.2f}{:>8.2f}{:>8.2f}", m.acc, m.ma_p, m.ma_r, m.ma_f);
    }
    table += "\n";
    rj["metrics"] = std::move(tj);
    j.push_back(std::move(rj));
  }
  const auto out_dir = base.resolve(base.output);
  write_text(out_dir / "ablation.json", j.dump(2) + "\n");
  write_text(out_dir / "ablation.txt", table);
  return rows;
}

// --- Sweep ------------------------------------------------------------------

std::vector<SweepRow> sweep_precedents(const ExperimentSpec& base, std::span<const std::size_t> ns,
                                       const RunOptions& options) {
  if (ns.empty()) throw EvalError(EvalErrc::bad_n, "no n values to sweep");
  const auto vocab =
      VocabSet::load(base.vocab ? base.resolve(*base.vocab) : base.resolve(base.models) / "vocab.json");
  for (auto n : ns) {
    for (auto t : kAllTasks) {
      if (n < 1 || n > vocab[t].size()) {
        throw EvalError(EvalErrc::bad_n,
                        fmt::format("n = {} outside [1, {}] for {}", n, vocab[t].size(), task_name(t)));
      }
    }
  }
  std::vector<SweepRow> rows;
  std::optional<std::string> shared_cache = base.reorg_cache;
  for (auto n : ns) {
    ExperimentSpec spec = base;
    spec.n = n;
    spec.output = join_output(base.output, fmt::format("n{}", n));
    spec.reorg_cache = shared_cache;
    const auto report = run_experiment(spec, options).report;
    if (!shared_cache) shared_cache = join_output(spec.output, "reorg_cache.jsonl");
    for (auto t : kAllTasks) rows.push_back({n, t, report[t]});
  }

  ordered_json j = ordered_json::array();
  std::string tsv = "n\ttask\tacc\tma_p\tma_r\tma_f\n";
  for (const auto& r : rows) {
    ordered_json rj;
    rj["n"] = r.n;
    rj["task"] = task_name(r.task);
    rj["metrics"] = metrics_json(r.metrics);
    j.push_back(std::move(rj));
    tsv += fmt::format("{}\t{}\t{:.2f}\t{:.2f}\t{:.2f}\t{:.2f}\n", r.n, task_name(r.task), r.metrics.acc,
                       r.metrics.ma_p, r.metrics.ma_r, r.metrics.ma_f);
  }
  const auto out_dir = base.resolve(base.output);
  write_text(out_dir / "sweep.json", j.dump(2) + "\n");
  write_text(out_dir / "sweep.tsv", tsv);
  return rows;
}

}  // namespace pljp
