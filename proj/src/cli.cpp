#include "pljp/cli.hpp"

#include <functional>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pljp/binio.hpp"
#include "pljp/config.hpp"
#include "pljp/corpus.hpp"
#include "pljp/eval.hpp"
#include "pljp/judge.hpp"
#include "pljp/llmgate.hpp"
#include "pljp/parallel.hpp"
#include "pljp/predictor.hpp"
#include "pljp/reorganizer.hpp"
#include "pljp/retriever.hpp"
#include "pljp/text.hpp"

namespace pljp {

using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("pljp");
  if (!logger) {
    logger = spdlog::stderr_color_mt("pljp");
    logger->set_pattern("%^%l%$: %v");
  }
  spdlog::set_default_logger(logger);
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw UsageError(fmt::format("unknown log level '{}'", level));
  spdlog::set_level(lvl);
}

std::optional<std::string> suggest(const std::string& word, const std::vector<std::string>& names) {
  std::optional<std::string> best;
  std::size_t best_d = std::max<std::size_t>(2, word.size() / 3) + 1;
  for (const auto& n : names) {
    const auto d = text::levenshtein(word, n);
    if (d < best_d) {
      best_d = d;
      best = n;
    }
  }
  return best;
}

std::vector<std::string> subcommand_names(CLI::App* app) {
  std::vector<std::string> out;
  for (auto* s : app->get_subcommands([](CLI::App*) { return true; })) out.push_back(s->get_name());
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  for (const auto& part : text::split(csv, ",")) {
    const auto t = std::string(text::trim(part));
    if (t.empty()) continue;
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(t, &pos);
      if (pos != t.size()) throw std::invalid_argument(t);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError(fmt::format("'{}' is not a non-negative integer", t));
    }
  }
  return out;
}

std::vector<std::string> parse_list(const std::string& csv) {
  std::vector<std::string> out;
  for (const auto& part : text::split(csv, ",")) {
    auto t = std::string(text::trim(part));
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::unordered_map<std::string, ReorganizedFact> load_reorganized(const std::filesystem::path& path) {
  std::unordered_map<std::string, ReorganizedFact> out;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(read_file(path), "\n")) {
    ++line_no;
    if (text::trim(raw).empty()) continue;
    try {
      const auto j = json::parse(raw);
      const auto id = j.at("id").get<std::string>();
      out[id] = {j.at("sub").get<std::string>(), j.at("obj").get<std::string>(), j.at("ex").get<std::string>(), id};
    } catch (const json::exception& e) {
      throw Error(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return out;
}

struct Cli {
  CLI::App app{"Precedent-enhanced legal judgment prediction pipeline", "pljp"};
  std::map<CLI::App*, std::function<int()>> actions;
  GlobalConfig cfg;

  // Global flags.
  std::string log_level;
  std::size_t jobs = 1;
  std::uint64_t seed = 1;
  std::size_t prompt_budget = kDefaultPromptBudget;
  std::string config_path;
  CLI::Option* o_log = nullptr;
  CLI::Option* o_jobs = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_budget = nullptr;

  std::vector<std::shared_ptr<void>> storage;

  // Option storage owned by this instance, so repeated dispatch calls in one
  // process never share state.
  template <typename T>
  T& hold(T init = T{}) {
    auto p = std::make_shared<T>(std::move(init));
    storage.push_back(p);
    return *p;
  }

  CLI::App* group(const std::string& name, const std::string& desc) {
    auto* g = app.add_subcommand(name, desc);
    g->allow_extras();
    g->fallthrough();
    return g;
  }

  CLI::App* leaf(CLI::App* parent, const std::string& name, const std::string& desc, std::function<int()> fn) {
    auto* l = parent->add_subcommand(name, desc);
    l->allow_extras();
    l->fallthrough();
    actions[l] = std::move(fn);
    return l;
  }

  std::string backend_or_default(const CLI::Option* opt, const std::string& value) const {
    return opt->count() ? value : cfg.backend;
  }

  LlmGate make_gate(const std::string& backend, const std::string& transcript) const {
    GateOptions opts;
    opts.prompt_budget = cfg.prompt_budget;
    if (!transcript.empty()) opts.transcript = std::make_shared<Transcript>(transcript);
    return LlmGate(make_backend(backend), opts);
  }

  Cli();
  void add_corpus();
  void add_reorg();
  void add_predictor();
  void add_retriever();
  void add_judge();
  void add_eval();
  void add_llm();
  int run(int argc, const char* const* argv);
};

Cli::Cli() {
  app.allow_extras();
  app.require_subcommand(0, 1);
  o_log = app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  o_jobs = app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  o_seed = app.add_option("--seed", seed, "Seed for every randomized step");
  o_budget = app.add_option("--prompt-budget", prompt_budget, "Prompt length limit in code points");
  app.add_option("--config", config_path, "JSON file with global settings")->check(CLI::ExistingFile);
  app.footer("Credentials for the remote backend are read from LLM_API_KEY unless the backend config names "
             "another variable.");
  add_corpus();
  add_reorg();
  add_predictor();
  add_retriever();
  add_judge();
  add_eval();
  add_llm();
}

// --- corpus -----------------------------------------------------------------

void Cli::add_corpus() {
  auto* g = group("corpus", "Validate, split and sample case datasets");

  {
    auto& path = hold<std::string>();
    auto& vocab = hold<std::string>();
    auto& lenient = hold<bool>(false);
    auto* c = leaf(g, "validate", "Check a case file and summarize it", [&] {
      LoadOptions opts;
      std::optional<VocabSet> v;
      if (!vocab.empty()) v = VocabSet::load(vocab);
      opts.vocab = v ? &*v : nullptr;
      opts.strict = !lenient;
      const auto result = load_cases(path, opts);
      const auto set = VocabSet::from_cases(result.cases, v ? v->bins : TermBins{});
      fmt::print("{}: {} cases, {} articles, {} charges, {} skipped\n", path, result.cases.size(), set.article.size(),
                 set.charge.size(), result.skipped_lines.size());
      return kExitOk;
    });
    c->add_option("path", path, "Case file (JSONL)")->required()->check(CLI::ExistingFile);
    c->add_option("--vocab", vocab, "Resolve labels against this vocabulary")->check(CLI::ExistingFile);
    c->add_flag("--lenient", lenient, "Skip records with unknown labels instead of failing");
  }
  {
    auto& path = hold<std::string>();
    auto& ratios = hold<std::string>("0.8,0.1,0.1");
    auto& out_dir = hold<std::string>();
    auto& bins_file = hold<std::string>();
    auto* c = leaf(g, "split", "Seeded train/validation/test split plus label vocabularies", [&] {
      const auto r = text::split(ratios, ",");
      if (r.size() != 3) throw UsageError("--ratios needs three comma-separated values");
      SplitRatios sr;
      try {
        sr = {std::stod(r[0]), std::stod(r[1]), std::stod(r[2])};
      } catch (const std::exception&) {
        throw UsageError(fmt::format("cannot parse --ratios '{}'", ratios));
      }
      TermBins bins;
      if (!bins_file.empty()) bins = TermBins::from_json(json::parse(read_file(bins_file)));
      const auto cases = load_cases(path).cases;
      const auto vocab = VocabSet::from_cases(cases, bins);
      const auto split = split_dataset(cases, sr, cfg.seed);
      const std::filesystem::path out(out_dir);
      save_cases(out / "train.jsonl", split.train);
      save_cases(out / "validation.jsonl", split.validation);
      save_cases(out / "test.jsonl", split.test);
      vocab.save(out / "vocab.json");
      fmt::print("train {} validation {} test {}\n", split.train.size(), split.validation.size(), split.test.size());
      return kExitOk;
    });
    c->add_option("path", path, "Case file (JSONL)")->required()->check(CLI::ExistingFile);
    c->add_option("--ratios", ratios, "train,validation,test")->capture_default_str();
    c->add_option("--out-dir", out_dir, "Output directory")->required();
    c->add_option("--bins", bins_file, "Prison-term bin definition (JSON)")->check(CLI::ExistingFile);
  }
  {
    auto& train = hold<std::string>();
    auto& reorganized = hold<std::string>();
    auto& vocab = hold<std::string>();
    auto& out = hold<std::string>();
    auto& size = hold<std::size_t>(kDefaultDatabaseSize);
    auto* c = leaf(g, "build-db", "Sample the case database from reorganized training cases", [&] {
      const auto v = VocabSet::load(vocab);
      LoadOptions opts;
      opts.vocab = &v;
      const auto cases = load_cases(train, opts).cases;
      const auto db = sample_case_database(cases, load_reorganized(reorganized), size, cfg.seed, v.bins);
      db.save(out);
      fmt::print("{} entries\n", db.size());
      return kExitOk;
    });
    c->add_option("--train", train, "Training split")->required()->check(CLI::ExistingFile);
    c->add_option("--reorganized", reorganized, "Output of `reorg run`")->required()->check(CLI::ExistingFile);
    c->add_option("--vocab", vocab, "Vocabulary from `corpus split`")->required()->check(CLI::ExistingFile);
    c->add_option("--size", size, "Number of cases")->capture_default_str();
    c->add_option("--out", out, "Database file (JSONL)")->required();
  }
}

// --- reorg ------------------------------------------------------------------

void Cli::add_reorg() {
  auto* g = group("reorg", "Fact reorganization");
  auto& input = hold<std::string>();
  auto& backend = hold<std::string>();
  auto& cache_path = hold<std::string>();
  auto& out = hold<std::string>();
  auto& instruction = hold<std::string>();
  auto& transcript = hold<std::string>();
  auto& o_backend = hold<CLI::Option*>(nullptr);
  auto* c = leaf(g, "run", "Reorganize every case of a file", [&] {
    auto gate = make_gate(backend_or_default(o_backend, backend), transcript);
    std::unique_ptr<ReorgCache> cache =
        cache_path.empty() ? std::make_unique<ReorgCache>() : std::make_unique<ReorgCache>(cache_path);
    const auto templates =
        instruction.empty() ? ReorgTemplates::builtin() : ReorgTemplates::with_instruction_file(instruction);
    const auto cases = load_cases(input).cases;
    std::vector<std::optional<ReorganizedFact>> results(cases.size());
    std::vector<std::string> errors(cases.size());
    parallel_for(cases.size(), cfg.jobs, [&](std::size_t i) {
      try {
        results[i] = reorganize_fact(cases[i].fact, gate, *cache, templates, cases[i].id);
      } catch (const ReorgError& e) {
        errors[i] = e.what();
      } catch (const LlmError& e) {
        errors[i] = fmt::format("{}: {}", llm_errc_name(e.kind()), e.what());
      }
    });
    std::string lines;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      if (!results[i]) {
        spdlog::error("{}: {}", cases[i].id, errors[i]);
        continue;
      }
      nlohmann::ordered_json j;
      j["id"] = cases[i].id;
      j["sub"] = results[i]->sub;
      j["obj"] = results[i]->obj;
      j["ex"] = results[i]->ex;
      lines += j.dump() + "\n";
      ++ok;
    }
    write_file(out, lines);
    fmt::print("reorganized {} of {} cases with {} LLM calls\n", ok, cases.size(), gate.calls());
    return ok == cases.size() ? kExitOk : kExitRuntime;
  });
  c->add_option("--input", input, "Case file (JSONL)")->required()->check(CLI::ExistingFile);
  o_backend = c->add_option("--backend", backend, "echo, scripted:<file>, replay:<file> or remote:<file>");
  c->add_option("--cache", cache_path, "Persistent reorganization cache (JSONL)");
  c->add_option("--out", out, "Reorganized facts, one JSON object per case")->required();
  c->add_option("--instruction", instruction, "Replacement instruction template file")->check(CLI::ExistingFile);
  c->add_option("--transcript", transcript, "Append every LLM exchange to this JSONL file");
}

// --- predictor --------------------------------------------------------------

void Cli::add_predictor() {
  auto* g = group("predictor", "Candidate-label models");
  {
    auto& task = hold<std::string>();
    auto& data = hold<std::string>();
    auto& vocab = hold<std::string>();
    auto& out = hold<std::string>();
    auto& hyper = hold<PredictorHyper>();
    auto* c = leaf(g, "train", "Train one task's model", [&] {
      const auto v = VocabSet::load(vocab);
      LoadOptions opts;
      opts.vocab = &v;
      const auto cases = load_cases(data, opts).cases;
      PredictorHyper h = hyper;
      h.seed = cfg.seed;
      PredictorTrainReport report;
      const auto model = train_predictor(cases, parse_task(task), v, h, &report);
      model.save(out);
      fmt::print("{}: loss {:.4f} -> {:.4f}, train accuracy {:.2f}%\n", task, report.loss_curve.front(),
                 report.final_loss, 100.0 * report.final_accuracy);
      return kExitOk;
    });
    c->add_option("--task", task, "article, charge or term")->required();
    c->add_option("--data", data, "Training split")->required()->check(CLI::ExistingFile);
    c->add_option("--vocab", vocab, "Vocabulary from `corpus split`")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "Model file")->required();
    c->add_option("--epochs", hyper.epochs, "")->capture_default_str();
    c->add_option("--lr", hyper.lr, "")->capture_default_str();
    c->add_option("--batch", hyper.batch, "")->capture_default_str();
    c->add_option("--dim", hyper.dim, "")->capture_default_str();
    c->add_option("--buckets", hyper.buckets, "")->capture_default_str();
    c->add_option("--init-scale", hyper.init_scale, "Embedding initialization half-width")->capture_default_str();
    c->add_option("--head-init-scale", hyper.head_init_scale, "Classifier weight initialization half-width")->capture_default_str();
  }
  {
    auto& model_path = hold<std::string>();
    auto& fact_file = hold<std::string>();
    auto& n = hold<std::size_t>(kDefaultCandidates);
    auto* c = leaf(g, "topn", "Top-n candidate labels for one fact", [&] {
      const auto model = PredictiveModel::load(model_path);
      const auto fact = text::normalize_space(text::nfc(read_file(fact_file)));
      const auto cands = candidate_labels(model.predict(fact), n, model.vocab);
      for (std::size_t i = 0; i < cands.size(); ++i) {
        fmt::print("{}\t{}\t{}\t{:.6f}\n", i + 1, cands.labels[i], model.vocab.display_of(cands.labels[i]),
                   cands.probs[i]);
      }
      return kExitOk;
    });
    c->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
    c->add_option("--fact-file", fact_file, "Plain-text fact")->required()->check(CLI::ExistingFile);
    c->add_option("--n", n, "")->capture_default_str();
  }
}

// --- retriever --------------------------------------------------------------

void Cli::add_retriever() {
  auto* g = group("retriever", "Precedent retrieval");
  {
    auto& corpus = hold<std::string>();
    auto& out = hold<std::string>();
    auto& raw = hold<bool>(false);
    auto& rc = hold<RetrieverConfig>();
    auto* c = leaf(g, "train", "Contrastive training on a case database", [&] {
      std::vector<std::string> texts;
      if (raw) {
        for (const auto& cs : load_cases(corpus).cases) texts.push_back(cs.fact);
      } else {
        for (const auto& e : CaseDatabase::load(corpus).entries) texts.push_back(concat_reorganized(e.rf));
      }
      RetrieverConfig conf = rc;
      conf.seed = cfg.seed;
      RetrieverTrainReport report;
      const auto model = train_retriever(texts, conf, &report);
      model.save(out);
      fmt::print("InfoNCE {:.4f} -> {:.4f} over {} documents\n", report.loss_curve.front(), report.loss_curve.back(),
                 texts.size());
      return kExitOk;
    });
    c->add_option("--corpus", corpus, "Case database (or raw cases with --raw)")->required()->check(
        CLI::ExistingFile);
    c->add_flag("--raw", raw, "Train on raw facts of a case file");
    c->add_option("--out", out, "Model file")->required();
    c->add_option("--epochs", rc.epochs, "")->capture_default_str();
    c->add_option("--lr", rc.lr, "")->capture_default_str();
    c->add_option("--batch", rc.batch, "")->capture_default_str();
    c->add_option("--temperature", rc.temperature, "")->capture_default_str();
    c->add_option("--dim", rc.dim, "")->capture_default_str();
    c->add_option("--buckets", rc.buckets, "")->capture_default_str();
  }
  {
    auto& model_path = hold<std::string>();
    auto& db_path = hold<std::string>();
    auto& out = hold<std::string>();
    auto* c = leaf(g, "index", "Embed every database entry", [&] {
      const auto model = RetrievalModel::load(model_path);
      const auto idx = index_database(CaseDatabase::load(db_path), model);
      idx.save(out);
      fmt::print("{} vectors of dimension {}\n", idx.size(), idx.dim);
      return kExitOk;
    });
    c->add_option("--model", model_path, "Retrieval model")->required()->check(CLI::ExistingFile);
    c->add_option("--db", db_path, "Case database")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "Index file")->required();
  }
  {
    auto& index_path = hold<std::string>();
    auto& model_path = hold<std::string>();
    auto& db_path = hold<std::string>();
    auto& rf_path = hold<std::string>();
    auto& candidates = hold<std::string>();
    auto& task = hold<std::string>("charge");
    auto* c = leaf(g, "query", "One precedent per candidate label", [&] {
      const auto model = RetrievalModel::load(model_path);
      auto idx = PrecedentIndex::load(index_path, model);
      if (!db_path.empty()) idx.attach(CaseDatabase::load(db_path));
      const auto j = json::parse(read_file(rf_path));
      const ReorganizedFact rf{j.at("sub").get<std::string>(), j.at("obj").get<std::string>(),
                               j.at("ex").get<std::string>(), {}};
      CandidateSet cands;
      cands.task = parse_task(task);
      cands.labels = parse_list(candidates);
      if (cands.labels.empty()) throw UsageError("--candidates is empty");
      for (const auto& p : select_precedents(rf, cands, idx, model)) {
        nlohmann::ordered_json out;
        out["label"] = p.matched_label;
        out["case_id"] = p.case_id;
        out["score"] = p.score;
        out["article"] = p.verdict.article;
        out["charge"] = p.verdict.charge;
        out["term"] = p.verdict.term;
        if (!db_path.empty()) out["rf"] = {{"sub", p.rf.sub}, {"obj", p.rf.obj}, {"ex", p.rf.ex}};
        fmt::print("{}\n", out.dump());
      }
      return kExitOk;
    });
    c->add_option("--index", index_path, "Index file")->required()->check(CLI::ExistingFile);
    c->add_option("--model", model_path, "Retrieval model the index was built with")->required()->check(
        CLI::ExistingFile);
    c->add_option("--db", db_path, "Case database, to print precedent texts")->check(CLI::ExistingFile);
    c->add_option("--rf", rf_path, "Reorganized fact {\"sub\", \"obj\", \"ex\"}")->required()->check(
        CLI::ExistingFile);
    c->add_option("--candidates", candidates, "Comma-separated labels")->required();
    c->add_option("--task", task, "article, charge or term")->capture_default_str();
  }
}

// --- judge ------------------------------------------------------------------

void Cli::add_judge() {
  auto* g = group("judge", "Final prediction with an LLM");
  auto& case_file = hold<std::string>();
  auto& models = hold<std::string>();
  auto& index_path = hold<std::string>();
  auto& db_path = hold<std::string>();
  auto& vocab = hold<std::string>();
  auto& backend = hold<std::string>();
  auto& ablate = hold<std::string>();
  auto& cache_path = hold<std::string>();
  auto& transcript = hold<std::string>();
  auto& n = hold<std::size_t>(kDefaultCandidates);
  auto& o_backend = hold<CLI::Option*>(nullptr);
  auto& o_n = hold<CLI::Option*>(nullptr);
  auto* c = leaf(g, "predict", "Predict article, charge and term for one case", [&] {
    const auto cases = parse_cases(read_file(case_file)).cases;
    if (cases.empty()) throw Error(fmt::format("{} holds no case", case_file));
    const auto db = CaseDatabase::load(db_path);
    const auto m = JudgeModels::load(models, index_path, &db,
                                     vocab.empty() ? std::nullopt : std::optional<std::filesystem::path>(vocab));
    auto gate = make_gate(backend_or_default(o_backend, backend), transcript);
    std::unique_ptr<ReorgCache> cache =
        cache_path.empty() ? std::make_unique<ReorgCache>() : std::make_unique<ReorgCache>(cache_path);
    JudgeConfig jc;
    jc.n = o_n->count() ? n : cfg.n;
    jc.ablation = Ablation::parse(ablate);
    CaseRecord record;
    predict_judgment(cases.front(), m, gate, *cache, jc, &record);
    fmt::print("{}\n", record.to_json().dump());
    return kExitOk;
  });
  c->add_option("--case-file", case_file, "One case as JSON")->required()->check(CLI::ExistingFile);
  c->add_option("--models", models, "Directory with model files")->required()->check(CLI::ExistingDirectory);
  c->add_option("--index", index_path, "Index file")->required()->check(CLI::ExistingFile);
  c->add_option("--db", db_path, "Case database")->required()->check(CLI::ExistingFile);
  c->add_option("--vocab", vocab, "Vocabulary (default <models>/vocab.json)")->check(CLI::ExistingFile);
  o_backend = c->add_option("--backend", backend, "LLM backend");
  c->add_option("--ablate", ablate, "Comma-separated ablation flags");
  o_n = c->add_option("--n-precedents", n, "Candidates and precedents per task");
  c->add_option("--cache", cache_path, "Persistent reorganization cache");
  c->add_option("--transcript", transcript, "Append every LLM exchange to this JSONL file");
}

// --- eval -------------------------------------------------------------------

void Cli::add_eval() {
  auto* g = group("eval", "Experiments, ablations and sweeps");
  auto& config = hold<std::string>();
  auto& ns = hold<std::string>("1,2,3,4,5");
  auto load_spec = [this, &config] {
    auto spec = ExperimentSpec::load(config);
    if (o_jobs->count()) spec.jobs = cfg.jobs;
    if (o_seed->count()) spec.seed = cfg.seed;
    if (o_budget->count()) spec.prompt_budget = cfg.prompt_budget;
    return spec;
  };
  auto* run = leaf(g, "run", "Run one experiment", [load_spec] {
    const auto result = run_experiment(load_spec());
    fmt::print("{}", result.report.render_table());
    return kExitOk;
  });
  run->add_option("--config", config, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
  auto* abl = leaf(g, "ablate", "Base run plus the five ablation variants", [load_spec] {
    const auto spec = load_spec();
    run_ablations(spec);
    fmt::print("{}", read_file(spec.resolve(spec.output) / "ablation.txt"));
    return kExitOk;
  });
  abl->add_option("--config", config, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
  auto* sw = leaf(g, "sweep", "Vary the number of candidates and precedents", [load_spec, &ns] {
    const auto spec = load_spec();
    const auto values = parse_size_list(ns);
    sweep_precedents(spec, values);
    fmt::print("{}", read_file(spec.resolve(spec.output) / "sweep.tsv"));
    return kExitOk;
  });
  sw->add_option("--config", config, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
  sw->add_option("--n", ns, "Comma-separated n values")->capture_default_str();
}

// --- llm --------------------------------------------------------------------

void Cli::add_llm() {
  auto* g = group("llm", "LLM backends and fixtures");
  {
    auto& backend = hold<std::string>();
    auto& o_backend = hold<CLI::Option*>(nullptr);
    auto* c = leaf(g, "probe", "Send one short request", [&] {
      auto gate = make_gate(backend_or_default(o_backend, backend), "");
      LlmRequest req;
      req.prompt = "Reply with the single word OK.";
      req.max_tokens = 8;
      req.tag = "probe";
      fmt::print("{}: {}\n", gate.backend().kind(), text::normalize_space(gate.complete(req)));
      return kExitOk;
    });
    o_backend = c->add_option("--backend", backend, "LLM backend");
  }
  {
    auto& transcript = hold<std::string>();
    auto& out = hold<std::string>();
    auto* c = leaf(g, "record-fixtures", "Turn a transcript into a replay fixture", [&] {
      const auto r = record_fixtures(transcript, out);
      fmt::print("{} exchanges, {} keys, {} conflicting duplicates\n", r.pairs, r.keys, r.conflicting_duplicates);
      return kExitOk;
    });
    c->add_option("--transcript", transcript, "Transcript JSONL")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "Fixture file")->required();
  }
}

int Cli::run(int argc, const char* const* argv) {
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cout, std::cerr);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!config_path.empty()) cfg = GlobalConfig::from_file(config_path);
    if (o_log->count()) cfg.log_level = log_level;
    if (o_jobs->count()) cfg.jobs = jobs;
    if (o_seed->count()) cfg.seed = seed;
    if (o_budget->count()) cfg.prompt_budget = prompt_budget;
    setup_logging(cfg.log_level);
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  }

  auto unknown = [](CLI::App* at, const std::string& word) {
    const auto s = suggest(word, subcommand_names(at));
    fmt::print(stderr, "error: unknown command '{}'{}\n", word, s ? fmt::format("; did you mean '{}'?", *s) : "");
    fmt::print(stderr, "{}", at->help());
    return kExitUsage;
  };

  const auto top = app.get_subcommands();
  if (top.empty()) {
    const auto rest = app.remaining();
    if (!rest.empty()) return unknown(&app, rest.front());
    fmt::print(stderr, "{}", app.help());
    return kExitUsage;
  }
  CLI::App* grp = top.front();
  const auto leaves = grp->get_subcommands();
  if (leaves.empty()) {
    const auto rest = grp->remaining();
    if (!rest.empty()) return unknown(grp, rest.front());
    fmt::print(stderr, "{}", grp->help());
    return kExitUsage;
  }
  CLI::App* leaf_app = leaves.front();
  std::vector<std::string> extras = leaf_app->remaining();
  for (auto& x : grp->remaining()) extras.push_back(x);
  for (auto& x : app.remaining()) extras.push_back(x);
  if (!extras.empty()) {
    fmt::print(stderr, "error: unexpected arguments: {}\n", fmt::join(extras, " "));
    fmt::print(stderr, "{}", leaf_app->help());
    return kExitUsage;
  }

  try {
    return actions.at(leaf_app)();
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  Cli cli;
  return cli.run(argc, argv);
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("pljp");
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace pljp
