#include "pljp/judge.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pljp/text.hpp"

namespace pljp {

namespace {

constexpr std::array<std::string_view, 5> kAblationNames = {"no_precedents", "no_candidates", "no_dependency",
                                                            "raw_fact_retrieval", "with_explanation"};

bool* ablation_field(Ablation& a, std::string_view name) {
  if (name == kAblationNames[0]) return &a.no_precedents;
  if (name == kAblationNames[1]) return &a.no_candidates;
  if (name == kAblationNames[2]) return &a.no_dependency;
  if (name == kAblationNames[3]) return &a.raw_fact_retrieval;
  if (name == kAblationNames[4]) return &a.with_explanation;
  return nullptr;
}

std::string_view task_singular(Task t) {
  switch (t) {
    case Task::article: return "law article";
    case Task::charge: return "charge";
    case Task::term: return "prison term";
  }
  return "";
}

std::string_view task_plural(Task t) {
  switch (t) {
    case Task::article: return "law articles";
    case Task::charge: return "charges";
    case Task::term: return "prison terms";
  }
  return "";
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace

Ablation Ablation::parse(std::string_view csv) {
  Ablation a;
  for (const auto& raw : text::split(csv, ",")) {
    const auto name = text::trim(raw);
    if (name.empty()) continue;
    bool* field = ablation_field(a, name);
    if (!field) {
      throw JudgeError(JudgeErrc::bad_ablation,
                       fmt::format("unknown ablation flag '{}' (expected one of {})", name,
                                   fmt::join(kAblationNames, ", ")));
    }
    *field = true;
  }
  return a;
}

std::string Ablation::to_string() const {
  std::vector<std::string> on;
  Ablation copy = *this;
  for (auto name : kAblationNames) {
    if (*ablation_field(copy, name)) on.emplace_back(name);
  }
  return text::join(on, ",");
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::llm: return "llm";
    case Provenance::fallback_top1: return "fallback-top1";
    case Provenance::fallback_parse: return "fallback-parse";
  }
  return "";
}

std::string JudgeTemplates::version() const {
  return fmt::format("{}+{}+{}", instruction.version, answer.version, answer_explain.version);
}

JudgeTemplates JudgeTemplates::builtin() {
  return {builtin_template("judge_instruction_v2"), builtin_template("judge_answer_v1"),
          builtin_template("judge_answer_explain_v1")};
}

// --- Prompt -----------------------------------------------------------------

namespace {

std::string rf_lines(const ReorganizedFact& rf) {
  return fmt::format("Subjective motivation: {}\nObjective behavior: {}\nEx post facto circumstances: {}",
                     text::normalize_space(rf.sub), text::normalize_space(rf.obj), text::normalize_space(rf.ex));
}

std::string judgment_line(const Verdict& v, const VocabSet& vocab) {
  auto show = [&](Task t) {
    const auto idx = vocab[t].index_of(v[t]);
    return idx ? vocab[t].display(*idx) : v[t];
  };
  return fmt::format("Judgment: law article {}; charge {}; prison term {}", show(Task::article), show(Task::charge),
                     show(Task::term));
}

constexpr std::string_view kTruncationMark = " [truncated]";

// Renders with every precedent body longer than `cap` code points cut to
// `cap`; no cap when nullopt.
std::string render_with_cap(const JudgmentContext& ctx, Task task, const VocabSet& vocab,
                            const JudgeTemplates& templates, const PromptOptions& options,
                            std::optional<std::size_t> cap) {
  const auto& cand = ctx.candidates[task_index(task)];
  std::vector<std::string> blocks;

  blocks.push_back(fmt::format("Facts of this case:\n{}\nRaw fact (excerpt): {}", rf_lines(ctx.rf),
                               text::prefix(text::normalize_space(ctx.raw_fact), options.raw_excerpt)));

  if (!ctx.ablation.no_candidates) {
    std::vector<std::string> shown;
    for (const auto& l : cand.labels) shown.push_back(vocab[task].display_of(l));
    blocks.push_back(fmt::format("{}{}: {}", kCandidateLinePrefix, task_plural(task), text::join(shown, "; ")));
  }

  if (!ctx.ablation.no_precedents) {
    const auto& precs = ctx.precedents[task_index(task)];
    for (std::size_t i = 0; i < precs.size(); ++i) {
      const auto& slot = precs[i];
      std::string block = fmt::format("{}{}:\n", kPrecedentHeader, i + 1);
      if (slot.precedent) {
        std::string body = rf_lines(slot.precedent->rf);
        if (cap && text::length(body) > *cap) {
          body = std::string(text::prefix(body, *cap));
          body += kTruncationMark;
        }
        block += body;
        block += '\n';
        block += judgment_line(slot.precedent->verdict, vocab);
      } else {
        block += fmt::format("No precedent in the database for the {} {}.", task_singular(task),
                             vocab[task].display_of(slot.label));
      }
      blocks.push_back(std::move(block));
    }
  }

  const std::size_t count = options.precedent_count;
  std::string instruction = fill(templates.instruction.text, "task_plural", std::string(task_plural(task)));
  instruction = fill(std::move(instruction), "precedent_count",
                     fmt::format("{} {}", count, count == 1 ? "precedent" : "precedents"));
  instruction = fill(std::move(instruction), "explain_suffix",
                     ctx.ablation.with_explanation ? " and explain your choice" : "");
  blocks.push_back(std::move(instruction));

  if (!ctx.ablation.no_dependency && task != Task::article) {
    std::string upstream = fmt::format("{}{}", kUpstreamArticle,
                                       ctx.predicted_article ? vocab.article.display_of(*ctx.predicted_article) : "");
    if (task == Task::term) {
      upstream += fmt::format("\n{}{}", kUpstreamCharge,
                              ctx.predicted_charge ? vocab.charge.display_of(*ctx.predicted_charge) : "");
    }
    blocks.push_back(std::move(upstream));
  }

  blocks.push_back(ctx.ablation.with_explanation ? templates.answer_explain.text : templates.answer.text);
  return text::join(blocks, "\n\n");
}

}  // namespace

std::string render_judgment_prompt(const JudgmentContext& ctx, Task task, const VocabSet& vocab,
                                   const JudgeTemplates& templates, const PromptOptions& options) {
  std::string full = render_with_cap(ctx, task, vocab, templates, options, std::nullopt);
  if (text::length(full) <= options.budget) return full;

  std::size_t longest = 0;
  if (!ctx.ablation.no_precedents) {
    for (const auto& slot : ctx.precedents[task_index(task)]) {
      if (slot.precedent) longest = std::max(longest, text::length(rf_lines(slot.precedent->rf)));
    }
  }
  auto fits = [&](std::size_t cap) {
    return text::length(render_with_cap(ctx, task, vocab, templates, options, cap)) <= options.budget;
  };
  if (longest == 0 || !fits(0)) {
    throw JudgeError(JudgeErrc::budget_unsatisfiable,
                     fmt::format("{} prompt exceeds the {} code point budget even with empty precedent texts",
                                 task_name(task), options.budget));
  }
  // Largest common cap that fits: the longest bodies are cut first.
  std::size_t lo = 0, hi = longest;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (fits(mid)) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return render_with_cap(ctx, task, vocab, templates, options, lo);
}

// --- Parsing ----------------------------------------------------------------

namespace {

std::string strip_line_decoration(std::string_view line) {
  line = text::trim(line);
  while (!line.empty() && (line.front() == '*' || line.front() == '#' || line.front() == '>' || line.front() == '-')) {
    line.remove_prefix(1);
    line = text::trim(line);
  }
  return std::string(line);
}

std::string clean_answer(std::string_view s) {
  std::string out = text::normalize_space(s);
  auto strip = [&](std::string_view chars) {
    bool changed = true;
    while (changed && !out.empty()) {
      changed = false;
      if (chars.find(out.front()) != std::string_view::npos) {
        out.erase(out.begin());
        changed = true;
      }
      if (!out.empty() && chars.find(out.back()) != std::string_view::npos) {
        out.pop_back();
        changed = true;
      }
    }
  };
  strip("\"'`*. ");
  if (out.ends_with("。")) out.resize(out.size() - std::string_view("。").size());
  for (std::string_view lead : {"law article ", "article ", "charge of ", "charge "}) {
    if (text::starts_with_ci(out, lead)) {
      out.erase(0, lead.size());
      break;
    }
  }
  return text::normalize_space(out);
}

// Candidate answer strings, most specific first.
std::vector<std::string> answer_strings(const std::vector<std::string>& lines) {
  std::vector<std::string> label_lines, other_lines;
  for (const auto& l : lines) {
    if (text::starts_with_ci(l, "EXPLANATION")) continue;
    (text::starts_with_ci(l, "LABEL") ? label_lines : other_lines).push_back(l);
  }
  std::vector<std::string> out;
  auto add_from = [&](const std::string& line) {
    if (text::starts_with_ci(line, "LABEL")) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) out.push_back(clean_answer(std::string_view(line).substr(colon + 1)));
    }
    auto last = line.rfind(':');
    const auto wide = line.rfind("：");
    if (wide != std::string::npos && (last == std::string::npos || wide > last)) {
      out.push_back(clean_answer(std::string_view(line).substr(wide + std::string_view("：").size())));
    } else if (last != std::string::npos) {
      out.push_back(clean_answer(std::string_view(line).substr(last + 1)));
    }
    out.push_back(clean_answer(line));
  };
  for (const auto& l : label_lines) add_from(l);
  for (const auto& l : other_lines) add_from(l);
  std::erase_if(out, [](const std::string& s) { return s.empty(); });
  return out;
}

}  // namespace

ParsedLabel parse_llm_label(std::string_view completion, const CandidateSet& candidates, const LabelVocab& vocab) {
  ParsedLabel result;
  std::vector<std::string> lines;
  for (const auto& raw : text::split(completion, "\n")) {
    auto l = strip_line_decoration(raw);
    if (!l.empty()) lines.push_back(std::move(l));
  }

  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!text::starts_with_ci(lines[i], "EXPLANATION")) continue;
    std::string expl;
    const auto colon = lines[i].find(':');
    if (colon != std::string::npos) expl = lines[i].substr(colon + 1);
    for (std::size_t k = i + 1; k < lines.size(); ++k) {
      if (text::starts_with_ci(lines[k], "LABEL")) break;
      expl += ' ';
      expl += lines[k];
    }
    expl = text::normalize_space(expl);
    if (!expl.empty()) result.explanation = std::move(expl);
    break;
  }

  const auto answers = answer_strings(lines);
  for (const auto& a : answers) {
    const auto la = lower_ascii(a);
    for (const auto& label : candidates.labels) {
      const auto idx = vocab.index_of(label);
      const std::string& shown = idx ? vocab.display(*idx) : label;
      if (lower_ascii(shown) == la) {
        result.label = label;
        return result;
      }
    }
  }
  for (const auto& a : answers) {
    const auto la = lower_ascii(a);
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      if (lower_ascii(vocab.display(i)) == la) {
        result.label = vocab.label(i);
        result.out_of_candidates = true;
        spdlog::warn("LLM chose {} label '{}' outside the candidates", task_name(vocab.task()), vocab.display(i));
        return result;
      }
    }
  }
  result.label = candidates.labels.empty() ? LabelId{} : candidates.labels.front();
  result.provenance = Provenance::fallback_parse;
  return result;
}

// --- Models -----------------------------------------------------------------

JudgeModels JudgeModels::load(const std::filesystem::path& dir, const std::filesystem::path& index_path,
                              const CaseDatabase* db, const std::optional<std::filesystem::path>& vocab_path) {
  auto require = [](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) {
      throw JudgeError(JudgeErrc::missing_model, fmt::format("missing model file '{}'", p.string()));
    }
    return p;
  };
  JudgeModels m;
  m.vocab = VocabSet::load(require(vocab_path.value_or(dir / "vocab.json")));
  for (auto t : kAllTasks) {
    m.predictors[task_index(t)] =
        PredictiveModel::load(require(dir / fmt::format("{}.bin", task_name(t))), &m.vocab[t]);
  }
  m.retriever = RetrievalModel::load(require(dir / "retriever.bin"));
  m.index = PrecedentIndex::load(require(index_path), m.retriever);
  if (db) m.index.attach(*db);
  return m;
}

// --- Chain ------------------------------------------------------------------

nlohmann::ordered_json CaseRecord::to_json() const {
  auto verdict_json = [](const Verdict& v) {
    nlohmann::ordered_json j;
    j["article"] = v.article;
    j["charge"] = v.charge;
    j["term"] = v.term;
    return j;
  };
  nlohmann::ordered_json j;
  j["id"] = case_id;
  j["gold"] = verdict_json(gold);
  j["prediction"] = verdict_json(judgment.labels);
  if (reorg_error) j["reorg_error"] = *reorg_error;
  auto stages_json = nlohmann::ordered_json::array();
  for (const auto& s : stages) {
    nlohmann::ordered_json sj;
    sj["task"] = task_name(s.task);
    sj["candidates"] = s.candidates;
    sj["precedents"] = s.precedent_ids;
    sj["prompt_hash"] = s.prompt_hash;
    if (s.completion) sj["completion"] = *s.completion;
    sj["label"] = s.label;
    sj["provenance"] = provenance_name(s.provenance);
    if (s.explanation) sj["explanation"] = *s.explanation;
    if (s.error) sj["error"] = *s.error;
    stages_json.push_back(std::move(sj));
  }
  j["stages"] = std::move(stages_json);
  return j;
}

Judgment predict_judgment(const Case& c, const JudgeModels& models, LlmGate& gate, ReorgCache& cache,
                          const JudgeConfig& config, CaseRecord* record) {
  CaseRecord rec;
  rec.case_id = c.id;
  rec.gold = verdict_of(c, models.vocab.bins);

  JudgmentContext ctx;
  ctx.raw_fact = c.fact;
  ctx.ablation = config.ablation;
  try {
    ctx.rf = reorganize_fact(c.fact, gate, cache, config.reorg_templates, c.id);
  } catch (const Error& e) {
    if (!dynamic_cast<const ReorgError*>(&e) && !dynamic_cast<const LlmError*>(&e)) throw;
    spdlog::warn("{}: reorganization failed ({}); using the raw fact", c.id, e.what());
    rec.reorg_error = e.what();
    ctx.rf = ReorganizedFact{std::string(kNoneStated), text::normalize_space(c.fact), std::string(kNoneStated), c.id};
  }

  std::vector<float> query;
  if (!config.ablation.no_precedents) {
    query = to_float(models.retriever.embed(config.ablation.raw_fact_retrieval ? c.fact : concat_reorganized(ctx.rf)));
  }

  PromptOptions options;
  options.budget = gate.options().prompt_budget;
  options.raw_excerpt = config.raw_excerpt;
  options.precedent_count = config.n;

  Judgment judgment;
  for (auto task : kAllTasks) {
    const auto ti = task_index(task);
    const auto& vocab = models.vocab[task];
    ctx.candidates[ti] = candidate_labels(models.predictors[ti].predict(c.fact), config.n, vocab);
    const auto& cands = ctx.candidates[ti];

    StageRecord stage;
    stage.task = task;
    stage.candidates = cands.labels;
    if (!config.ablation.no_precedents) {
      const auto best = best_per_label(query, task, cands.labels, models.index);
      auto& blocks = ctx.precedents[ti];
      for (std::size_t i = 0; i < best.size(); ++i) {
        PrecedentBlock block{cands.labels[i], std::nullopt};
        if (best[i]) {
          const auto e = best[i]->entry;
          Precedent p;
          p.case_id = models.index.ids[e];
          if (e < models.index.facts.size()) p.rf = models.index.facts[e];
          p.verdict = models.index.verdicts[e];
          p.score = best[i]->score;
          p.matched_label = cands.labels[i];
          block.precedent = std::move(p);
        }
        stage.precedent_ids.push_back(block.precedent ? block.precedent->case_id : "");
        blocks.push_back(std::move(block));
      }
    }

    try {
      stage.prompt = render_judgment_prompt(ctx, task, models.vocab, config.templates, options);
      stage.prompt_hash = prompt_hash(stage.prompt);
      LlmRequest request;
      request.prompt = stage.prompt;
      request.tag = fmt::format("judge.{}/{}", task_name(task), c.id);
      const std::string completion = gate.complete(request);
      stage.completion = completion;
      auto parsed = parse_llm_label(completion, cands, vocab);
      stage.label = parsed.label;
      stage.provenance = parsed.provenance;
      stage.explanation = parsed.explanation;
    } catch (const LlmError& e) {
      spdlog::warn("{}: {} stage degraded to top-1 ({})", c.id, task_name(task), e.what());
      stage.label = cands.labels.front();
      stage.provenance = Provenance::fallback_top1;
      stage.error = fmt::format("{}: {}", llm_errc_name(e.kind()), e.what());
    } catch (const JudgeError& e) {
      if (e.kind() != JudgeErrc::budget_unsatisfiable) throw;
      spdlog::warn("{}: {} stage degraded to top-1 ({})", c.id, task_name(task), e.what());
      stage.label = cands.labels.front();
      stage.provenance = Provenance::fallback_top1;
      stage.error = fmt::format("BudgetUnsatisfiable: {}", e.what());
    }

    judgment.labels[task] = stage.label;
    judgment.provenance[ti] = stage.provenance;
    judgment.explanation[ti] = stage.explanation;
    if (task == Task::article) ctx.predicted_article = stage.label;
    if (task == Task::charge) ctx.predicted_charge = stage.label;
    rec.stages.push_back(std::move(stage));
  }

  rec.judgment = judgment;
  if (record) *record = std::move(rec);
  return judgment;
}

}  // namespace pljp
