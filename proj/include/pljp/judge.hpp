#pragma once

// Final prediction: per sub-task prompt assembly (facts, candidates,
// precedents, instruction, upstream decisions), answer parsing, fallbacks,
// and the article -> charge -> term chain.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pljp/corpus.hpp"
#include "pljp/llmgate.hpp"
#include "pljp/predictor.hpp"
#include "pljp/reorganizer.hpp"
#include "pljp/retriever.hpp"
#include "pljp/templates.hpp"
#include "pljp/types.hpp"

namespace pljp {

enum class JudgeErrc { budget_unsatisfiable, bad_ablation, missing_model };

class JudgeError : public Error {
 public:
  JudgeError(JudgeErrc kind, const std::string& message) : Error(message), kind_(kind) {}
  JudgeErrc kind() const noexcept { return kind_; }

 private:
  JudgeErrc kind_;
};

struct Ablation {
  bool no_precedents = false;
  bool no_candidates = false;
  bool no_dependency = false;
  bool raw_fact_retrieval = false;
  bool with_explanation = false;

  /// Comma-separated flag names; empty string means none.
  static Ablation parse(std::string_view csv);
  /// Canonical comma-separated form, flags in declaration order.
  std::string to_string() const;
  bool operator==(const Ablation&) const = default;
};

enum class Provenance { llm, fallback_top1, fallback_parse };

std::string_view provenance_name(Provenance p);

/// A precedent slot: the retrieved case, or a stub when no database case
/// bears the candidate label.
struct PrecedentBlock {
  LabelId label;
  std::optional<Precedent> precedent;
};

struct JudgmentContext {
  std::string raw_fact;
  ReorganizedFact rf;
  std::array<CandidateSet, 3> candidates;
  std::array<std::vector<PrecedentBlock>, 3> precedents;
  std::optional<LabelId> predicted_article;
  std::optional<LabelId> predicted_charge;
  Ablation ablation;
};

struct JudgeTemplates {
  PromptTemplate instruction;
  PromptTemplate answer;
  PromptTemplate answer_explain;

  std::string version() const;
  static JudgeTemplates builtin();
};

inline constexpr std::size_t kRawExcerptChars = 500;

struct PromptOptions {
  std::size_t budget = kDefaultPromptBudget;
  std::size_t raw_excerpt = kRawExcerptChars;
  /// Number of precedents announced in the instruction.
  std::size_t precedent_count = kDefaultCandidates;
};

/// Blocks separated by blank lines: facts, candidates, precedents,
/// instruction, upstream decisions, answer format. Precedent texts are cut
/// longest-first to fit the budget; BudgetUnsatisfiable when even empty
/// precedent texts do not fit.
std::string render_judgment_prompt(const JudgmentContext& ctx, Task task, const VocabSet& vocab,
                                   const JudgeTemplates& templates = JudgeTemplates::builtin(),
                                   const PromptOptions& options = {});

/// Line-level markers used in prompts; shared with tests and log checks.
inline constexpr std::string_view kCandidateLinePrefix = "Candidate ";
inline constexpr std::string_view kPrecedentHeader = "Precedent ";
inline constexpr std::string_view kUpstreamArticle = "Predicted law article: ";
inline constexpr std::string_view kUpstreamCharge = "Predicted charge: ";

struct ParsedLabel {
  LabelId label;
  Provenance provenance = Provenance::llm;
  std::optional<std::string> explanation;
  bool out_of_candidates = false;
};

/// Never throws. Answer lines ("LABEL: ...") are tried first, then every
/// line; within a line the text after "LABEL:", after the last colon, and
/// the whole line. Candidate display names are matched before the rest of
/// the vocabulary; no match gives candidates[0] with fallback_parse.
ParsedLabel parse_llm_label(std::string_view completion, const CandidateSet& candidates, const LabelVocab& vocab);

struct Judgment {
  Verdict labels;
  std::array<Provenance, 3> provenance{Provenance::llm, Provenance::llm, Provenance::llm};
  std::array<std::optional<std::string>, 3> explanation;
};

/// Everything predict_judgment needs besides the LLM.
struct JudgeModels {
  VocabSet vocab;
  std::array<PredictiveModel, 3> predictors;
  RetrievalModel retriever;
  PrecedentIndex index;

  /// Reads {article,charge,term}.bin and retriever.bin from `dir` plus the
  /// index file, attaching `db` when given. The vocabulary defaults to
  /// dir/vocab.json.
  static JudgeModels load(const std::filesystem::path& dir, const std::filesystem::path& index_path,
                          const CaseDatabase* db = nullptr,
                          const std::optional<std::filesystem::path>& vocab_path = std::nullopt);
};

struct JudgeConfig {
  std::size_t n = kDefaultCandidates;
  Ablation ablation;
  JudgeTemplates templates = JudgeTemplates::builtin();
  ReorgTemplates reorg_templates = ReorgTemplates::builtin();
  std::size_t raw_excerpt = kRawExcerptChars;
};

struct StageRecord {
  Task task = Task::article;
  std::vector<LabelId> candidates;
  std::vector<std::string> precedent_ids;  // "" for stubs
  std::string prompt;                      // kept in memory, logged by hash
  std::string prompt_hash;
  std::optional<std::string> completion;
  LabelId label;
  Provenance provenance = Provenance::llm;
  std::optional<std::string> explanation;
  std::optional<std::string> error;
};

struct CaseRecord {
  std::string case_id;
  Verdict gold;
  std::optional<std::string> reorg_error;
  std::vector<StageRecord> stages;
  Judgment judgment;

  nlohmann::ordered_json to_json() const;
};

/// Runs the three stages in order. LLM failures (and prompts that cannot be
/// fit into the budget) degrade the stage to the predictor's top-1 label;
/// a failed reorganization falls back to the raw fact as the objective
/// section. Configuration errors propagate.
Judgment predict_judgment(const Case& c, const JudgeModels& models, LlmGate& gate, ReorgCache& cache,
                          const JudgeConfig& config, CaseRecord* record = nullptr);

}  // namespace pljp
