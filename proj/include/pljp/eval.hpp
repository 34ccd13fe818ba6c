#pragma once

// Metrics (Acc, Ma-P, Ma-R, Ma-F), the experiment runner, the ablation
// matrix and precedent-count sweeps.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pljp/corpus.hpp"
#include "pljp/judge.hpp"
#include "pljp/llmgate.hpp"
#include "pljp/types.hpp"

namespace pljp {

enum class EvalErrc { length_mismatch, unknown_label, empty_table, bad_config, bad_n };

class EvalError : public Error {
 public:
  EvalError(EvalErrc kind, const std::string& message) : Error(message), kind_(kind) {}
  EvalErrc kind() const noexcept { return kind_; }

 private:
  EvalErrc kind_;
};

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  bool operator==(const ClassCounts&) const = default;
};

/// Counts over the full vocabulary; classes never seen still get a row.
struct ConfusionTable {
  Task task = Task::article;
  std::vector<LabelId> labels;
  std::vector<ClassCounts> classes;
  std::size_t correct = 0;
  std::size_t total = 0;
};

ConfusionTable confusion_counts(std::span<const LabelId> preds, std::span<const LabelId> golds,
                                const LabelVocab& vocab);

struct ClassScores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// Per-class fractions with 0/0 taken as 0.
std::vector<ClassScores> class_scores(const ConfusionTable& table);

/// Percentages. Macro values are unweighted means over every vocabulary
/// class; Ma-F is the mean of per-class F1.
struct Metrics {
  double acc = 0;
  double ma_p = 0;
  double ma_r = 0;
  double ma_f = 0;
  bool operator==(const Metrics&) const = default;
};

Metrics metrics(const ConfusionTable& table);

// --- Experiments ------------------------------------------------------------

/// Experiment description, read from JSON. Relative paths resolve against
/// the directory of the spec file and are echoed into reports as written.
struct ExperimentSpec {
  std::filesystem::path base_dir;
  std::string test;      // cases to predict
  std::string models;    // directory with vocab.json and model files
  std::string index;     // precedent index file
  std::string database;  // case database JSONL
  std::string output;    // output directory
  std::optional<std::string> vocab;  // defaults to <models>/vocab.json
  std::string backend = "echo";
  std::optional<std::string> reorg_cache;        // extra cache to seed from
  std::optional<std::string> reorg_instruction;  // instruction template override
  std::size_t n = kDefaultCandidates;
  Ablation ablation;
  std::uint64_t seed = 1;
  std::size_t prompt_budget = kDefaultPromptBudget;
  std::size_t raw_excerpt = kRawExcerptChars;
  std::size_t jobs = 1;

  std::filesystem::path resolve(const std::string& p) const;
  static ExperimentSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static ExperimentSpec load(const std::filesystem::path& path);
  /// Every setting, defaults included, paths as written.
  nlohmann::ordered_json to_json() const;
};

struct MetricsReport {
  std::array<Metrics, 3> tasks;
  /// Per-task provenance histogram keyed by provenance name.
  std::array<std::map<std::string, std::size_t>, 3> provenance;
  std::size_t cases = 0;
  std::size_t skipped_cases = 0;
  std::size_t reorg_failures = 0;
  std::size_t stage_failures = 0;
  nlohmann::ordered_json config;
  nlohmann::ordered_json fingerprint_inputs;
  std::string fingerprint;

  const Metrics& operator[](Task t) const { return tasks[task_index(t)]; }
  nlohmann::ordered_json to_json() const;
  /// Aligned plain-text table: one row per task, columns Acc, Ma-P, Ma-R, Ma-F.
  std::string render_table() const;
};

struct RunOptions {
  /// Replaces the backend named in the spec (tests inject scripted mocks).
  std::shared_ptr<LlmBackend> backend;
};

struct ExperimentResult {
  MetricsReport report;
  std::vector<CaseRecord> records;
};

/// Predicts every test case and writes report.json, report.txt, cases.jsonl,
/// transcript.jsonl and reorg_cache.jsonl into the output directory.
ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

/// Scores a finished log (single-threaded fold; independent of the order
/// cases completed in).
MetricsReport score_records(std::span<const CaseRecord> records, const VocabSet& vocab);

struct AblationRow {
  std::string name;  // "base", "w/o p", "w/o c", "w/o d", "w/o r", "w/ e"
  std::string slug;  // subdirectory name
  Ablation ablation;
  MetricsReport report;
};

/// Base plus the five single-flag variants, each in its own subdirectory,
/// and a comparison table (ablation.json, ablation.txt).
std::vector<AblationRow> run_ablations(const ExperimentSpec& base, const RunOptions& options = {});

struct SweepRow {
  std::size_t n = 0;
  Task task = Task::article;
  Metrics metrics;
};

/// Reruns the pipeline for each n (candidate and precedent count together);
/// writes sweep.json and sweep.tsv. Rows are ordered by n, then task.
std::vector<SweepRow> sweep_precedents(const ExperimentSpec& base, std::span<const std::size_t> ns,
                                       const RunOptions& options = {});

}  // namespace pljp
