#pragma once

// Dataset loading, validation, splitting, term binning and the case
// database that backs precedent retrieval.

#include <array>
#include <climits>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pljp/types.hpp"

namespace pljp {

enum class CorpusErrc {
  missing_field,
  unknown_label,
  malformed_line,
  duplicate_id,
  bad_ratios,
  negative_term,
  bad_bins,
  insufficient_cases,
  missing_reorganization,
  empty_input,
};

class CorpusError : public Error {
 public:
  CorpusError(CorpusErrc kind, const std::string& message, std::size_t line = 0);
  CorpusErrc kind() const noexcept { return kind_; }
  /// 1-based line number of the offending record, 0 when not line-bound.
  std::size_t line() const noexcept { return line_; }

 private:
  CorpusErrc kind_;
  std::size_t line_;
};

// --- Prison-term bins -------------------------------------------------------

/// Half-open month intervals [edges[i], edges[i+1]). The first edge is 0 and
/// the last edge is kOpenEnd, so every non-negative term falls in exactly one
/// bin. Life and death sentences map to configurable bins (default: the
/// open-ended top bin).
class TermBins {
 public:
  static constexpr int kOpenEnd = INT_MAX;

  /// Default: {0, 6, 9, 12, 24, 36, 60, 84, 120, 180, inf} months, 10 bins.
  TermBins();
  explicit TermBins(std::vector<int> edges, std::optional<int> life_label = std::nullopt,
                    std::optional<int> death_label = std::nullopt);

  std::size_t count() const { return edges_.size() - 1; }
  const std::vector<int>& edges() const { return edges_; }
  int life_label() const { return life_label_; }
  int death_label() const { return death_label_; }

  /// Label index of a term in months (or a sentinel).
  int bin(int term_months) const;
  std::string display(int label) const;

  nlohmann::json to_json() const;
  static TermBins from_json(const nlohmann::json& j);

 private:
  std::vector<int> edges_;
  int life_label_;
  int death_label_;
};

/// Free-function form of TermBins::bin.
int bin_prison_term(int term_months, const TermBins& bins);

// --- Label vocabularies -----------------------------------------------------

class LabelVocab {
 public:
  LabelVocab() = default;
  LabelVocab(Task task, std::vector<LabelId> labels, std::map<LabelId, std::string> display = {});

  Task task() const { return task_; }
  std::size_t size() const { return labels_.size(); }
  const std::vector<LabelId>& labels() const { return labels_; }
  const LabelId& label(std::size_t index) const { return labels_.at(index); }
  std::optional<std::size_t> index_of(const LabelId& label) const;
  /// Throws CorpusError(unknown_label) when absent.
  std::size_t require_index(const LabelId& label) const;
  const std::string& display(std::size_t index) const { return display_.at(index); }
  const std::string& display_of(const LabelId& label) const { return display(require_index(label)); }
  /// Index of the label whose display text equals `text` exactly.
  std::optional<std::size_t> find_display(std::string_view text) const;

  /// Stable over task, label order and display text.
  std::uint64_t hash() const;

  nlohmann::json to_json() const;
  static LabelVocab from_json(const nlohmann::json& j);

  static LabelVocab for_terms(const TermBins& bins);
  /// Sorted unique labels observed in `cases` (articles numerically).
  static LabelVocab from_cases(Task task, std::span<const Case> cases, const TermBins& bins);

  bool operator==(const LabelVocab& other) const {
    return task_ == other.task_ && labels_ == other.labels_ && display_ == other.display_;
  }

 private:
  Task task_ = Task::article;
  std::vector<LabelId> labels_;
  std::vector<std::string> display_;
  std::unordered_map<LabelId, std::size_t> index_;
};

/// The three task vocabularies plus the term binning that produced the term
/// labels.
struct VocabSet {
  LabelVocab article;
  LabelVocab charge;
  LabelVocab term;
  TermBins bins;

  const LabelVocab& operator[](Task task) const;

  static VocabSet from_cases(std::span<const Case> cases, const TermBins& bins = {});
  nlohmann::json to_json() const;
  static VocabSet from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static VocabSet load(const std::filesystem::path& path);
};

/// Judgment labels of a raw case under the given binning.
Verdict verdict_of(const Case& c, const TermBins& bins);

// --- Loading ----------------------------------------------------------------

struct LoadOptions {
  /// When set, article and charge must resolve against these vocabularies.
  const VocabSet* vocab = nullptr;
  /// Strict: unknown labels throw. Lenient: such records are skipped with a
  /// warning and counted in LoadResult::skipped.
  bool strict = true;
};

struct LoadResult {
  std::vector<Case> cases;
  std::vector<std::size_t> skipped_lines;
};

/// Reads line-delimited JSON records. Blank lines are ignored. Facts are
/// NFC-normalized with whitespace runs collapsed.
LoadResult load_cases(const std::filesystem::path& path, const LoadOptions& options = {});
LoadResult parse_cases(std::string_view jsonl, const LoadOptions& options = {});

nlohmann::ordered_json case_to_json(const Case& c);
std::string serialize_cases(std::span<const Case> cases);
void save_cases(const std::filesystem::path& path, std::span<const Case> cases);

// --- Splitting --------------------------------------------------------------

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<Case> train;
  std::vector<Case> validation;
  std::vector<Case> test;
};

/// Seeded random partition. Validation and test sizes are floor(ratio * N);
/// the remainder goes to train. Each part keeps the input order.
DatasetSplit split_dataset(std::span<const Case> cases, const SplitRatios& ratios, std::uint64_t seed);

/// Sizes split_dataset would produce, without shuffling.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

// --- Case database ----------------------------------------------------------

struct CaseDatabaseEntry {
  std::string id;
  ReorganizedFact rf;
  Verdict verdict;

  bool operator==(const CaseDatabaseEntry&) const = default;
};

struct CaseDatabase {
  std::vector<CaseDatabaseEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  std::string to_jsonl() const;
  void save(const std::filesystem::path& path) const;
  static CaseDatabase from_jsonl(std::string_view text);
  static CaseDatabase load(const std::filesystem::path& path);
};

inline constexpr std::size_t kDefaultDatabaseSize = 4000;

/// Uniform sample without replacement from the training split.
CaseDatabase sample_case_database(std::span<const Case> train,
                                  const std::unordered_map<std::string, ReorganizedFact>& reorganized,
                                  std::size_t n_db, std::uint64_t seed, const TermBins& bins = {});

}  // namespace pljp
