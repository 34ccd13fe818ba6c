#pragma once

// Fact reorganization: summarize a raw fact into (sub, obj, ex) with an LLM,
// with a content-addressed cache.

#include <array>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "pljp/llmgate.hpp"
#include "pljp/templates.hpp"
#include "pljp/types.hpp"

namespace pljp {

inline constexpr std::string_view kNoneStated = "none stated";
inline constexpr std::string_view kConcatSeparator = " [SEP] ";

enum class ReorgErrc { parse_failure, empty_fact, cache_io };

class ReorgError : public Error {
 public:
  ReorgError(ReorgErrc kind, const std::string& message) : Error(message), kind_(kind) {}
  ReorgErrc kind() const noexcept { return kind_; }

 private:
  ReorgErrc kind_;
};

struct ReorgTemplates {
  PromptTemplate instruction;  // the three-aspect definition text
  PromptTemplate format;       // output-format instruction
  PromptTemplate strict;       // stricter instruction for the single reprompt

  /// Combined version string; part of every cache key.
  std::string version() const;
  static ReorgTemplates builtin();
  /// Overrides the instruction text from a file (e.g. a Chinese rendering).
  static ReorgTemplates with_instruction_file(const std::filesystem::path& path);
};

/// Instruction, blank line, format instruction, then "Facts: " and the fact.
std::string render_reorg_prompt(std::string_view fact, const ReorgTemplates& templates = ReorgTemplates::builtin());
std::string render_strict_reorg_prompt(std::string_view fact,
                                       const ReorgTemplates& templates = ReorgTemplates::builtin());
/// Code points a rendered prompt adds on top of the fact itself.
std::size_t reorg_prompt_overhead(const ReorgTemplates& templates = ReorgTemplates::builtin());

/// Parses "SUB: ... / OBJ: ... / EX: ..." sections. Returns nullopt when a
/// section header is missing; a present but empty section becomes
/// "none stated". Section text is whitespace-normalized.
std::optional<ReorganizedFact> parse_reorganized(std::string_view completion);
/// Inverse of parse_reorganized for single-line sections.
std::string render_sections(const ReorganizedFact& rf);

/// Thread-safe cache keyed on (fact, template version); optionally persisted
/// as append-only JSONL {"key", "sub", "obj", "ex", "template_version"}.
class ReorgCache {
 public:
  ReorgCache() = default;
  /// Loads `persist_path` if it exists and appends new entries to it.
  explicit ReorgCache(const std::filesystem::path& persist_path);

  /// Adds entries from another cache file without persisting them again.
  void seed_from(const std::filesystem::path& path);

  static std::string key(std::string_view fact, std::string_view template_version);

  std::optional<ReorganizedFact> get(const std::string& key) const;
  void put(const std::string& key, const ReorganizedFact& rf, const std::string& template_version);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, ReorganizedFact> entries_;
  std::ofstream out_;
};

/// Cache hit: no LLM call. Miss: one call, one stricter reprompt if the
/// answer is malformed, then ReorgError(parse_failure). LlmError propagates.
ReorganizedFact reorganize_fact(std::string_view fact, LlmGate& gate, ReorgCache& cache,
                                const ReorgTemplates& templates = ReorgTemplates::builtin(),
                                std::string_view case_id = {});

/// "sub [SEP] obj [SEP] ex" with backslash escaping of '\' and "[SEP]" inside
/// parts, so split_concatenated recovers the parts exactly.
std::string concat_reorganized(const ReorganizedFact& rf);
std::array<std::string, 3> split_concatenated(std::string_view text);

}  // namespace pljp
