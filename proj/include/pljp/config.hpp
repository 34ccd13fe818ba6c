#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "pljp/llmgate.hpp"
#include "pljp/predictor.hpp"

namespace pljp {

/// Settings shared by every subcommand. Resolution order: command-line
/// flags, then the JSON file given with --config, then these defaults.
struct GlobalConfig {
  std::string log_level = "info";
  std::size_t jobs = 1;
  std::uint64_t seed = 1;
  std::string backend = "echo";
  std::size_t n = kDefaultCandidates;
  std::size_t prompt_budget = kDefaultPromptBudget;

  /// Applies the keys present in `j`; unknown keys are rejected.
  void overlay(const nlohmann::json& j);
  static GlobalConfig from_file(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
};

}  // namespace pljp
