#pragma once

// Uniform LLM client: a remote HTTP backend plus deterministic offline
// backends (echo, scripted, fixture replay), a prompt-budget gate and an
// append-only transcript.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pljp/types.hpp"

namespace pljp {

enum class LlmErrc {
  prompt_too_long,
  remote_timeout,
  remote_refusal,
  remote_failure,
  fixture_miss,
  corrupt_transcript,
  invalid_request,
  config,
};

std::string_view llm_errc_name(LlmErrc kind);

class LlmError : public Error {
 public:
  LlmError(LlmErrc kind, const std::string& message) : Error(message), kind_(kind) {}
  LlmErrc kind() const noexcept { return kind_; }

 private:
  LlmErrc kind_;
};

struct LlmRequest {
  std::string prompt;
  int max_tokens = 512;
  double temperature = 0.0;
  std::vector<std::string> stop;
  /// Free-form logging label, e.g. "reorg/case-0001" or "judge.charge/case-0001".
  std::string tag;
};

/// Hash of the prompt text alone (scripted-mock keys).
std::string prompt_hash(std::string_view prompt);
/// Replay key over (prompt, temperature, max_tokens). Prompt bytes are hashed
/// verbatim, so any template drift is a cache miss.
std::string fixture_key(const LlmRequest& request);

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string_view kind() const = 0;
  /// Raw completion. Implementations must be safe for concurrent calls.
  virtual std::string generate(const LlmRequest& request) = 0;
};

// --- Offline backends -------------------------------------------------------

struct EchoConfig {
  /// When set, returned verbatim for every prompt.
  std::optional<std::string> fixed;
  /// Used for non-reorganization prompts. "{first_candidate}" expands to the
  /// first item of the first line starting with `candidate_prefix`.
  std::string label_template = "LABEL: {first_candidate}";
  std::string candidate_prefix = "Candidate ";
};

/// Deterministic stand-in for an LLM. Requests tagged "reorg*" get an
/// extractive three-section summary of the trailing fact (first sentence as
/// SUB, middle sentences as OBJ, last sentence as EX); other requests get
/// the label template.
class EchoMock final : public LlmBackend {
 public:
  explicit EchoMock(EchoConfig config = {}) : config_(std::move(config)) {}
  std::string_view kind() const override { return "echo-mock"; }
  std::string generate(const LlmRequest& request) override;

  /// Marker after which reorganization prompts carry the fact text.
  static constexpr std::string_view kFactMarker = "\nFacts: ";

 private:
  EchoConfig config_;
};

struct ScriptedFault {
  std::string tag_prefix;
  LlmErrc error = LlmErrc::remote_timeout;
};

struct ScriptedConfig {
  /// prompt_hash(prompt) -> response.
  std::map<std::string, std::string> responses;
  std::optional<std::string> default_response;
  /// Errors raised for matching request tags, checked before anything else.
  std::vector<ScriptedFault> faults;
  /// Programmatic rule consulted after `responses`; nullopt falls through.
  std::function<std::optional<std::string>(const LlmRequest&)> rule;

  static ScriptedConfig from_json(const nlohmann::json& j);
};

class ScriptedMock final : public LlmBackend {
 public:
  explicit ScriptedMock(ScriptedConfig config) : config_(std::move(config)) {}
  std::string_view kind() const override { return "scripted-mock"; }
  std::string generate(const LlmRequest& request) override;

 private:
  ScriptedConfig config_;
};

/// Replays a fixture file produced by record_fixtures. Unknown keys raise
/// LlmErrc::fixture_miss.
class FixtureReplay final : public LlmBackend {
 public:
  explicit FixtureReplay(const std::filesystem::path& fixture_file);
  explicit FixtureReplay(std::map<std::string, std::string> fixtures) : fixtures_(std::move(fixtures)) {}
  std::string_view kind() const override { return "fixture-replay"; }
  std::string generate(const LlmRequest& request) override;
  std::size_t size() const { return fixtures_.size(); }

 private:
  std::map<std::string, std::string> fixtures_;
};

// --- Remote backend ---------------------------------------------------------

struct RemoteConfig {
  /// Full URL, e.g. "https://api.example.com/v1/chat/completions".
  std::string endpoint;
  std::string model;
  /// Chat: {"messages": [...]}; otherwise {"prompt": ...}.
  bool chat = true;
  std::string api_key_env = "LLM_API_KEY";
  std::chrono::milliseconds timeout{60000};
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{1000};
  int backoff_factor = 4;
  int max_concurrent = 4;
  int requests_per_minute = 60;

  static RemoteConfig from_json(const nlohmann::json& j);
};

/// Backoff before retry `retry` (0-based): base * factor^retry.
std::chrono::milliseconds backoff_delay(const RemoteConfig& config, int retry);

class RemoteBackend final : public LlmBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  /// Reads the credential from the configured environment variable.
  explicit RemoteBackend(RemoteConfig config);
  RemoteBackend(RemoteConfig config, std::string api_key, Sleeper sleeper = {});

  std::string_view kind() const override { return "remote"; }
  std::string generate(const LlmRequest& request) override;

  /// Number of HTTP attempts issued so far (for tests and logging).
  int attempts() const;

 private:
  std::string attempt(const LlmRequest& request);
  void acquire_slot();
  void release_slot();

  RemoteConfig config_;
  std::string api_key_;
  Sleeper sleeper_;
  std::string scheme_host_port_;
  std::string path_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  int attempts_ = 0;
  std::deque<std::chrono::steady_clock::time_point> recent_;
};

// --- Gate -------------------------------------------------------------------

/// Append-only JSONL log of every complete() call: one line per call,
/// successful or not.
class Transcript {
 public:
  explicit Transcript(const std::filesystem::path& path, bool truncate = true);
  void append(const LlmRequest& request, const std::string* response, const LlmError* error);
  std::size_t lines() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::ofstream out_;
  std::size_t lines_ = 0;
};

inline constexpr std::size_t kDefaultPromptBudget = 12000;

struct GateOptions {
  /// Ceiling on prompt length in Unicode code points.
  std::size_t prompt_budget = kDefaultPromptBudget;
  std::shared_ptr<Transcript> transcript;
};

class LlmGate {
 public:
  LlmGate(std::shared_ptr<LlmBackend> backend, GateOptions options = {});

  /// Validates the request, enforces the prompt budget before dispatch and
  /// logs the exchange. Backend errors propagate as LlmError.
  std::string complete(const LlmRequest& request);

  LlmBackend& backend() { return *backend_; }
  const GateOptions& options() const { return options_; }
  std::size_t calls() const;

 private:
  std::shared_ptr<LlmBackend> backend_;
  GateOptions options_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

std::string complete(const LlmRequest& request, LlmBackend& backend, const GateOptions& options = {});

// --- Fixtures ---------------------------------------------------------------

struct FixtureRecordResult {
  std::size_t pairs = 0;
  std::size_t keys = 0;
  std::size_t conflicting_duplicates = 0;
};

/// Converts a transcript into a replay fixture ({"key", "response"} JSONL,
/// sorted by key). Failed calls are skipped; duplicate keys with differing
/// responses keep the last response and log a warning.
FixtureRecordResult record_fixtures(const std::filesystem::path& transcript,
                                    const std::filesystem::path& fixture_out);

// --- Construction by name ---------------------------------------------------

/// "echo", "scripted:<file.json>", "replay:<fixtures.jsonl>", "remote:<config.json>".
std::shared_ptr<LlmBackend> make_backend(std::string_view spec);

}  // namespace pljp
