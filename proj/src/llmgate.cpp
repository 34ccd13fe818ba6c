#include "pljp/llmgate.hpp"

#include <cstdlib>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "pljp/binio.hpp"
#include "pljp/text.hpp"
#include "pljp/util.hpp"

namespace pljp {

using nlohmann::json;

std::string_view llm_errc_name(LlmErrc kind) {
  switch (kind) {
    case LlmErrc::prompt_too_long: return "PromptTooLong";
    case LlmErrc::remote_timeout: return "RemoteTimeout";
    case LlmErrc::remote_refusal: return "RemoteRefusal";
    case LlmErrc::remote_failure: return "RemoteFailure";
    case LlmErrc::fixture_miss: return "FixtureMiss";
    case LlmErrc::corrupt_transcript: return "CorruptTranscript";
    case LlmErrc::invalid_request: return "InvalidRequest";
    case LlmErrc::config: return "ConfigError";
  }
  return "Unknown";
}

namespace {

LlmErrc parse_errc(std::string_view name) {
  for (auto k : {LlmErrc::prompt_too_long, LlmErrc::remote_timeout, LlmErrc::remote_refusal,
                 LlmErrc::remote_failure, LlmErrc::fixture_miss, LlmErrc::corrupt_transcript,
                 LlmErrc::invalid_request, LlmErrc::config}) {
    if (llm_errc_name(k) == name) return k;
  }
  if (name == "timeout") return LlmErrc::remote_timeout;
  if (name == "refusal") return LlmErrc::remote_refusal;
  if (name == "failure") return LlmErrc::remote_failure;
  throw LlmError(LlmErrc::config, fmt::format("unknown error kind '{}'", name));
}

}  // namespace

std::string prompt_hash(std::string_view prompt) { return hex64(fnv1a(prompt)); }

std::string fixture_key(const LlmRequest& request) {
  return hex64(Fnv1a()
                   .update(request.prompt)
                   .update("\x1f")
                   .update(fmt::format("{}", request.temperature))
                   .update("\x1f")
                   .update(std::to_string(request.max_tokens))
                   .digest());
}

// --- EchoMock ---------------------------------------------------------------

std::string EchoMock::generate(const LlmRequest& request) {
  if (config_.fixed) return *config_.fixed;

  if (request.tag.starts_with("reorg")) {
    const auto pos = request.prompt.rfind(kFactMarker);
    const std::string_view fact =
        pos == std::string::npos ? std::string_view(request.prompt)
                                 : std::string_view(request.prompt).substr(pos + kFactMarker.size());
    auto parts = text::sentences(fact);
    if (parts.empty()) parts.emplace_back("none stated");
    const std::string sub = parts.front();
    const std::string ex = parts.size() > 1 ? parts.back() : parts.front();
    std::string obj;
    if (parts.size() > 2) {
      obj = text::join(std::vector<std::string>(parts.begin() + 1, parts.end() - 1), " ");
    } else {
      obj = parts.front();
    }
    return fmt::format("SUB: {}\nOBJ: {}\nEX: {}", sub, obj, ex);
  }

  std::string first;
  std::size_t line_start = 0;
  const std::string& p = request.prompt;
  while (line_start <= p.size()) {
    auto line_end = p.find('\n', line_start);
    if (line_end == std::string::npos) line_end = p.size();
    std::string_view line(p.data() + line_start, line_end - line_start);
    if (line.starts_with(config_.candidate_prefix)) {
      const auto colon = line.find(": ");
      if (colon != std::string_view::npos) {
        auto items = text::split(line.substr(colon + 2), "; ");
        if (!items.empty()) first = std::string(text::trim(items.front()));
      }
      break;
    }
    line_start = line_end + 1;
  }
  std::string out = config_.label_template;
  const std::string placeholder = "{first_candidate}";
  for (auto pos = out.find(placeholder); pos != std::string::npos; pos = out.find(placeholder)) {
    out.replace(pos, placeholder.size(), first);
  }
  return out;
}

// --- ScriptedMock -----------------------------------------------------------

ScriptedConfig ScriptedConfig::from_json(const json& j) {
  ScriptedConfig c;
  if (j.contains("responses")) c.responses = j["responses"].get<std::map<std::string, std::string>>();
  if (j.contains("default") && !j["default"].is_null()) c.default_response = j["default"].get<std::string>();
  if (j.contains("faults")) {
    for (const auto& f : j["faults"]) {
      c.faults.push_back({f.at("tag_prefix").get<std::string>(), parse_errc(f.at("error").get<std::string>())});
    }
  }
  return c;
}

std::string ScriptedMock::generate(const LlmRequest& request) {
  for (const auto& fault : config_.faults) {
    if (request.tag.starts_with(fault.tag_prefix)) {
      throw LlmError(fault.error,
                     fmt::format("injected {} for tag '{}'", llm_errc_name(fault.error), request.tag));
    }
  }
  const auto key = prompt_hash(request.prompt);
  if (auto it = config_.responses.find(key); it != config_.responses.end()) return it->second;
  if (config_.rule) {
    if (auto r = config_.rule(request)) return *r;
  }
  if (config_.default_response) return *config_.default_response;
  throw LlmError(LlmErrc::fixture_miss, fmt::format("no scripted response for prompt hash {}", key));
}

// --- FixtureReplay ----------------------------------------------------------

FixtureReplay::FixtureReplay(const std::filesystem::path& fixture_file) {
  std::size_t line_no = 0;
  for (const auto& raw : text::split(read_file(fixture_file), "\n")) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      fixtures_[j.at("key").get<std::string>()] = j.at("response").get<std::string>();
    } catch (const json::exception& e) {
      throw LlmError(LlmErrc::config,
                     fmt::format("{}:{}: invalid fixture line: {}", fixture_file.string(), line_no, e.what()));
    }
  }
}

std::string FixtureReplay::generate(const LlmRequest& request) {
  const auto key = fixture_key(request);
  auto it = fixtures_.find(key);
  if (it == fixtures_.end()) {
    throw LlmError(LlmErrc::fixture_miss, fmt::format("no fixture for prompt hash {}", key));
  }
  return it->second;
}

// --- RemoteBackend ----------------------------------------------------------

RemoteConfig RemoteConfig::from_json(const json& j) {
  RemoteConfig c;
  c.endpoint = j.at("endpoint").get<std::string>();
  c.model = j.value("model", c.model);
  c.chat = j.value("chat", c.chat);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<long>(c.timeout.count())));
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.backoff_base = std::chrono::milliseconds(j.value("backoff_base_ms", static_cast<long>(c.backoff_base.count())));
  c.backoff_factor = j.value("backoff_factor", c.backoff_factor);
  c.max_concurrent = j.value("max_concurrent", c.max_concurrent);
  c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
  return c;
}

std::chrono::milliseconds backoff_delay(const RemoteConfig& config, int retry) {
  auto d = config.backoff_base;
  for (int i = 0; i < retry; ++i) d *= config.backoff_factor;
  return d;
}

namespace {

std::string env_or_throw(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v || !*v) {
    throw LlmError(LlmErrc::config, fmt::format("remote backend needs a credential in ${}", name));
  }
  return v;
}

// Thrown by one HTTP attempt; `retryable` drives the retry loop.
struct AttemptFailure {
  LlmErrc kind;
  std::string message;
  bool retryable;
};

}  // namespace

RemoteBackend::RemoteBackend(RemoteConfig config)
    : RemoteBackend(config, env_or_throw(config.api_key_env)) {}

RemoteBackend::RemoteBackend(RemoteConfig config, std::string api_key, Sleeper sleeper)
    : config_(std::move(config)), api_key_(std::move(api_key)), sleeper_(std::move(sleeper)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, kUrl)) {
    throw LlmError(LlmErrc::config, fmt::format("invalid endpoint URL '{}'", config_.endpoint));
  }
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
  if (config_.max_attempts < 1 || config_.max_concurrent < 1 || config_.requests_per_minute < 1) {
    throw LlmError(LlmErrc::config, "remote limits must be positive");
  }
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

int RemoteBackend::attempts() const {
  std::lock_guard lock(mu_);
  return attempts_;
}

void RemoteBackend::acquire_slot() {
  std::unique_lock lock(mu_);
  while (true) {
    const auto now = std::chrono::steady_clock::now();
    while (!recent_.empty() && now - recent_.front() >= std::chrono::minutes(1)) recent_.pop_front();
    if (in_flight_ < config_.max_concurrent &&
        static_cast<int>(recent_.size()) < config_.requests_per_minute) {
      ++in_flight_;
      ++attempts_;
      recent_.push_back(now);
      return;
    }
    if (in_flight_ >= config_.max_concurrent) {
      cv_.wait(lock);
    } else {
      cv_.wait_until(lock, recent_.front() + std::chrono::minutes(1));
    }
  }
}

void RemoteBackend::release_slot() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

std::string RemoteBackend::attempt(const LlmRequest& request) {
  json body = {{"model", config_.model},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  if (config_.chat) {
    body["messages"] = json::array({{{"role", "user"}, {"content", request.prompt}}});
  } else {
    body["prompt"] = request.prompt;
  }
  if (!request.stop.empty()) body["stop"] = request.stop;

  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};

  acquire_slot();
  auto result = client.Post(path_, headers, body.dump(), "application/json");
  release_slot();

  if (!result) {
    const auto err = result.error();
    const bool timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                         err == httplib::Error::Write;
    throw AttemptFailure{timeout ? LlmErrc::remote_timeout : LlmErrc::remote_failure,
                         fmt::format("HTTP request failed: {}", httplib::to_string(err)), true};
  }
  const int status = result->status;
  if (status == 408 || status == 429 || status >= 500) {
    throw AttemptFailure{status == 408 ? LlmErrc::remote_timeout : LlmErrc::remote_failure,
                         fmt::format("HTTP {}", status), true};
  }
  if (status >= 400) {
    throw AttemptFailure{LlmErrc::remote_refusal, fmt::format("HTTP {}: {}", status, result->body), false};
  }
  json reply;
  try {
    reply = json::parse(result->body);
    const auto& choice = reply.at("choices").at(0);
    if (choice.value("finish_reason", "") == "content_filter") {
      throw AttemptFailure{LlmErrc::remote_refusal, "completion refused by content filter", false};
    }
    if (choice.contains("message")) return choice["message"].at("content").get<std::string>();
    return choice.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw AttemptFailure{LlmErrc::remote_failure, fmt::format("unexpected response body: {}", e.what()), true};
  }
}

std::string RemoteBackend::generate(const LlmRequest& request) {
  AttemptFailure last{LlmErrc::remote_failure, "no attempt made", false};
  for (int i = 0; i < config_.max_attempts; ++i) {
    if (i > 0) {
      const auto delay = backoff_delay(config_, i - 1);
      spdlog::info("remote retry {}/{} after {} ms: {}", i + 1, config_.max_attempts, delay.count(),
                   last.message);
      sleeper_(delay);
    }
    try {
      return attempt(request);
    } catch (const AttemptFailure& f) {
      last = f;
      if (!f.retryable) break;
    }
  }
  throw LlmError(last.kind, last.message);
}

// --- Transcript / gate ------------------------------------------------------

Transcript::Transcript(const std::filesystem::path& path, bool truncate) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | (truncate ? std::ios::trunc : std::ios::app));
  if (!out_) throw LlmError(LlmErrc::config, fmt::format("cannot open transcript '{}'", path.string()));
}

void Transcript::append(const LlmRequest& request, const std::string* response, const LlmError* error) {
  nlohmann::ordered_json j;
  j["key"] = fixture_key(request);
  j["tag"] = request.tag;
  j["temperature"] = request.temperature;
  j["max_tokens"] = request.max_tokens;
  j["prompt"] = request.prompt;
  if (response) j["response"] = *response;
  if (error) j["error"] = {{"kind", llm_errc_name(error->kind())}, {"message", error->what()}};
  std::lock_guard lock(mu_);
  out_ << j.dump() << '\n';
  out_.flush();
  ++lines_;
}

std::size_t Transcript::lines() const {
  std::lock_guard lock(mu_);
  return lines_;
}

LlmGate::LlmGate(std::shared_ptr<LlmBackend> backend, GateOptions options)
    : backend_(std::move(backend)), options_(std::move(options)) {
  if (!backend_) throw LlmError(LlmErrc::config, "LlmGate needs a backend");
}

std::size_t LlmGate::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::string LlmGate::complete(const LlmRequest& request) {
  {
    std::lock_guard lock(mu_);
    ++calls_;
  }
  auto fail = [&](const LlmError& e) -> std::string {
    if (options_.transcript) options_.transcript->append(request, nullptr, &e);
    throw e;
  };
  if (request.prompt.empty()) return fail(LlmError(LlmErrc::invalid_request, "empty prompt"));
  if (request.temperature < 0) return fail(LlmError(LlmErrc::invalid_request, "negative temperature"));
  if (request.max_tokens <= 0) return fail(LlmError(LlmErrc::invalid_request, "max_tokens must be positive"));
  const auto len = text::length(request.prompt);
  if (len > options_.prompt_budget) {
    return fail(LlmError(LlmErrc::prompt_too_long,
                         fmt::format("prompt has {} characters, budget is {}", len, options_.prompt_budget)));
  }
  try {
    std::string response = backend_->generate(request);
    if (options_.transcript) options_.transcript->append(request, &response, nullptr);
    return response;
  } catch (const LlmError& e) {
    return fail(e);
  }
}

std::string complete(const LlmRequest& request, LlmBackend& backend, const GateOptions& options) {
  // Non-owning view of the caller's backend.
  LlmGate gate(std::shared_ptr<LlmBackend>(&backend, [](LlmBackend*) {}), options);
  return gate.complete(request);
}

// --- Fixtures ---------------------------------------------------------------

FixtureRecordResult record_fixtures(const std::filesystem::path& transcript,
                                    const std::filesystem::path& fixture_out) {
  FixtureRecordResult result;
  std::map<std::string, std::string> fixtures;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(read_file(transcript), "\n")) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw LlmError(LlmErrc::corrupt_transcript, fmt::format("line {}: {}", line_no, e.what()));
    }
    if (!j.is_object() || !j.contains("prompt") || !j["prompt"].is_string()) {
      throw LlmError(LlmErrc::corrupt_transcript, fmt::format("line {}: missing prompt", line_no));
    }
    if (!j.contains("response")) continue;  // failed call
    if (!j["response"].is_string()) {
      throw LlmError(LlmErrc::corrupt_transcript, fmt::format("line {}: response is not a string", line_no));
    }
    LlmRequest req;
    req.prompt = j["prompt"].get<std::string>();
    req.temperature = j.value("temperature", 0.0);
    req.max_tokens = j.value("max_tokens", 512);
    const auto key = fixture_key(req);
    if (j.contains("key") && j["key"] != key) {
      throw LlmError(LlmErrc::corrupt_transcript, fmt::format("line {}: key does not match prompt", line_no));
    }
    const auto response = j["response"].get<std::string>();
    ++result.pairs;
    auto [it, inserted] = fixtures.try_emplace(key, response);
    if (!inserted && it->second != response) {
      spdlog::warn("transcript line {}: prompt {} seen with a different response; keeping the last one",
                   line_no, key);
      ++result.conflicting_duplicates;
      it->second = response;
    }
  }
  std::string out;
  for (const auto& [key, response] : fixtures) {
    nlohmann::ordered_json j;
    j["key"] = key;
    j["response"] = response;
    out += j.dump();
    out += '\n';
  }
  write_file(fixture_out, out);
  result.keys = fixtures.size();
  return result;
}

// --- Factory ----------------------------------------------------------------

std::shared_ptr<LlmBackend> make_backend(std::string_view spec) {
  const auto colon = spec.find(':');
  const std::string name(spec.substr(0, colon));
  const std::string arg = colon == std::string_view::npos ? "" : std::string(spec.substr(colon + 1));
  auto need_arg = [&] {
    if (arg.empty()) throw LlmError(LlmErrc::config, fmt::format("backend '{}' needs a file argument", name));
  };
  auto load_json = [&] {
    try {
      return json::parse(read_file(arg));
    } catch (const json::exception& e) {
      throw LlmError(LlmErrc::config, fmt::format("invalid backend config '{}': {}", arg, e.what()));
    }
  };
  if (name == "echo" || name == "echo-mock") {
    EchoConfig config;
    if (!arg.empty()) {
      const json j = load_json();
      if (j.contains("fixed")) config.fixed = j["fixed"].get<std::string>();
      config.label_template = j.value("label_template", config.label_template);
      config.candidate_prefix = j.value("candidate_prefix", config.candidate_prefix);
    }
    return std::make_shared<EchoMock>(std::move(config));
  }
  if (name == "scripted" || name == "scripted-mock") {
    need_arg();
    return std::make_shared<ScriptedMock>(ScriptedConfig::from_json(load_json()));
  }
  if (name == "replay" || name == "fixture-replay") {
    need_arg();
    return std::make_shared<FixtureReplay>(std::filesystem::path(arg));
  }
  if (name == "remote") {
    need_arg();
    return std::make_shared<RemoteBackend>(RemoteConfig::from_json(load_json()));
  }
  throw LlmError(LlmErrc::config,
                 fmt::format("unknown backend '{}' (expected echo, scripted, replay or remote)", name));
}

}  // namespace pljp
