#include "pljp/reorganizer.hpp"

#include <regex>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "pljp/binio.hpp"
#include "pljp/text.hpp"
#include "pljp/util.hpp"

namespace pljp {

using nlohmann::json;

namespace {

constexpr std::string_view kFactLead = "Facts: ";

std::string render_with(std::string_view fact, const PromptTemplate& instruction, const PromptTemplate& format) {
  if (text::trim(fact).empty()) throw ReorgError(ReorgErrc::empty_fact, "cannot reorganize an empty fact");
  std::string out = instruction.text;
  out += "\n\n";
  out += format.text;
  out += '\n';
  out += kFactLead;
  out += fact;
  return out;
}

}  // namespace

std::string ReorgTemplates::version() const {
  return fmt::format("{}+{}+{}", instruction.version, format.version, strict.version);
}

ReorgTemplates ReorgTemplates::builtin() {
  return {builtin_template("reorg_v1"), builtin_template("reorg_format_v1"), builtin_template("reorg_strict_v1")};
}

ReorgTemplates ReorgTemplates::with_instruction_file(const std::filesystem::path& path) {
  auto t = builtin();
  t.instruction = template_from_file(path);
  return t;
}

std::string render_reorg_prompt(std::string_view fact, const ReorgTemplates& templates) {
  return render_with(fact, templates.instruction, templates.format);
}

std::string render_strict_reorg_prompt(std::string_view fact, const ReorgTemplates& templates) {
  return render_with(fact, templates.instruction, templates.strict);
}

std::size_t reorg_prompt_overhead(const ReorgTemplates& templates) {
  return text::length(render_reorg_prompt("x", templates)) - 1;
}

std::optional<ReorganizedFact> parse_reorganized(std::string_view completion) {
  static const std::regex kHeader(R"(^[\s*#>\-]*(SUB|OBJ|EX)\s*\**\s*(?::|：)\s*\**(.*)$)", std::regex::icase);
  std::array<std::optional<std::string>, 3> parts;
  int current = -1;
  for (const auto& line : text::split(completion, "\n")) {
    std::smatch m;
    if (std::regex_match(line, m, kHeader)) {
      std::string name = m[1].str();
      for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      const int idx = name == "SUB" ? 0 : (name == "OBJ" ? 1 : 2);
      if (parts[idx]) {
        current = -1;  // duplicate header: keep the first section
        continue;
      }
      parts[idx] = m[2].str();
      current = idx;
    } else if (current >= 0) {
      *parts[current] += ' ';
      *parts[current] += line;
    }
  }
  for (const auto& p : parts) {
    if (!p) return std::nullopt;
  }
  auto finish = [](const std::string& s) {
    auto t = text::normalize_space(s);
    return t.empty() ? std::string(kNoneStated) : t;
  };
  return ReorganizedFact{finish(*parts[0]), finish(*parts[1]), finish(*parts[2]), {}};
}

std::string render_sections(const ReorganizedFact& rf) {
  return fmt::format("SUB: {}\nOBJ: {}\nEX: {}", rf.sub, rf.obj, rf.ex);
}

// --- Cache ------------------------------------------------------------------

namespace {

void load_cache_file(const std::filesystem::path& path, std::unordered_map<std::string, ReorganizedFact>& into) {
  std::size_t line_no = 0;
  for (const auto& raw : text::split(read_file(path), "\n")) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      into[j.at("key").get<std::string>()] = {j.at("sub").get<std::string>(), j.at("obj").get<std::string>(),
                                              j.at("ex").get<std::string>(), {}};
    } catch (const json::exception& e) {
      throw ReorgError(ReorgErrc::cache_io, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
}

}  // namespace

ReorgCache::ReorgCache(const std::filesystem::path& persist_path) {
  if (std::filesystem::exists(persist_path)) load_cache_file(persist_path, entries_);
  if (persist_path.has_parent_path()) std::filesystem::create_directories(persist_path.parent_path());
  out_.open(persist_path, std::ios::binary | std::ios::app);
  if (!out_) throw ReorgError(ReorgErrc::cache_io, fmt::format("cannot open cache '{}'", persist_path.string()));
}

void ReorgCache::seed_from(const std::filesystem::path& path) {
  std::unordered_map<std::string, ReorganizedFact> loaded;
  load_cache_file(path, loaded);
  std::lock_guard lock(mu_);
  for (auto& [k, v] : loaded) entries_.try_emplace(k, std::move(v));
}

std::string ReorgCache::key(std::string_view fact, std::string_view template_version) {
  return hex64(Fnv1a().update(template_version).update("\x1f").update(fact).digest());
}

std::optional<ReorganizedFact> ReorgCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ReorgCache::put(const std::string& key, const ReorganizedFact& rf, const std::string& template_version) {
  ReorganizedFact stored = rf;
  stored.source_case_id.clear();
  std::lock_guard lock(mu_);
  entries_[key] = stored;
  if (out_.is_open()) {
    nlohmann::ordered_json j;
    j["key"] = key;
    j["sub"] = stored.sub;
    j["obj"] = stored.obj;
    j["ex"] = stored.ex;
    j["template_version"] = template_version;
    out_ << j.dump() << '\n';
    out_.flush();
  }
}

std::size_t ReorgCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// --- Reorganization ---------------------------------------------------------

ReorganizedFact reorganize_fact(std::string_view fact, LlmGate& gate, ReorgCache& cache,
                                const ReorgTemplates& templates, std::string_view case_id) {
  if (text::trim(fact).empty()) throw ReorgError(ReorgErrc::empty_fact, "cannot reorganize an empty fact");
  const auto version = templates.version();
  const auto key = ReorgCache::key(fact, version);
  if (auto hit = cache.get(key)) {
    hit->source_case_id = std::string(case_id);
    return *hit;
  }

  LlmRequest request;
  request.prompt = render_reorg_prompt(fact, templates);
  request.tag = case_id.empty() ? "reorg" : fmt::format("reorg/{}", case_id);
  auto parsed = parse_reorganized(gate.complete(request));
  if (!parsed) {
    spdlog::info("reorganization of {} malformed; reprompting with strict format", case_id);
    request.prompt = render_strict_reorg_prompt(fact, templates);
    request.tag += "/strict";
    parsed = parse_reorganized(gate.complete(request));
    if (!parsed) {
      throw ReorgError(ReorgErrc::parse_failure,
                       fmt::format("reorganization of '{}' lacks SUB/OBJ/EX sections after reprompt", case_id));
    }
  }
  const auto summary_len = text::length(parsed->sub) + text::length(parsed->obj) + text::length(parsed->ex);
  if (summary_len >= text::length(fact)) {
    spdlog::warn("reorganized fact of {} is not shorter than the raw fact ({} >= {})", case_id, summary_len,
                 text::length(fact));
  }
  cache.put(key, *parsed, version);
  parsed->source_case_id = std::string(case_id);
  return *parsed;
}

// --- Concatenation ----------------------------------------------------------

namespace {

constexpr std::string_view kSepToken = "[SEP]";

std::string escape_part(std::string_view part) {
  std::string out;
  out.reserve(part.size());
  for (std::size_t i = 0; i < part.size(); ++i) {
    if (part[i] == '\\') {
      out += "\\\\";
    } else if (part.substr(i).starts_with(kSepToken)) {
      out += '\\';
      out += part[i];
    } else {
      out += part[i];
    }
  }
  return out;
}

}  // namespace

std::string concat_reorganized(const ReorganizedFact& rf) {
  std::string out = escape_part(rf.sub);
  out += kConcatSeparator;
  out += escape_part(rf.obj);
  out += kConcatSeparator;
  out += escape_part(rf.ex);
  return out;
}

std::array<std::string, 3> split_concatenated(std::string_view s) {
  std::vector<std::string> parts(1);
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      parts.back() += s[i + 1];
      i += 2;
    } else if (s.substr(i).starts_with(kConcatSeparator)) {
      parts.emplace_back();
      i += kConcatSeparator.size();
    } else {
      parts.back() += s[i];
      ++i;
    }
  }
  if (parts.size() != 3) {
    throw ReorgError(ReorgErrc::parse_failure,
                     fmt::format("concatenated fact has {} parts, expected 3", parts.size()));
  }
  return {parts[0], parts[1], parts[2]};
}

}  // namespace pljp
