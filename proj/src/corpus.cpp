#include "pljp/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <regex>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pljp/binio.hpp"
#include "pljp/text.hpp"
#include "pljp/util.hpp"

namespace pljp {

using nlohmann::json;

CorpusError::CorpusError(CorpusErrc kind, const std::string& message, std::size_t line)
    : Error(line ? fmt::format("line {}: {}", line, message) : message), kind_(kind), line_(line) {}

// --- TermBins ---------------------------------------------------------------

TermBins::TermBins() : TermBins({0, 6, 9, 12, 24, 36, 60, 84, 120, 180, kOpenEnd}) {}

TermBins::TermBins(std::vector<int> edges, std::optional<int> life_label, std::optional<int> death_label)
    : edges_(std::move(edges)) {
  if (edges_.size() < 2) throw CorpusError(CorpusErrc::bad_bins, "term bins need at least two edges");
  if (edges_.front() != 0) throw CorpusError(CorpusErrc::bad_bins, "first term edge must be 0");
  if (edges_.back() != kOpenEnd) {
    throw CorpusError(CorpusErrc::bad_bins, "last term edge must be open-ended");
  }
  for (std::size_t i = 1; i < edges_.size(); ++i) {
    if (edges_[i] <= edges_[i - 1]) {
      throw CorpusError(CorpusErrc::bad_bins, "term edges must be strictly increasing");
    }
  }
  const int top = static_cast<int>(count()) - 1;
  life_label_ = life_label.value_or(top);
  death_label_ = death_label.value_or(top);
  for (int l : {life_label_, death_label_}) {
    if (l < 0 || l > top) throw CorpusError(CorpusErrc::bad_bins, "sentinel label out of range");
  }
}

int TermBins::bin(int term_months) const {
  if (term_months == kLifeSentence) return life_label_;
  if (term_months == kDeathSentence) return death_label_;
  if (term_months < 0) {
    throw CorpusError(CorpusErrc::negative_term, fmt::format("negative prison term {}", term_months));
  }
  // First edge strictly greater than the term closes its bin.
  const auto it = std::upper_bound(edges_.begin(), edges_.end(), term_months);
  return static_cast<int>(it - edges_.begin()) - 1;
}

std::string TermBins::display(int label) const {
  const auto i = static_cast<std::size_t>(label);
  const int lo = edges_.at(i);
  const int hi = edges_.at(i + 1);
  if (hi == kOpenEnd) return fmt::format("{} months or more", lo);
  if (lo == 0) return fmt::format("less than {} months", hi);
  return fmt::format("{} to {} months", lo, hi);
}

json TermBins::to_json() const {
  json edges = json::array();
  for (int e : edges_) {
    if (e == kOpenEnd) {
      edges.push_back(nullptr);
    } else {
      edges.push_back(e);
    }
  }
  return {{"edges", edges}, {"life_label", life_label_}, {"death_label", death_label_}};
}

TermBins TermBins::from_json(const json& j) {
  std::vector<int> edges;
  for (const auto& e : j.at("edges")) edges.push_back(e.is_null() ? kOpenEnd : e.get<int>());
  std::optional<int> life, death;
  if (j.contains("life_label")) life = j["life_label"].get<int>();
  if (j.contains("death_label")) death = j["death_label"].get<int>();
  return TermBins(std::move(edges), life, death);
}

int bin_prison_term(int term_months, const TermBins& bins) { return bins.bin(term_months); }

// --- LabelVocab -------------------------------------------------------------

LabelVocab::LabelVocab(Task task, std::vector<LabelId> labels, std::map<LabelId, std::string> display)
    : task_(task), labels_(std::move(labels)) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!index_.emplace(labels_[i], i).second) {
      throw Error(fmt::format("duplicate label '{}' in {} vocabulary", labels_[i], task_name(task_)));
    }
    auto it = display.find(labels_[i]);
    display_.push_back(it == display.end() ? labels_[i] : it->second);
  }
}

std::optional<std::size_t> LabelVocab::index_of(const LabelId& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t LabelVocab::require_index(const LabelId& label) const {
  if (auto i = index_of(label)) return *i;
  throw CorpusError(CorpusErrc::unknown_label,
                    fmt::format("unknown {} label '{}'", task_name(task_), label));
}

std::optional<std::size_t> LabelVocab::find_display(std::string_view text) const {
  for (std::size_t i = 0; i < display_.size(); ++i) {
    if (display_[i] == text) return i;
  }
  return std::nullopt;
}

std::uint64_t LabelVocab::hash() const {
  Fnv1a h;
  h.update(task_name(task_));
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    h.update("\x1f").update(labels_[i]).update("\x1e").update(display_[i]);
  }
  return h.digest();
}

json LabelVocab::to_json() const {
  json display = json::object();
  for (std::size_t i = 0; i < labels_.size(); ++i) display[labels_[i]] = display_[i];
  return {{"task", task_name(task_)}, {"labels", labels_}, {"display", display}};
}

LabelVocab LabelVocab::from_json(const json& j) {
  std::map<LabelId, std::string> display;
  if (j.contains("display")) display = j["display"].get<std::map<LabelId, std::string>>();
  return LabelVocab(parse_task(j.at("task").get<std::string>()),
                    j.at("labels").get<std::vector<LabelId>>(), std::move(display));
}

LabelVocab LabelVocab::for_terms(const TermBins& bins) {
  std::vector<LabelId> labels;
  std::map<LabelId, std::string> display;
  for (std::size_t i = 0; i < bins.count(); ++i) {
    labels.push_back(std::to_string(i));
    display[labels.back()] = bins.display(static_cast<int>(i));
  }
  return LabelVocab(Task::term, std::move(labels), std::move(display));
}

LabelVocab LabelVocab::from_cases(Task task, std::span<const Case> cases, const TermBins& bins) {
  if (task == Task::term) return for_terms(bins);
  std::vector<LabelId> labels;
  if (task == Task::article) {
    std::vector<int> articles;
    for (const auto& c : cases) articles.push_back(c.article);
    std::sort(articles.begin(), articles.end());
    articles.erase(std::unique(articles.begin(), articles.end()), articles.end());
    for (int a : articles) labels.push_back(std::to_string(a));
  } else {
    for (const auto& c : cases) labels.push_back(c.charge);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  }
  return LabelVocab(task, std::move(labels));
}

const LabelVocab& VocabSet::operator[](Task task) const {
  switch (task) {
    case Task::article: return article;
    case Task::charge: return charge;
    case Task::term: return term;
  }
  return term;
}

VocabSet VocabSet::from_cases(std::span<const Case> cases, const TermBins& bins) {
  return {LabelVocab::from_cases(Task::article, cases, bins),
          LabelVocab::from_cases(Task::charge, cases, bins), LabelVocab::for_terms(bins), bins};
}

json VocabSet::to_json() const {
  return {{"article", article.to_json()},
          {"charge", charge.to_json()},
          {"term", term.to_json()},
          {"term_bins", bins.to_json()}};
}

VocabSet VocabSet::from_json(const json& j) {
  return {LabelVocab::from_json(j.at("article")), LabelVocab::from_json(j.at("charge")),
          LabelVocab::from_json(j.at("term")), TermBins::from_json(j.at("term_bins"))};
}

void VocabSet::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

VocabSet VocabSet::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(fmt::format("invalid vocabulary file '{}': {}", path.string(), e.what()));
  }
}

Verdict verdict_of(const Case& c, const TermBins& bins) {
  return {std::to_string(c.article), c.charge, std::to_string(bins.bin(c.term_months))};
}

// --- Loading ----------------------------------------------------------------

namespace {

bool valid_date(const std::string& s) {
  static const std::regex kDate(R"(\d{4}-(0[1-9]|1[0-2])-(0[1-9]|[12]\d|3[01]))");
  return std::regex_match(s, kDate);
}

Case parse_record(const json& j, std::size_t line) {
  auto field = [&](const char* name) -> const json& {
    if (!j.contains(name) || j[name].is_null()) {
      throw CorpusError(CorpusErrc::missing_field, fmt::format("missing field '{}'", name), line);
    }
    return j[name];
  };
  auto typed = [&]<typename T>(const char* name, bool want_string) -> T {
    const json& v = field(name);
    if (want_string ? !v.is_string() : !v.is_number_integer()) {
      throw CorpusError(CorpusErrc::malformed_line,
                        fmt::format("field '{}' must be {}", name, want_string ? "a string" : "an integer"),
                        line);
    }
    return v.get<T>();
  };

  Case c;
  c.id = typed.operator()<std::string>("id", true);
  c.fact = text::normalize_space(text::nfc(typed.operator()<std::string>("fact", true)));
  c.article = typed.operator()<int>("article", false);
  c.charge = typed.operator()<std::string>("charge", true);
  c.term_months = typed.operator()<int>("term_months", false);
  c.date = typed.operator()<std::string>("date", true);

  if (c.id.empty()) throw CorpusError(CorpusErrc::missing_field, "empty 'id'", line);
  if (c.fact.empty()) throw CorpusError(CorpusErrc::missing_field, "empty 'fact'", line);
  if (c.charge.empty()) throw CorpusError(CorpusErrc::missing_field, "empty 'charge'", line);
  if (c.term_months < 0 && c.term_months != kLifeSentence && c.term_months != kDeathSentence) {
    throw CorpusError(CorpusErrc::negative_term,
                      fmt::format("term_months {} is negative and not a sentinel", c.term_months), line);
  }
  if (!valid_date(c.date)) {
    throw CorpusError(CorpusErrc::malformed_line, fmt::format("date '{}' is not YYYY-MM-DD", c.date), line);
  }
  return c;
}

}  // namespace

LoadResult parse_cases(std::string_view jsonl, const LoadOptions& options) {
  LoadResult result;
  std::unordered_set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= jsonl.size()) {
    auto end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    const auto line = text::trim(jsonl.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty()) {
      if (end == jsonl.size()) break;
      continue;
    }

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusError(CorpusErrc::malformed_line, fmt::format("invalid JSON: {}", e.what()), line_no);
    }
    if (!j.is_object()) throw CorpusError(CorpusErrc::malformed_line, "record is not an object", line_no);

    Case c = parse_record(j, line_no);
    if (options.vocab) {
      const bool known = options.vocab->article.index_of(std::to_string(c.article)).has_value() &&
                         options.vocab->charge.index_of(c.charge).has_value();
      if (!known) {
        const auto msg = fmt::format("unknown label (article {}, charge '{}')", c.article, c.charge);
        if (options.strict) throw CorpusError(CorpusErrc::unknown_label, msg, line_no);
        spdlog::warn("line {}: {}; record skipped", line_no, msg);
        result.skipped_lines.push_back(line_no);
        continue;
      }
    }
    if (!ids.insert(c.id).second) {
      throw CorpusError(CorpusErrc::duplicate_id, fmt::format("duplicate id '{}'", c.id), line_no);
    }
    result.cases.push_back(std::move(c));
    if (end == jsonl.size()) break;
  }
  return result;
}

LoadResult load_cases(const std::filesystem::path& path, const LoadOptions& options) {
  return parse_cases(read_file(path), options);
}

nlohmann::ordered_json case_to_json(const Case& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["fact"] = c.fact;
  j["article"] = c.article;
  j["charge"] = c.charge;
  j["term_months"] = c.term_months;
  j["date"] = c.date;
  return j;
}

std::string serialize_cases(std::span<const Case> cases) {
  std::string out;
  for (const auto& c : cases) {
    out += case_to_json(c).dump();
    out += '\n';
  }
  return out;
}

void save_cases(const std::filesystem::path& path, std::span<const Case> cases) {
  write_file(path, serialize_cases(cases));
}

// --- Splitting --------------------------------------------------------------

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  const double sum = r.train + r.validation + r.test;
  if (std::abs(sum - 1.0) > 1e-9 || r.train < 0 || r.validation < 0 || r.test < 0) {
    throw CorpusError(CorpusErrc::bad_ratios,
                      fmt::format("ratios {},{},{} must be non-negative and sum to 1", r.train, r.validation,
                                  r.test));
  }
  // The epsilon absorbs representation error such as 0.3 * 10 = 2.9999...
  auto floor_part = [n](double ratio) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  };
  const std::size_t val = floor_part(r.validation);
  const std::size_t test = floor_part(r.test);
  return {n - val - test, val, test};
}

DatasetSplit split_dataset(std::span<const Case> cases, const SplitRatios& ratios, std::uint64_t seed) {
  if (cases.empty()) throw CorpusError(CorpusErrc::empty_input, "cannot split an empty dataset");
  const auto sizes = split_sizes(cases.size(), ratios);

  std::vector<std::size_t> order(cases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  // 0 = train, 1 = validation, 2 = test
  std::vector<std::uint8_t> part(cases.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    part[order[k]] = k < sizes[0] ? 0 : (k < sizes[0] + sizes[1] ? 1 : 2);
  }
  DatasetSplit split;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto& dst = part[i] == 0 ? split.train : (part[i] == 1 ? split.validation : split.test);
    dst.push_back(cases[i]);
  }
  return split;
}

// --- Case database ----------------------------------------------------------

std::string CaseDatabase::to_jsonl() const {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["sub"] = e.rf.sub;
    j["obj"] = e.rf.obj;
    j["ex"] = e.rf.ex;
    j["article"] = std::stoi(e.verdict.article);
    j["charge"] = e.verdict.charge;
    j["term_label"] = std::stoi(e.verdict.term);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void CaseDatabase::save(const std::filesystem::path& path) const { write_file(path, to_jsonl()); }

CaseDatabase CaseDatabase::from_jsonl(std::string_view text) {
  CaseDatabase db;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(text, "\n")) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      CaseDatabaseEntry e;
      e.id = j.at("id").get<std::string>();
      e.rf = {j.at("sub").get<std::string>(), j.at("obj").get<std::string>(), j.at("ex").get<std::string>(),
              e.id};
      e.verdict = {std::to_string(j.at("article").get<int>()), j.at("charge").get<std::string>(),
                   std::to_string(j.at("term_label").get<int>())};
      if (e.rf.sub.empty() || e.rf.obj.empty() || e.rf.ex.empty()) {
        throw CorpusError(CorpusErrc::missing_field, "reorganized fact part is empty", line_no);
      }
      db.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw CorpusError(CorpusErrc::malformed_line, e.what(), line_no);
    }
  }
  return db;
}

CaseDatabase CaseDatabase::load(const std::filesystem::path& path) { return from_jsonl(read_file(path)); }

CaseDatabase sample_case_database(std::span<const Case> train,
                                  const std::unordered_map<std::string, ReorganizedFact>& reorganized,
                                  std::size_t n_db, std::uint64_t seed, const TermBins& bins) {
  if (n_db > train.size()) {
    throw CorpusError(CorpusErrc::insufficient_cases,
                      fmt::format("requested {} database cases but the training split has {}", n_db,
                                  train.size()));
  }
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(n_db);
  std::sort(order.begin(), order.end());

  std::vector<std::string> missing;
  CaseDatabase db;
  db.entries.reserve(n_db);
  for (std::size_t i : order) {
    const Case& c = train[i];
    auto it = reorganized.find(c.id);
    if (it == reorganized.end()) {
      missing.push_back(c.id);
      continue;
    }
    ReorganizedFact rf = it->second;
    rf.source_case_id = c.id;
    db.entries.push_back({c.id, std::move(rf), verdict_of(c, bins)});
  }
  if (!missing.empty()) {
    const std::size_t shown = std::min<std::size_t>(missing.size(), 10);
    std::vector<std::string> head(missing.begin(), missing.begin() + static_cast<long>(shown));
    throw CorpusError(CorpusErrc::missing_reorganization,
                      fmt::format("{} sampled case(s) lack a reorganization: {}{}", missing.size(),
                                  text::join(head, ", "), missing.size() > shown ? ", ..." : ""));
  }
  return db;
}

}  // namespace pljp
