#include "pljp/templates.hpp"

#include <map>

#include <fmt/format.h>

#include "pljp/binio.hpp"
#include "pljp/types.hpp"
#include "pljp/util.hpp"

namespace pljp {
namespace detail {
const std::map<std::string, std::string>& builtin_templates();
}

namespace {

std::string strip_final_newline(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

PromptTemplate builtin_template(const std::string& name) {
  const auto& all = detail::builtin_templates();
  auto it = all.find(name);
  if (it == all.end()) throw Error(fmt::format("no built-in template '{}'", name));
  return {strip_final_newline(it->second), name};
}

PromptTemplate template_from_file(const std::filesystem::path& path) {
  std::string body = strip_final_newline(read_file(path));
  return {body, fmt::format("file:{}#{}", path.filename().string(), hex64(fnv1a(body)).substr(0, 8))};
}

std::string fill(std::string text, const std::string& key, const std::string& value) {
  const std::string needle = "{" + key + "}";
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + value.size())) {
    text.replace(pos, needle.size(), value);
  }
  return text;
}

}  // namespace pljp
