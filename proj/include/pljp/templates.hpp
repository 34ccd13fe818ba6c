#pragma once

#include <filesystem>
#include <string>

namespace pljp {

/// A prompt template and the version string recorded wherever it is used.
struct PromptTemplate {
  std::string text;
  std::string version;
};

/// Built-in template by resource name (e.g. "reorg_v1"). The version is the
/// resource name.
PromptTemplate builtin_template(const std::string& name);

/// Template read from a file; its version is "file:<name>#<content hash>" so
/// edits change the version.
PromptTemplate template_from_file(const std::filesystem::path& path);

/// Replaces every "{key}" occurrence.
std::string fill(std::string text, const std::string& key, const std::string& value);

}  // namespace pljp
