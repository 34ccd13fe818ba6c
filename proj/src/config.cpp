#include "pljp/config.hpp"

#include <fmt/format.h>

#include "pljp/binio.hpp"

namespace pljp {

void GlobalConfig::overlay(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "log_level") {
        log_level = value.get<std::string>();
      } else if (key == "jobs") {
        jobs = value.get<std::size_t>();
      } else if (key == "seed") {
        seed = value.get<std::uint64_t>();
      } else if (key == "backend") {
        backend = value.get<std::string>();
      } else if (key == "n") {
        n = value.get<std::size_t>();
      } else if (key == "prompt_budget") {
        prompt_budget = value.get<std::size_t>();
      } else {
        throw Error(fmt::format("unknown config key '{}'", key));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(fmt::format("config key '{}': {}", key, e.what()));
    }
  }
  if (jobs == 0) throw Error("jobs must be at least 1");
}

GlobalConfig GlobalConfig::from_file(const std::filesystem::path& path) {
  GlobalConfig c;
  try {
    c.overlay(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
  return c;
}

nlohmann::ordered_json GlobalConfig::to_json() const {
  nlohmann::ordered_json j;
  j["log_level"] = log_level;
  j["jobs"] = jobs;
  j["seed"] = seed;
  j["backend"] = backend;
  j["n"] = n;
  j["prompt_budget"] = prompt_budget;
  return j;
}

}  // namespace pljp
