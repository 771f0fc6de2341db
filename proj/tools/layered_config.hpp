#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

namespace gfm::cli {

// Configuration assembled from three layers, later layers winning:
// built-in defaults, a JSON file, command-line flags. Every leaf remembers
// which layer set it.
class LayeredConfig {
 public:
  explicit LayeredConfig(nlohmann::json defaults);

  // Accepts a plain config object or a run-summary JSON (its "config" member).
  // Throws parse-error.
  void apply_file(const std::filesystem::path& path);
  // Sets a dotted path ("distill.stage"). Strings that parse as JSON keep their
  // JSON type ("3" -> 3, "true" -> true, "[1,2]" -> array); others stay strings.
  void set_flag(const std::string& dotted, const std::string& raw);
  void set_flag_json(const std::string& dotted, nlohmann::json value);

  const nlohmann::json& value() const { return merged_; }
  // Leaf path -> "default" | "file" | "flag".
  const std::map<std::string, std::string>& sources() const { return sources_; }
  std::string file() const { return file_; }

  // One line per leaf: "  key = value  [source]".
  void print(std::ostream& os) const;

 private:
  void mark(const nlohmann::json& patch, const std::string& prefix, const std::string& source);

  nlohmann::json merged_;
  std::map<std::string, std::string> sources_;
  std::string file_;
};

}  // namespace gfm::cli
