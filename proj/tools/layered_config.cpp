#include "layered_config.hpp"

#include <fstream>

#include "gfm/error.hpp"

namespace gfm::cli {

namespace {

nlohmann::json::json_pointer pointer_for(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const auto dot = dotted.find('.', start);
    const auto part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    check(!part.empty(), Errc::invalid_config, "bad config key '" + dotted + "'");
    p += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return nlohmann::json::json_pointer(p);
}

}  // namespace

LayeredConfig::LayeredConfig(nlohmann::json defaults) : merged_(std::move(defaults)) { mark(merged_, "", "default"); }

void LayeredConfig::mark(const nlohmann::json& patch, const std::string& prefix, const std::string& source) {
  if (patch.is_object() && !patch.empty()) {
    for (const auto& [k, v] : patch.items()) mark(v, prefix.empty() ? k : prefix + "." + k, source);
    return;
  }
  // a replaced subtree drops its old leaves
  for (auto it = sources_.begin(); it != sources_.end();)
    it = it->first.rfind(prefix + ".", 0) == 0 ? sources_.erase(it) : std::next(it);
  sources_[prefix] = source;
}

void LayeredConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(static_cast<bool>(in), Errc::invalid_config, "cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::parse_error, path.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("verb") && j.contains("config")) j = j["config"];
  check(j.is_object(), Errc::parse_error, path.string() + ": top level must be an object");
  merged_.merge_patch(j);
  mark(j, "", "file");
  file_ = path.string();
}

void LayeredConfig::set_flag(const std::string& dotted, const std::string& raw) {
  auto parsed = nlohmann::json::parse(raw, nullptr, false);
  set_flag_json(dotted, parsed.is_discarded() ? nlohmann::json(raw) : parsed);
}

void LayeredConfig::set_flag_json(const std::string& dotted, nlohmann::json value) {
  merged_[pointer_for(dotted)] = value;
  mark(value, dotted, "flag");
}

void LayeredConfig::print(std::ostream& os) const {
  for (const auto& [key, source] : sources_) {
    const auto ptr = pointer_for(key);
    os << "  " << key << " = " << (merged_.contains(ptr) ? merged_[ptr].dump() : "null") << "  [" << source << "]\n";
  }
}

}  // namespace gfm::cli
