#include <fstream>
#include <sstream>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/narration.hpp"

namespace pxai {

std::string_view embedded_asset(std::string_view name) {
  const auto& assets = embedded_assets();
  const auto it = assets.find(std::string(name));
  if (it == assets.end()) fail(ErrorKind::kNotFound, fmt::format("no embedded asset '{}'", name));
  return it->second;
}

const GlossaryEntry* Glossary::find(const std::string& feature) const {
  const auto it = features.find(feature);
  return it == features.end() ? nullptr : &it->second;
}

std::string Glossary::term(const std::string& feature) const {
  const auto* e = find(feature);
  return e && !e->term.empty() ? e->term : feature;
}

std::string Glossary::value(const std::string& feature, const std::string& raw) const {
  if (const auto* e = find(feature)) {
    const auto it = e->values.find(raw);
    if (it != e->values.end()) return it->second;
  }
  return raw;
}

std::string Glossary::class_label(const std::string& raw) const {
  const auto it = classes.find(raw);
  return it == classes.end() ? raw : it->second;
}

Glossary Glossary::from_json(const nlohmann::json& j) {
  Glossary g;
  try {
    g.domain = j.value("domain", "");
    g.outcome = j.value("outcome", "");
    if (j.contains("classes")) g.classes = j.at("classes").get<std::map<std::string, std::string>>();
    if (j.contains("features")) {
      for (const auto& [name, f] : j.at("features").items()) {
        GlossaryEntry e;
        e.term = f.value("term", name);
        e.unit = f.value("unit", "");
        e.description = f.value("description", "");
        if (f.contains("values")) e.values = f.at("values").get<std::map<std::string, std::string>>();
        g.features.emplace(name, std::move(e));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("malformed glossary: {}", e.what()));
  }
  return g;
}

Glossary Glossary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kNotFound, fmt::format("cannot open glossary {}", path.string()));
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kFormat, fmt::format("glossary {}: {}", path.string(), e.what()));
  }
}

Glossary Glossary::builtin(std::string_view dataset) {
  const auto& assets = embedded_assets();
  const auto it = assets.find(fmt::format("glossary/{}.json", dataset));
  if (it == assets.end()) return {};
  return from_json(nlohmann::json::parse(it->second));
}

}  // namespace pxai
