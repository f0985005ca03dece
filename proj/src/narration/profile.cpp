#include <algorithm>
#include <regex>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/narration.hpp"

namespace pxai {

namespace {

constexpr std::string_view kPlaceholders[] = {"instance_table", "explanation",
                                              "selection_rationale", "context"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view to_string(ProfileKind k) {
  switch (k) {
    case ProfileKind::kMlEngineer: return "ml_engineer";
    case ProfileKind::kDomainExpert: return "domain_expert";
    case ProfileKind::kNonTechnical: return "non_technical";
  }
  return "unknown";
}

ProfileKind parse_profile(std::string_view name) {
  for (auto k : kAllProfiles)
    if (to_string(k) == name) return k;
  fail(ErrorKind::kValidation,
       fmt::format("unknown profile '{}' (expected ml_engineer, domain_expert or non_technical)", name));
}

std::string_view to_string(FieldPolicy p) {
  switch (p) {
    case FieldPolicy::kVerbatim: return "verbatim";
    case FieldPolicy::kTranslated: return "translated";
    case FieldPolicy::kOmitted: return "omitted";
  }
  return "unknown";
}

ProfileTemplate ProfileTemplate::parse(std::string_view text) {
  ProfileTemplate t;
  const auto first_nl = text.find('\n');
  const auto first = trim(text.substr(0, first_nl));
  if (first.rfind("version:", 0) != 0) fail(ErrorKind::kFormat, "template must start with 'version:'");
  t.version = trim(std::string_view(first).substr(8));
  const auto sys = text.find("[system]\n");
  const auto usr = text.find("[user]\n");
  if (sys == std::string_view::npos || usr == std::string_view::npos || usr < sys)
    fail(ErrorKind::kFormat, "template needs a [system] block followed by a [user] block");
  t.system = trim(text.substr(sys + 9, usr - sys - 9));
  t.user = trim(text.substr(usr + 7));

  static const std::regex placeholder(R"(\{\{([a-z_]+)\}\})");
  std::vector<std::string> seen;
  for (std::sregex_iterator it(t.user.begin(), t.user.end(), placeholder), end; it != end; ++it) {
    const auto name = (*it)[1].str();
    if (std::find(std::begin(kPlaceholders), std::end(kPlaceholders), name) == std::end(kPlaceholders))
      fail(ErrorKind::kFormat, fmt::format("template {}: unknown placeholder {{{{{}}}}}", t.version, name));
    seen.push_back(name);
  }
  for (auto p : kPlaceholders)
    if (std::count(seen.begin(), seen.end(), p) != 1)
      fail(ErrorKind::kFormat,
           fmt::format("template {}: placeholder {{{{{}}}}} must appear exactly once", t.version, p));
  return t;
}

const std::vector<std::string>& explanation_fields() {
  static const std::vector<std::string> fields{
      "method", "target_class", "target_label", "prediction", "features", "base_value",
      "sample_count", "predicates", "precision_estimate", "precision_lower_bound",
      "coverage_estimate", "samples_used", "below_threshold", "seed", "config_digest", "flags"};
  return fields;
}

Profile Profile::from_template(ProfileKind kind, std::string_view template_text, Glossary glossary) {
  Profile p;
  p.kind = kind;
  p.tmpl = ProfileTemplate::parse(template_text);
  p.glossary = std::move(glossary);
  using enum FieldPolicy;
  for (const auto& f : explanation_fields()) {
    switch (kind) {
      case ProfileKind::kMlEngineer: p.policy[f] = kVerbatim; break;
      case ProfileKind::kDomainExpert: p.policy[f] = kTranslated; break;
      case ProfileKind::kNonTechnical: p.policy[f] = kTranslated; break;
    }
  }
  if (kind != ProfileKind::kMlEngineer) {
    for (const char* f : {"seed", "config_digest", "sample_count", "samples_used", "target_class"})
      p.policy[f] = kOmitted;
  }
  if (kind == ProfileKind::kNonTechnical) {
    for (const char* f : {"base_value", "precision_lower_bound", "flags"}) p.policy[f] = kOmitted;
  }
  return p;
}

Profile Profile::builtin(ProfileKind kind, Glossary glossary) {
  return from_template(kind, embedded_asset(fmt::format("profiles/{}.tmpl", to_string(kind))),
                       std::move(glossary));
}

}  // namespace pxai
