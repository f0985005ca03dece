#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/narration.hpp"
#include "pxai/seeding.hpp"

namespace pxai {

namespace {

using enum FieldPolicy;

// Same text the JSON serializer writes, so verbatim numbers match the raw block.
std::string raw(double v) { return nlohmann::json(v).dump(); }

std::string rounded(double v) { return fmt::format("{:.3g}", v); }

bool shown(const Profile& p, const std::string& field) {
  const auto it = p.policy.find(field);
  return it == p.policy.end() || it->second != kOmitted;
}

std::string method_title(Method m) {
  switch (m) {
    case Method::kShap: return "SHAP";
    case Method::kLime: return "LIME";
    case Method::kAnchor: return "Anchor";
  }
  return "?";
}

std::string plain_method(Method m) {
  switch (m) {
    case Method::kShap: return "sharing out credit for the result among the details of the case";
    case Method::kLime: return "imitating the system with a simple scorecard around this case";
    case Method::kAnchor: return "finding a short if-then rule that locks in the result";
  }
  return "?";
}

std::string with_unit(const Glossary& g, const std::string& feature) {
  const auto* e = g.find(feature);
  if (!e || e->unit.empty()) return g.term(feature);
  return fmt::format("{} ({})", g.term(feature), e->unit);
}

std::string likelihood_words(double p) {
  if (p >= 0.9) return "very likely";
  if (p >= 0.7) return "likely";
  if (p >= 0.55) return "somewhat more likely than not";
  if (p > 0.45) return "close to a toss-up";
  return "uncertain";
}

std::string precision_words(double p) {
  if (p >= 0.95) return "almost every time";
  if (p >= 0.8) return "most of the time";
  if (p >= 0.6) return "more often than not";
  return "only some of the time";
}

std::string coverage_words(double c) {
  if (c >= 0.5) return "a large share of cases";
  if (c >= 0.2) return "a fair share of cases";
  if (c >= 0.05) return "a small share of cases";
  return "only a few cases";
}

struct ParsedCondition {
  std::optional<std::string> lower;  // exclusive
  std::optional<std::string> upper;  // inclusive
  std::optional<std::string> equals;
};

ParsedCondition parse_condition(const std::string& cond, const std::string& feature) {
  ParsedCondition c;
  const auto eq = feature + " = ";
  if (cond.rfind(eq, 0) == 0) {
    c.equals = cond.substr(eq.size());
    return c;
  }
  const auto gt = feature + " > ";
  const auto le = feature + " <= ";
  if (cond.rfind(gt, 0) == 0) {
    c.lower = cond.substr(gt.size());
  } else if (cond.rfind(le, 0) == 0) {
    c.upper = cond.substr(le.size());
  } else {
    const auto mid = " < " + feature + " <= ";
    const auto pos = cond.find(mid);
    if (pos != std::string::npos) {
      c.lower = cond.substr(0, pos);
      c.upper = cond.substr(pos + mid.size());
    }
  }
  return c;
}

std::string domain_predicate(const Glossary& g, const std::string& feature, const std::string& cond) {
  const auto c = parse_condition(cond, feature);
  const auto* e = g.find(feature);
  const std::string unit = e && !e->unit.empty() ? " " + e->unit : "";
  if (c.equals) {
    const auto label = g.value(feature, *c.equals);
    return label == *c.equals ? fmt::format("{} is {}", g.term(feature), label)
                              : fmt::format("{}: {}", g.term(feature), label);
  }
  if (c.lower && c.upper)
    return fmt::format("{} above {} and at most {}{}", g.term(feature), *c.lower, *c.upper, unit);
  if (c.lower) return fmt::format("{} above {}{}", g.term(feature), *c.lower, unit);
  if (c.upper) return fmt::format("{} at most {}{}", g.term(feature), *c.upper, unit);
  return cond;
}

std::string plain_predicate(const Glossary& g, const std::string& feature, const std::string& cond) {
  const auto c = parse_condition(cond, feature);
  if (c.equals) {
    const auto label = g.value(feature, *c.equals);
    return label == *c.equals ? fmt::format("{} is {}", g.term(feature), label)
                              : fmt::format("{}: {}", g.term(feature), label);
  }
  if (c.lower && c.upper) return fmt::format("{} is in a middle range", g.term(feature));
  if (c.lower) return fmt::format("{} is on the high side", g.term(feature));
  if (c.upper) return fmt::format("{} is on the low side", g.term(feature));
  return fmt::format("{} has a particular value", g.term(feature));
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::vector<std::size_t> by_magnitude(const std::vector<double>& w) {
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(w[a]) > std::abs(w[b]); });
  return order;
}

// --- instance table -------------------------------------------------------

std::string instance_table(const Profile& p, const Instance& x, const Vector& proba,
                           std::string* prediction_out) {
  const auto& schema = x.schema();
  const auto& g = p.glossary;
  int cls = 0;
  proba.maxCoeff(&cls);
  const auto& raw_label = schema.class_names().at(static_cast<std::size_t>(cls));
  std::string out;
  std::string pred;
  switch (p.kind) {
    case ProfileKind::kMlEngineer: {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto& f = schema.feature(i);
        out += fmt::format("- {} [{}] = {}\n", f.name, to_string(f.kind), x.display_value(i));
      }
      std::vector<double> pv(proba.data(), proba.data() + proba.size());
      pred = fmt::format("predicted class {} ({}); class order {}; probabilities {}", cls, raw_label,
                         nlohmann::json(schema.class_names()).dump(), nlohmann::json(pv).dump());
      break;
    }
    case ProfileKind::kDomainExpert: {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto& name = schema.feature(i).name;
        out += fmt::format("- {}: {}\n", with_unit(g, name), g.value(name, x.display_value(i)));
      }
      pred = fmt::format("model assessment: {} (estimated probability {})", g.class_label(raw_label),
                         rounded(proba[cls]));
      break;
    }
    case ProfileKind::kNonTechnical: {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto& name = schema.feature(i).name;
        out += fmt::format("- {}: {}\n", capitalize(g.term(name)), g.value(name, x.display_value(i)));
      }
      pred = fmt::format("the system's answer: {} ({})", g.class_label(raw_label),
                         likelihood_words(proba[cls]));
      break;
    }
  }
  out += "\n" + capitalize(pred) + ".";
  *prediction_out = pred;
  return out;
}

// --- explanation ----------------------------------------------------------

std::string ml_explanation(const Profile& p, const Explanation& e) {
  auto j = to_json(e);
  for (const auto& f : explanation_fields())
    if (!shown(p, f)) j.erase(f);
  return j.dump();
}

std::string domain_explanation(const Profile& p, const Explanation& e) {
  const auto& g = p.glossary;
  const auto& b = base_of(e);
  const auto target = g.class_label(b.target_label);
  std::string out;
  std::vector<std::size_t> mentioned;
  if (const auto* a = std::get_if<AttributionExplanation>(&e)) {
    out += fmt::format(
        "Method: {}, a feature-attribution method. Each factor's effect is its contribution to the "
        "model's probability of {} relative to a typical case",
        method_title(a->method), target);
    if (shown(p, "base_value"))
      out += a->method == Method::kShap
                 ? fmt::format(" (typical-case probability {})", rounded(a->base_value))
                 : fmt::format(" (local surrogate intercept {})", rounded(a->base_value));
    out += fmt::format("; this case scores {}.\n", rounded(b.prediction));
    for (auto i : by_magnitude(a->weights)) {
      const auto w = a->weights[i];
      if (w == 0.0) continue;
      const auto& name = b.feature_names[i];
      out += fmt::format("- {} = {}: {} the probability of {} (effect {:+.3g})\n", with_unit(g, name),
                         g.value(name, b.feature_values[i]), w > 0 ? "raises" : "lowers", target, w);
      mentioned.push_back(i);
    }
  } else {
    const auto& r = std::get<RuleExplanation>(e);
    out += fmt::format("Method: Anchor, a rule-based method. The model predicts {} ", target);
    if (r.predicates.empty()) {
      out += "for almost any case drawn from the data; no single condition was needed.\n";
    } else {
      out += "whenever all of the following hold:\n";
      for (const auto& pr : r.predicates) {
        out += fmt::format("- {}\n", domain_predicate(g, b.feature_names[pr.feature], pr.condition));
        mentioned.push_back(pr.feature);
      }
    }
    out += fmt::format("Within cases meeting the rule the model gives the same answer with precision {}",
                       rounded(r.precision_estimate));
    if (shown(p, "precision_lower_bound"))
      out += fmt::format(" (lower confidence bound {})", rounded(r.precision_lower_bound));
    out += fmt::format("; the rule applies to about {} of cases.\n", rounded(r.coverage_estimate));
    if (r.below_threshold)
      out += "The rule did not reach the requested precision; treat it as the best available "
             "approximation.\n";
  }
  if (shown(p, "flags") && !b.flags.empty())
    out += fmt::format("Notes from the explainer: {}.\n", fmt::join(b.flags, ", "));
  std::string defs;
  for (auto i : mentioned) {
    const auto* entry = g.find(b.feature_names[i]);
    if (entry && !entry->description.empty())
      defs += fmt::format("- {}: {}\n", g.term(b.feature_names[i]), entry->description);
  }
  if (!defs.empty()) out += "\nTerminology:\n" + defs;
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

std::string plain_explanation(const Profile& p, const Explanation& e) {
  const auto& g = p.glossary;
  const auto& b = base_of(e);
  const auto target = g.class_label(b.target_label);
  std::string out;
  if (const auto* a = std::get_if<AttributionExplanation>(&e)) {
    out += fmt::format("The explanation was made by {}.\n", plain_method(a->method));
    const auto order = by_magnitude(a->weights);
    const double top = order.empty() ? 0.0 : std::abs(a->weights[order.front()]);
    std::size_t listed = 0;
    for (auto i : order) {
      const auto w = a->weights[i];
      if (w == 0.0 || listed == 5) break;
      const double rel = std::abs(w) / top;
      const char* strength = rel >= 0.5 ? "a major" : rel >= 0.2 ? "a moderate" : "a minor";
      const auto& name = b.feature_names[i];
      const auto label = g.value(name, b.feature_values[i]);
      const auto what = label != b.feature_values[i] ? fmt::format("{} ({})", capitalize(g.term(name)), label)
                                                     : capitalize(g.term(name));
      out += fmt::format("- {} was {} reason pointing {} \"{}\".\n", what, strength,
                         w > 0 ? "towards" : "away from", target);
      ++listed;
    }
    if (listed == 0) out += "- No single detail stood out; the result reflects the case as a whole.\n";
    else if (listed < a->weights.size()) out += "Other details played a smaller part.\n";
  } else {
    const auto& r = std::get<RuleExplanation>(e);
    out += fmt::format("The explanation was made by {}.\n", plain_method(Method::kAnchor));
    if (r.predicates.empty()) {
      out += fmt::format("The system answers \"{}\" for nearly everyone, so no special condition was "
                         "needed.\n", target);
    } else {
      out += fmt::format("The system answers \"{}\" whenever all of these are true:\n", target);
      for (const auto& pr : r.predicates)
        out += fmt::format("- {}\n", plain_predicate(g, b.feature_names[pr.feature], pr.condition));
    }
    out += fmt::format("For people matching this description it gave the same answer {}. The "
                       "description fits {}.\n",
                       precision_words(r.precision_estimate), coverage_words(r.coverage_estimate));
    if (r.below_threshold) out += "This rule is a rough guide rather than a firm one.\n";
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

// --- selection rationale --------------------------------------------------

struct Leader {
  bool fidelity = false;
  bool robustness = false;
  bool parsimony = false;
};

Leader leads(const SelectionResult& s) {
  Leader l;
  auto best = [&](auto get) {
    std::optional<double> chosen;
    double min = std::numeric_limits<double>::infinity();
    for (const auto& b : s.bundles) {
      const auto v = get(b);
      if (!v) continue;
      min = std::min(min, *v);
      if (b.method == s.chosen) chosen = *v;
    }
    return chosen && *chosen <= min;
  };
  l.fidelity = best([](const MetricBundle& b) { return b.infidelity; });
  l.robustness = best([](const MetricBundle& b) { return b.lipschitz; });
  l.parsimony = best([](const MetricBundle& b) -> std::optional<double> {
    if (!b.effective_complexity) return std::nullopt;
    return static_cast<double>(*b.effective_complexity);
  });
  return l;
}

std::string ml_rationale(const std::optional<SelectionResult>& s, Method m) {
  if (!s) return fmt::format("Method {} was requested explicitly (user-forced); no comparison was run.",
                             to_string(m));
  std::string out = fmt::format(
      "Chosen: {} (lowest weighted rank sum). Weights: fidelity {}, robustness {}, parsimony {}.\n",
      to_string(s->chosen), raw(s->weights.fidelity), raw(s->weights.robustness),
      raw(s->weights.parsimony));
  for (const auto& b : s->bundles) {
    const auto score = s->scores.find(b.method);
    out += fmt::format("- {}: infidelity {}, lipschitz {}, effective_complexity {}, score {}\n",
                       to_string(b.method), b.infidelity ? raw(*b.infidelity) : "n/a",
                       b.lipschitz ? raw(*b.lipschitz) : "n/a",
                       b.effective_complexity ? std::to_string(*b.effective_complexity) : "n/a",
                       score == s->scores.end() ? "n/a" : raw(score->second));
  }
  out.pop_back();
  return out;
}

std::string domain_rationale(const std::optional<SelectionResult>& s, Method m) {
  if (!s) return fmt::format("{} was requested explicitly, so the methods were not compared.",
                             method_title(m));
  const auto l = leads(*s);
  std::vector<std::string> why;
  for (const auto& b : s->bundles) {
    if (b.method != s->chosen) continue;
    if (l.fidelity && b.infidelity)
      why.push_back(fmt::format("it tracked the model most faithfully (infidelity {})", rounded(*b.infidelity)));
    if (l.robustness && b.lipschitz)
      why.push_back(fmt::format("it was the most stable under small changes to the case (Lipschitz {})",
                                rounded(*b.lipschitz)));
    if (l.parsimony && b.effective_complexity)
      why.push_back(fmt::format("it needed the fewest factors to reproduce the prediction ({})",
                                *b.effective_complexity));
  }
  std::string out = fmt::format(
      "SHAP, LIME and Anchor were each run on this case and scored on faithfulness to the model, "
      "stability and brevity. {} was selected",
      method_title(s->chosen));
  if (why.empty()) out += " for the best overall balance of the three.";
  else out += fmt::format(" because {}.", fmt::join(why, "; "));
  return out;
}

std::string plain_rationale(const std::optional<SelectionResult>& s) {
  if (!s) return "The person asking chose this style of explanation, so no comparison was made.";
  const auto l = leads(*s);
  std::vector<std::string> why;
  if (l.fidelity) why.push_back("it follows the system's own behaviour most closely");
  if (l.robustness) why.push_back("it gives steady answers for very similar cases");
  if (l.parsimony) why.push_back("it needs the fewest details to tell the story");
  std::string out = "Several ways of explaining the result were tried and compared. This one was picked ";
  if (why.empty()) out += "because it gave the best balance overall.";
  else out += fmt::format("because {}.", fmt::join(why, ", and "));
  return out;
}

// --- context --------------------------------------------------------------

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string context_block(const std::vector<Hit>& hits) {
  if (hits.empty()) return std::string(kNoContextMarker);
  std::string out;
  for (const auto& h : hits) {
    if (!out.empty()) out += "\n\n";
    if (h.media == Media::kImageReference)
      out += fmt::format("[{}] (figure {}) {}", h.id, h.image_path, trimmed(h.text));
    else
      out += fmt::format("[{}] {}", h.id, trimmed(h.text));
  }
  return out;
}

std::string expand(const std::string& tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string::npos) break;
    const auto close = tmpl.find("}}", open);
    if (close == std::string::npos) break;
    const auto it = values.find(tmpl.substr(open + 2, close - open - 2));
    if (it == values.end()) {
      out += tmpl.substr(pos, close + 2 - pos);
    } else {
      out += tmpl.substr(pos, open - pos);
      out += it->second;
    }
    pos = close + 2;
  }
  out += tmpl.substr(pos);
  return out;
}

}  // namespace

PromptBundle build_prompt(const Profile& profile, const Instance& x, const Vector& proba,
                          const std::optional<SelectionResult>& selection, const Explanation& expl,
                          const std::vector<Hit>& context) {
  PromptBundle b;
  b.profile = profile.kind;
  b.template_version = profile.tmpl.version;
  b.instance_table = instance_table(profile, x, proba, &b.prediction);
  const auto m = method_of(expl);
  switch (profile.kind) {
    case ProfileKind::kMlEngineer:
      b.explanation = ml_explanation(profile, expl);
      b.selection_rationale = ml_rationale(selection, m);
      break;
    case ProfileKind::kDomainExpert:
      b.explanation = domain_explanation(profile, expl);
      b.selection_rationale = domain_rationale(selection, m);
      break;
    case ProfileKind::kNonTechnical:
      b.explanation = plain_explanation(profile, expl);
      b.selection_rationale = plain_rationale(selection);
      break;
  }
  b.context = context_block(context);
  for (const auto& h : context) b.cited_chunks.push_back(h.id);

  b.system = profile.tmpl.system;
  if (profile.kind == ProfileKind::kDomainExpert && !profile.glossary.domain.empty())
    b.system += fmt::format("\nDomain: {}. Outcome of interest: {}.", profile.glossary.domain,
                            profile.glossary.outcome);
  b.user = expand(profile.tmpl.user, {{"instance_table", b.instance_table},
                                      {"explanation", b.explanation},
                                      {"selection_rationale", b.selection_rationale},
                                      {"context", b.context}});
  return b;
}

std::string retrieval_query(const Explanation& e, const Glossary& glossary,
                            std::size_t top_features) {
  const auto& b = base_of(e);
  std::vector<std::string> parts{glossary.class_label(b.target_label)};
  if (!glossary.outcome.empty()) parts.push_back(glossary.outcome);
  std::vector<std::size_t> features;
  if (const auto* a = std::get_if<AttributionExplanation>(&e)) {
    for (auto i : by_magnitude(a->weights))
      if (a->weights[i] != 0.0 && features.size() < top_features) features.push_back(i);
  } else {
    for (const auto& p : std::get<RuleExplanation>(e).predicates)
      if (features.size() < top_features) features.push_back(p.feature);
  }
  for (auto i : features) {
    const auto& name = b.feature_names[i];
    parts.push_back(glossary.term(name));
    const auto label = glossary.value(name, b.feature_values[i]);
    if (label != b.feature_values[i]) parts.push_back(label);
  }
  return fmt::format("{}", fmt::join(parts, " "));
}

std::string PromptBundle::digest() const {
  std::string bytes = std::string(to_string(profile));
  bytes += '\0';
  bytes += system;
  bytes += '\0';
  bytes += user;
  return hex_digest(bytes);
}

nlohmann::json PromptBundle::to_json() const {
  return {{"profile", to_string(profile)},
          {"template_version", template_version},
          {"system", system},
          {"user", user},
          {"instance_table", instance_table},
          {"prediction", prediction},
          {"explanation", explanation},
          {"selection_rationale", selection_rationale},
          {"context", context},
          {"cited_chunks", cited_chunks}};
}

PromptBundle PromptBundle::from_json(const nlohmann::json& j) {
  PromptBundle b;
  try {
    b.profile = parse_profile(j.at("profile").get<std::string>());
    b.template_version = j.at("template_version").get<std::string>();
    b.system = j.at("system").get<std::string>();
    b.user = j.at("user").get<std::string>();
    b.instance_table = j.value("instance_table", "");
    b.prediction = j.value("prediction", "");
    b.explanation = j.value("explanation", "");
    b.selection_rationale = j.value("selection_rationale", "");
    b.context = j.value("context", "");
    b.cited_chunks = j.value("cited_chunks", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("malformed prompt: {}", e.what()));
  }
  return b;
}

}  // namespace pxai
