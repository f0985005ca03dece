#include <algorithm>
#include <numeric>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/explainers.hpp"
#include "pxai/seeding.hpp"

#include "explainer_util.hpp"

namespace pxai {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kShap: return "shap";
    case Method::kLime: return "lime";
    case Method::kAnchor: return "anchor";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "shap") return Method::kShap;
  if (name == "lime") return Method::kLime;
  if (name == "anchor") return Method::kAnchor;
  fail(ErrorKind::kValidation, fmt::format("unknown explanation method '{}'", name));
}

void ExplainerConfig::validate() const {
  auto positive = [](std::size_t v, std::string_view name) {
    if (v < 1) fail(ErrorKind::kConfig, fmt::format("{} must be >= 1", name));
  };
  positive(shap.background_rows, "shap.background_rows");
  positive(shap.coalition_samples, "shap.coalition_samples");
  positive(shap.enumerate_threshold, "shap.enumerate_threshold");
  if (!(shap.ridge >= 0.0)) fail(ErrorKind::kConfig, "shap.ridge must be >= 0");
  if (lime.samples < 10) fail(ErrorKind::kConfig, "lime.samples must be >= 10");
  if (!(lime.kernel_width >= 0.0)) fail(ErrorKind::kConfig, "lime.kernel_width must be > 0");
  if (!(lime.ridge >= 0.0)) fail(ErrorKind::kConfig, "lime.ridge must be >= 0");
  if (!(anchor.precision_threshold > 0.0 && anchor.precision_threshold < 1.0))
    fail(ErrorKind::kConfig, "anchor.precision_threshold must be in (0, 1)");
  if (!(anchor.delta > 0.0 && anchor.delta < 1.0))
    fail(ErrorKind::kConfig, "anchor.delta must be in (0, 1)");
  if (!(anchor.epsilon > 0.0)) fail(ErrorKind::kConfig, "anchor.epsilon must be > 0");
  positive(anchor.beam_width, "anchor.beam_width");
  positive(anchor.max_rule_size, "anchor.max_rule_size");
  positive(anchor.batch_size, "anchor.batch_size");
  positive(anchor.sample_budget, "anchor.sample_budget");
  positive(anchor.coverage_samples, "anchor.coverage_samples");
}

nlohmann::json ExplainerConfig::to_json() const {
  return {{"shap",
           {{"background_rows", shap.background_rows},
            {"coalition_samples", shap.coalition_samples},
            {"enumerate_threshold", shap.enumerate_threshold},
            {"ridge", shap.ridge}}},
          {"lime",
           {{"samples", lime.samples}, {"kernel_width", lime.kernel_width}, {"ridge", lime.ridge}}},
          {"anchor",
           {{"precision_threshold", anchor.precision_threshold},
            {"delta", anchor.delta},
            {"epsilon", anchor.epsilon},
            {"beam_width", anchor.beam_width},
            {"max_rule_size", anchor.max_rule_size},
            {"batch_size", anchor.batch_size},
            {"sample_budget", anchor.sample_budget},
            {"coverage_samples", anchor.coverage_samples}}},
          {"seed", seed}};
}

ExplainerConfig ExplainerConfig::from_json(const nlohmann::json& j) {
  ExplainerConfig c;
  auto get = [](const nlohmann::json& obj, const char* key, auto& out) {
    if (obj.contains(key)) out = obj.at(key).get<std::decay_t<decltype(out)>>();
  };
  try {
    if (j.contains("shap")) {
      const auto& s = j.at("shap");
      get(s, "background_rows", c.shap.background_rows);
      get(s, "coalition_samples", c.shap.coalition_samples);
      get(s, "enumerate_threshold", c.shap.enumerate_threshold);
      get(s, "ridge", c.shap.ridge);
    }
    if (j.contains("lime")) {
      const auto& l = j.at("lime");
      get(l, "samples", c.lime.samples);
      get(l, "kernel_width", c.lime.kernel_width);
      get(l, "ridge", c.lime.ridge);
    }
    if (j.contains("anchor")) {
      const auto& a = j.at("anchor");
      get(a, "precision_threshold", c.anchor.precision_threshold);
      get(a, "delta", c.anchor.delta);
      get(a, "epsilon", c.anchor.epsilon);
      get(a, "beam_width", c.anchor.beam_width);
      get(a, "max_rule_size", c.anchor.max_rule_size);
      get(a, "batch_size", c.anchor.batch_size);
      get(a, "sample_budget", c.anchor.sample_budget);
      get(a, "coverage_samples", c.anchor.coverage_samples);
    }
    get(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, fmt::format("explainer config: {}", e.what()));
  }
  c.validate();
  return c;
}

std::string ExplainerConfig::digest() const {
  auto j = to_json();
  j.erase("seed");
  return hex_digest(j.dump());
}

Method method_of(const Explanation& e) {
  if (const auto* a = std::get_if<AttributionExplanation>(&e)) return a->method;
  return Method::kAnchor;
}

const ExplanationBase& base_of(const Explanation& e) {
  return std::visit([](const auto& v) -> const ExplanationBase& { return v; }, e);
}

namespace detail {

void fill_base(ExplanationBase& out, const Predictor& p, const Instance& x, int target_class,
               const ExplainerConfig& cfg) {
  const auto& schema = x.schema();
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= schema.class_count())
    fail(ErrorKind::kValidation, fmt::format("target class {} out of range", target_class));
  out.target_class = target_class;
  out.target_label = schema.class_names()[static_cast<std::size_t>(target_class)];
  out.prediction = p.predict_proba(x.values())[target_class];
  out.feature_names.clear();
  out.feature_values.clear();
  for (std::size_t j = 0; j < schema.feature_count(); ++j) {
    out.feature_names.push_back(schema.feature(j).name);
    out.feature_values.push_back(x.display_value(j));
  }
  out.seed = cfg.seed;
  out.config_digest = cfg.digest();
}

}  // namespace detail

nlohmann::json to_json(const Explanation& e) {
  const auto& b = base_of(e);
  nlohmann::json j{{"method", to_string(method_of(e))},
                   {"target_class", b.target_class},
                   {"target_label", b.target_label},
                   {"prediction", b.prediction}};
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t i = 0; i < b.feature_names.size(); ++i)
    features.push_back({{"name", b.feature_names[i]}, {"value", b.feature_values[i]}});

  if (const auto* a = std::get_if<AttributionExplanation>(&e)) {
    for (std::size_t i = 0; i < a->weights.size(); ++i) features[i]["weight"] = a->weights[i];
    j["base_value"] = a->base_value;
    j["features"] = features;
    j["sample_count"] = a->sample_count;
  } else {
    const auto& r = std::get<RuleExplanation>(e);
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& pr : r.predicates) {
      preds.push_back({{"feature", b.feature_names.at(pr.feature)},
                       {"index", pr.feature},
                       {"bin", pr.bin},
                       {"condition", pr.condition}});
      features[pr.feature]["predicate"] = pr.condition;
    }
    j["predicates"] = preds;
    j["features"] = features;
    j["precision_estimate"] = r.precision_estimate;
    j["precision_lower_bound"] = r.precision_lower_bound;
    j["coverage_estimate"] = r.coverage_estimate;
    j["samples_used"] = r.samples_used;
    j["below_threshold"] = r.below_threshold;
  }
  j["seed"] = b.seed;
  j["config_digest"] = b.config_digest;
  j["flags"] = b.flags;
  return j;
}

Explanation explanation_from_json(const nlohmann::json& j) {
  try {
    auto read_base = [&](ExplanationBase& b) {
      b.target_class = j.at("target_class").get<int>();
      b.target_label = j.at("target_label").get<std::string>();
      b.prediction = j.at("prediction").get<double>();
      for (const auto& f : j.at("features")) {
        b.feature_names.push_back(f.at("name").get<std::string>());
        b.feature_values.push_back(f.at("value").get<std::string>());
      }
      b.seed = j.at("seed").get<std::uint64_t>();
      b.config_digest = j.at("config_digest").get<std::string>();
      b.flags = j.value("flags", std::vector<std::string>{});
    };
    const auto m = parse_method(j.at("method").get<std::string>());
    if (m == Method::kAnchor) {
      RuleExplanation r;
      read_base(r);
      for (const auto& p : j.at("predicates"))
        r.predicates.push_back({p.at("index").get<std::size_t>(), p.at("bin").get<int>(),
                                p.at("condition").get<std::string>()});
      r.precision_estimate = j.at("precision_estimate").get<double>();
      r.precision_lower_bound = j.at("precision_lower_bound").get<double>();
      r.coverage_estimate = j.at("coverage_estimate").get<double>();
      r.samples_used = j.at("samples_used").get<std::size_t>();
      r.below_threshold = j.at("below_threshold").get<bool>();
      return r;
    }
    AttributionExplanation a;
    read_base(a);
    a.method = m;
    for (const auto& f : j.at("features")) a.weights.push_back(f.at("weight").get<double>());
    a.base_value = j.at("base_value").get<double>();
    a.sample_count = j.at("sample_count").get<std::size_t>();
    return a;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("malformed explanation: {}", e.what()));
  }
}

ExplainContext ExplainContext::build(std::shared_ptr<const Dataset> train,
                                     const ExplainerConfig& cfg) {
  if (!train || train->size() == 0) fail(ErrorKind::kEmptyDataset, "explainers need training data");
  Rng rng(derive_seed(cfg.seed, "shap.background"));
  std::vector<std::size_t> idx(train->size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto k = std::min(cfg.shap.background_rows, idx.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  auto disc = fit_discretizer(*train);
  auto assoc = feature_label_association(*train, disc);
  Dataset background = train->subset(idx);
  return ExplainContext{std::move(train), std::move(background), std::move(disc), std::move(assoc)};
}

std::uint64_t explanation_seed(const ExplainerConfig& cfg, Method m, const Instance& x) {
  const auto& v = x.values();
  return derive_seed(cfg.seed, to_string(m),
                     hash_values(std::span<const double>(v.data(), static_cast<std::size_t>(v.size()))));
}

Explanation explain(const Predictor& p, const Instance& x, Method m, const ExplainContext& ctx,
                    const ExplainerConfig& cfg, std::optional<int> target_class,
                    std::optional<std::uint64_t> seed_override) {
  if (x.size() != p.feature_count())
    fail(ErrorKind::kValidation, "instance width does not match the predictor");
  ExplainerConfig run = cfg;
  run.seed = seed_override ? *seed_override : explanation_seed(cfg, m, x);
  const int target = target_class ? *target_class : p.predict(x.values());
  switch (m) {
    case Method::kShap: return kernel_shap(p, x, ctx.background, run, target);
    case Method::kLime: return lime_tabular(p, x, ctx.train->stats(), run, target);
    case Method::kAnchor: {
      if (target_class && *target_class != p.predict(x.values()))
        fail(ErrorKind::kValidation, "anchor explains the predicted class only");
      return anchor_explain(p, x, ctx.discretizer, *ctx.train, run);
    }
  }
  fail(ErrorKind::kValidation, "unknown explanation method");
}

}  // namespace pxai
