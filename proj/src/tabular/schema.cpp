#include <algorithm>
#include <cmath>
#include <set>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/tabular.hpp"

namespace pxai {

std::string_view to_string(FeatureKind kind) {
  return kind == FeatureKind::kCategorical ? "categorical" : "continuous";
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features, std::string target,
                             std::vector<std::string> class_names)
    : features_(std::move(features)),
      target_(std::move(target)),
      class_names_(std::move(class_names)) {
  if (features_.empty()) fail(ErrorKind::kSchemaMismatch, "schema declares no features");
  std::set<std::string, std::less<>> seen;
  for (const auto& f : features_) {
    if (f.name.empty()) fail(ErrorKind::kSchemaMismatch, "feature with empty name");
    if (!seen.insert(f.name).second)
      fail(ErrorKind::kSchemaMismatch, fmt::format("duplicate feature name '{}'", f.name));
    std::set<std::string, std::less<>> cats(f.categories.begin(), f.categories.end());
    if (cats.size() != f.categories.size())
      fail(ErrorKind::kSchemaMismatch, fmt::format("duplicate category in feature '{}'", f.name));
    if (!f.categorical() && !f.categories.empty())
      fail(ErrorKind::kSchemaMismatch,
           fmt::format("continuous feature '{}' declares categories", f.name));
  }
  if (target_.empty()) fail(ErrorKind::kSchemaMismatch, "schema has no target column");
  if (seen.contains(target_))
    fail(ErrorKind::kSchemaMismatch, fmt::format("target '{}' is also a feature", target_));
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i)
    if (features_[i].name == name) return i;
  return std::nullopt;
}

std::optional<int> FeatureSchema::encode_category(std::size_t feature,
                                                  std::string_view value) const {
  const auto& cats = features_.at(feature).categories;
  auto it = std::find(cats.begin(), cats.end(), value);
  if (it == cats.end()) return std::nullopt;
  return static_cast<int>(it - cats.begin());
}

const std::string& FeatureSchema::decode_category(std::size_t feature, int code) const {
  const auto& cats = features_.at(feature).categories;
  if (code < 0 || static_cast<std::size_t>(code) >= cats.size())
    fail(ErrorKind::kValidation,
         fmt::format("code {} out of range for feature '{}'", code, features_[feature].name));
  return cats[static_cast<std::size_t>(code)];
}

std::optional<int> FeatureSchema::encode_class(std::string_view label) const {
  auto it = std::find(class_names_.begin(), class_names_.end(), label);
  if (it == class_names_.end()) return std::nullopt;
  return static_cast<int>(it - class_names_.begin());
}

void FeatureSchema::validate_complete() const {
  for (const auto& f : features_)
    if (f.categorical() && f.categories.size() < 2)
      fail(ErrorKind::kSchemaMismatch,
           fmt::format("categorical feature '{}' has fewer than 2 categories", f.name));
  if (class_names_.size() < 2)
    fail(ErrorKind::kSchemaMismatch, "schema needs at least 2 classes");
  std::set<std::string> unique(class_names_.begin(), class_names_.end());
  if (unique.size() != class_names_.size())
    fail(ErrorKind::kSchemaMismatch, "duplicate class name");
}

std::vector<std::size_t> FeatureSchema::continuous_features() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < features_.size(); ++i)
    if (!features_[i].categorical()) out.push_back(i);
  return out;
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json feats = nlohmann::json::array();
  for (const auto& f : features_) {
    nlohmann::json jf{{"name", f.name}, {"kind", to_string(f.kind)}};
    if (f.categorical()) jf["categories"] = f.categories;
    feats.push_back(std::move(jf));
  }
  return {{"features", feats}, {"target", target_}, {"class_names", class_names_}};
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
  try {
    std::vector<FeatureSpec> features;
    for (const auto& jf : j.at("features")) {
      FeatureSpec f;
      f.name = jf.at("name").get<std::string>();
      const auto kind = jf.value("kind", std::string("continuous"));
      if (kind == "categorical") {
        f.kind = FeatureKind::kCategorical;
      } else if (kind != "continuous") {
        fail(ErrorKind::kSchemaMismatch, fmt::format("unknown feature kind '{}'", kind));
      }
      if (jf.contains("categories")) {
        for (const auto& c : jf.at("categories"))
          f.categories.push_back(c.is_string() ? c.get<std::string>() : c.dump());
      }
      features.push_back(std::move(f));
    }
    std::vector<std::string> classes;
    if (j.contains("class_names"))
      for (const auto& c : j.at("class_names"))
        classes.push_back(c.is_string() ? c.get<std::string>() : c.dump());
    return FeatureSchema(std::move(features), j.at("target").get<std::string>(),
                         std::move(classes));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchemaMismatch, fmt::format("malformed schema: {}", e.what()));
  }
}

Instance::Instance(SchemaPtr schema, Vector values)
    : schema_(std::move(schema)), values_(std::move(values)) {
  if (!schema_) fail(ErrorKind::kValidation, "instance without schema");
  if (static_cast<std::size_t>(values_.size()) != schema_->feature_count())
    fail(ErrorKind::kValidation,
         fmt::format("instance has {} values, schema has {} features", values_.size(),
                     schema_->feature_count()));
  for (std::size_t i = 0; i < schema_->feature_count(); ++i) {
    const double v = values_[static_cast<Eigen::Index>(i)];
    const auto& f = schema_->feature(i);
    if (!std::isfinite(v))
      fail(ErrorKind::kValidation, fmt::format("feature '{}' is not finite", f.name));
    if (f.categorical()) {
      if (v != std::floor(v) || v < 0 || v >= static_cast<double>(f.categories.size()))
        fail(ErrorKind::kValidation,
             fmt::format("feature '{}' has invalid category code {}", f.name, v));
    }
  }
}

std::string Instance::display_value(std::size_t feature) const {
  const auto& f = schema_->feature(feature);
  const double v = (*this)[feature];
  if (f.categorical()) return schema_->decode_category(feature, static_cast<int>(v));
  return fmt::format("{:g}", v);
}

}  // namespace pxai
