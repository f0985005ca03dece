#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pxai/linalg.hpp"
#include "pxai/predictors.hpp"
#include "pxai/tabular.hpp"

namespace pxai {

enum class Method { kShap, kLime, kAnchor };

inline constexpr Method kAllMethods[] = {Method::kLime, Method::kShap, Method::kAnchor};

std::string_view to_string(Method m);
// Throws kValidation for anything but "shap", "lime", "anchor".
Method parse_method(std::string_view name);

struct ShapConfig {
  std::size_t background_rows = 25;
  std::size_t coalition_samples = 2048;
  std::size_t enumerate_threshold = 12;
  double ridge = 0.0;
};

struct LimeConfig {
  std::size_t samples = 5000;
  // 0 selects 0.75 * sqrt(M).
  double kernel_width = 0.0;
  double ridge = 1.0;
};

struct AnchorConfig {
  double precision_threshold = 0.95;  // tau
  double delta = 0.05;
  double epsilon = 0.1;  // KL-LUCB tolerance when picking the beam
  std::size_t beam_width = 4;
  std::size_t max_rule_size = 6;
  std::size_t batch_size = 100;
  std::size_t sample_budget = 20000;  // per rule-size round
  std::size_t coverage_samples = 10000;
};

struct ExplainerConfig {
  ShapConfig shap;
  LimeConfig lime;
  AnchorConfig anchor;
  std::uint64_t seed = 0;

  // Throws kConfig on zero counts or tau/delta outside (0, 1).
  void validate() const;
  nlohmann::json to_json() const;
  static ExplainerConfig from_json(const nlohmann::json& j);
  std::string digest() const;
};

// Fields every explanation carries.
struct ExplanationBase {
  int target_class = 0;
  std::string target_label;
  double prediction = 0.0;  // f(x)[target_class]
  std::vector<std::string> feature_names;
  std::vector<std::string> feature_values;
  std::uint64_t seed = 0;  // stream seed actually used
  std::string config_digest;
  std::vector<std::string> flags;
};

struct AttributionExplanation : ExplanationBase {
  Method method = Method::kShap;
  double base_value = 0.0;
  std::vector<double> weights;
  std::size_t sample_count = 0;
};

struct Predicate {
  std::size_t feature = 0;
  int bin = 0;
  std::string condition;
};

struct RuleExplanation : ExplanationBase {
  std::vector<Predicate> predicates;
  double precision_estimate = 0.0;
  double precision_lower_bound = 0.0;
  double coverage_estimate = 0.0;
  std::size_t samples_used = 0;
  bool below_threshold = false;
};

using Explanation = std::variant<AttributionExplanation, RuleExplanation>;

Method method_of(const Explanation& e);
const ExplanationBase& base_of(const Explanation& e);

nlohmann::json to_json(const Explanation& e);
Explanation explanation_from_json(const nlohmann::json& j);

// Exact Shapley values by enumeration when M <= enumerate_threshold, otherwise
// sampled KernelSHAP with the efficiency constraint enforced exactly.
AttributionExplanation kernel_shap(const Predictor& p, const Instance& x, const Dataset& background,
                                   const ExplainerConfig& cfg, int target_class);

// Perturbed neighborhood used by LIME. Design columns are standardized offsets
// (z - x) / std for continuous features and 1{z == x} for categorical ones.
struct LimeNeighborhood {
  Matrix design;
  Vector response;  // f(z)[target_class]
  Vector kernel;
};

LimeNeighborhood lime_neighborhood(const Predictor& p, const Instance& x,
                                   const std::vector<FeatureStats>& stats,
                                   const ExplainerConfig& cfg, int target_class);

// Weighted ridge with an unpenalized intercept. Returns (intercept, coefficients).
std::pair<double, Vector> weighted_ridge(const Matrix& design, const Vector& response,
                                         const Vector& kernel, double ridge);

AttributionExplanation lime_tabular(const Predictor& p, const Instance& x,
                                    const std::vector<FeatureStats>& stats,
                                    const ExplainerConfig& cfg, int target_class);

RuleExplanation anchor_explain(const Predictor& p, const Instance& x, const Discretizer& disc,
                               const Dataset& train, const ExplainerConfig& cfg);

// Bernoulli KL bounds used by KL-LUCB.
double kl_bernoulli(double p, double q);
double kl_upper_bound(double p, double level);
double kl_lower_bound(double p, double level);

// Everything the explainers need about one dataset, built once.
struct ExplainContext {
  std::shared_ptr<const Dataset> train;
  Dataset background;
  Discretizer discretizer;
  std::vector<double> association;  // feature-label mutual information

  static ExplainContext build(std::shared_ptr<const Dataset> train, const ExplainerConfig& cfg);
};

// Stream seed for (method, instance) under cfg.seed.
std::uint64_t explanation_seed(const ExplainerConfig& cfg, Method m, const Instance& x);

// Dispatch facade. Target class defaults to argmax f(x). When seed_override is
// set it replaces the per-instance stream seed.
Explanation explain(const Predictor& p, const Instance& x, Method m, const ExplainContext& ctx,
                    const ExplainerConfig& cfg, std::optional<int> target_class = std::nullopt,
                    std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace pxai
