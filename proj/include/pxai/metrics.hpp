#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pxai/explainers.hpp"

namespace pxai {

struct InfidelityConfig {
  double scale = 0.5;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
};

struct LipschitzConfig {
  double radius = 0.1;  // standardized units
  std::size_t samples = 20;
  std::uint64_t seed = 0;
  bool axes = false;  // step along continuous coordinate axes instead of the ball
};

struct MetricConfig {
  InfidelityConfig infidelity;
  LipschitzConfig lipschitz;
  double complexity_tolerance = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static MetricConfig from_json(const nlohmann::json& j);
};

// Perturbations are drawn in standardized units on continuous features
// (categorical features stay at x) and the inner product with the weights is
// taken in the same units, so raw I = I_std * scale.
double infidelity(const AttributionExplanation& e, const Predictor& p, const Instance& x,
                  const Vector& scale, const InfidelityConfig& cfg);
// Same estimator over an explicit set of standardized perturbations (one per row).
double infidelity(const AttributionExplanation& e, const Predictor& p, const Instance& x,
                  const Vector& scale, const Matrix& perturbations);
// nullopt for rule explanations.
std::optional<double> infidelity(const Explanation& e, const Predictor& p, const Instance& x,
                                 const Vector& scale, const InfidelityConfig& cfg);

using ExplainFn = std::function<Vector(const Instance&)>;

// Max over sampled neighbours of ||phi(x) - phi(x')|| / ||x - x'||, distances in
// standardized units. Sample k depends only on (seed, k).
double local_lipschitz(const ExplainFn& phi, const Instance& x, const Vector& scale,
                       const LipschitzConfig& cfg);

// Attribution weights, or the 0/1 rule-membership vector for anchors.
Vector explanation_vector(const Explanation& e, std::size_t feature_count);

// Re-runs `m` at a fixed stream seed so only the input varies. Attribution
// methods keep target_class fixed.
ExplainFn fixed_seed_explainer(const Predictor& p, Method m, const ExplainContext& ctx,
                               const ExplainerConfig& cfg, std::uint64_t stream_seed,
                               int target_class);

std::vector<std::size_t> complexity_ranking(const Explanation& e,
                                            const std::vector<double>& association);

// Smallest k such that keeping the top-k ranked features at x and the rest at
// `reference` keeps the predicted class and moves its probability by <= tol.
std::size_t effective_complexity(const Predictor& p, const Instance& x, const Vector& reference,
                                 const std::vector<std::size_t>& ranking, double tolerance);
std::size_t effective_complexity(const Explanation& e, const Predictor& p, const Instance& x,
                                 const Vector& reference, const std::vector<double>& association,
                                 double tolerance);

struct MetricBundle {
  Method method = Method::kLime;
  std::optional<double> infidelity;
  std::optional<double> lipschitz;
  std::optional<std::size_t> effective_complexity;
  std::size_t infidelity_samples = 0;
  std::size_t lipschitz_samples = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static MetricBundle from_json(const nlohmann::json& j);
};

struct SelectionWeights {
  double fidelity = 0.4;
  double robustness = 0.3;
  double parsimony = 0.3;

  nlohmann::json to_json() const;
};

struct SelectionResult {
  Method chosen = Method::kLime;
  std::vector<MetricBundle> bundles;
  std::map<Method, double> scores;
  SelectionWeights weights;

  nlohmann::json to_json() const;
};

// Weighted sum of within-instance ranks; lowest composite wins.
SelectionResult select_explainer(const std::vector<MetricBundle>& bundles,
                                 const SelectionWeights& weights);

struct InstanceEvaluation {
  std::map<Method, Explanation> explanations;
  std::vector<MetricBundle> bundles;
  std::optional<SelectionResult> selection;
};

// Explains x with each requested method (concurrently) and scores every explanation.
InstanceEvaluation evaluate_instance(const Predictor& p, const Instance& x,
                                     const ExplainContext& ctx, const ExplainerConfig& ecfg,
                                     const MetricConfig& mcfg, const SelectionWeights& weights,
                                     const std::vector<Method>& methods = {Method::kLime,
                                                                           Method::kShap,
                                                                           Method::kAnchor});

}  // namespace pxai
