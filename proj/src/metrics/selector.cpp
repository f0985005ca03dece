#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/metrics.hpp"

namespace pxai {
namespace {

constexpr const char* kNotApplicable = "rule-based explanations carry no feature importances";

int tie_order(Method m) {
  switch (m) {
    case Method::kLime: return 0;
    case Method::kShap: return 1;
    case Method::kAnchor: return 2;
  }
  return 3;
}

// Competition ranks (1 = lowest value) among bundles where the metric exists.
std::vector<std::optional<double>> ranks(const std::vector<std::optional<double>>& values) {
  std::vector<std::optional<double>> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) continue;
    double r = 1.0;
    for (const auto& v : values)
      if (v && *v < *values[i]) r += 1.0;
    out[i] = r;
  }
  return out;
}

}  // namespace

nlohmann::json MetricBundle::to_json() const {
  nlohmann::json j{{"method", to_string(method)},
                   {"infidelity", infidelity ? nlohmann::json(*infidelity) : nlohmann::json()},
                   {"lipschitz", lipschitz ? nlohmann::json(*lipschitz) : nlohmann::json()},
                   {"effective_complexity",
                    effective_complexity ? nlohmann::json(*effective_complexity) : nlohmann::json()},
                   {"infidelity_samples", infidelity_samples},
                   {"lipschitz_samples", lipschitz_samples},
                   {"seed", seed}};
  nlohmann::json na = nlohmann::json::object();
  if (!infidelity) na["infidelity"] = method == Method::kAnchor ? kNotApplicable : "not computed";
  if (!lipschitz) na["lipschitz"] = "not computed";
  if (!effective_complexity) na["effective_complexity"] = "not computed";
  j["not_applicable"] = na;
  return j;
}

MetricBundle MetricBundle::from_json(const nlohmann::json& j) {
  MetricBundle b;
  try {
    b.method = parse_method(j.at("method").get<std::string>());
    if (!j.at("infidelity").is_null()) b.infidelity = j["infidelity"].get<double>();
    if (!j.at("lipschitz").is_null()) b.lipschitz = j["lipschitz"].get<double>();
    if (!j.at("effective_complexity").is_null())
      b.effective_complexity = j["effective_complexity"].get<std::size_t>();
    b.infidelity_samples = j.value("infidelity_samples", std::size_t{0});
    b.lipschitz_samples = j.value("lipschitz_samples", std::size_t{0});
    b.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("malformed metric bundle: {}", e.what()));
  }
  return b;
}

nlohmann::json SelectionWeights::to_json() const {
  return {{"fidelity", fidelity}, {"robustness", robustness}, {"parsimony", parsimony}};
}

nlohmann::json SelectionResult::to_json() const {
  nlohmann::json b = nlohmann::json::array();
  for (const auto& x : bundles) b.push_back(x.to_json());
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [m, v] : scores) s[std::string(to_string(m))] = v;
  return {{"chosen", to_string(chosen)}, {"bundles", b}, {"scores", s}, {"weights", weights.to_json()}};
}

SelectionResult select_explainer(const std::vector<MetricBundle>& bundles,
                                 const SelectionWeights& weights) {
  if (bundles.size() < 2) fail(ErrorKind::kValidation, "selection needs at least two bundles");
  const std::array<double, 3> w{weights.fidelity, weights.robustness, weights.parsimony};
  for (double v : w)
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::kValidation, "selection weights must be nonnegative");
  if (w[0] + w[1] + w[2] <= 0.0) fail(ErrorKind::kValidation, "selection weights are all zero");

  const std::size_t n = bundles.size();
  std::array<std::vector<std::optional<double>>, 3> cols;
  for (auto& c : cols) c.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    cols[0][i] = bundles[i].infidelity;
    cols[1][i] = bundles[i].lipschitz;
    if (bundles[i].effective_complexity) cols[2][i] = static_cast<double>(*bundles[i].effective_complexity);
  }
  std::array<std::vector<std::optional<double>>, 3> rk{ranks(cols[0]), ranks(cols[1]), ranks(cols[2])};

  SelectionResult out;
  out.bundles = bundles;
  out.weights = weights;
  std::optional<std::size_t> best;
  std::vector<double> score(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    int available = 0;
    double plain = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (!rk[k][i]) continue;
      num += w[k] * *rk[k][i];
      den += w[k];
      plain += *rk[k][i];
      ++available;
    }
    if (available == 0) continue;
    // All available metrics weighted zero: fall back to equal weights over them.
    score[i] = den > 0.0 ? num / den : plain / available;
    out.scores[bundles[i].method] = score[i];

    if (!best) {
      best = i;
      continue;
    }
    const auto& a = bundles[i];
    const auto& b = bundles[*best];
    const double inf_a = a.infidelity.value_or(std::numeric_limits<double>::infinity());
    const double inf_b = b.infidelity.value_or(std::numeric_limits<double>::infinity());
    if (score[i] < score[*best] ||
        (score[i] == score[*best] &&
         (inf_a < inf_b || (inf_a == inf_b && tie_order(a.method) < tie_order(b.method)))))
      best = i;
  }
  if (!best) fail(ErrorKind::kSelection, "no bundle carries any applicable metric");
  out.chosen = bundles[*best].method;
  return out;
}

}  // namespace pxai
