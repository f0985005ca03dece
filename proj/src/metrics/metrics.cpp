#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <random>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/metrics.hpp"
#include "pxai/seeding.hpp"

namespace pxai {
namespace {

std::uint64_t instance_hash(const Instance& x) {
  const auto& v = x.values();
  return hash_values(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

}  // namespace

void MetricConfig::validate() const {
  if (!(infidelity.scale > 0.0)) fail(ErrorKind::kConfig, "infidelity.scale must be > 0");
  if (infidelity.samples < 1) fail(ErrorKind::kConfig, "infidelity.samples must be >= 1");
  if (!(lipschitz.radius > 0.0)) fail(ErrorKind::kConfig, "lipschitz.radius must be > 0");
  if (lipschitz.samples < 1) fail(ErrorKind::kConfig, "lipschitz.samples must be >= 1");
  if (!(complexity_tolerance >= 0.0)) fail(ErrorKind::kConfig, "complexity_tolerance must be >= 0");
}

nlohmann::json MetricConfig::to_json() const {
  return {{"infidelity", {{"scale", infidelity.scale}, {"samples", infidelity.samples}}},
          {"lipschitz",
           {{"radius", lipschitz.radius}, {"samples", lipschitz.samples}, {"axes", lipschitz.axes}}},
          {"complexity_tolerance", complexity_tolerance},
          {"seed", seed}};
}

MetricConfig MetricConfig::from_json(const nlohmann::json& j) {
  MetricConfig c;
  try {
    if (j.contains("infidelity")) {
      c.infidelity.scale = j["infidelity"].value("scale", c.infidelity.scale);
      c.infidelity.samples = j["infidelity"].value("samples", c.infidelity.samples);
    }
    if (j.contains("lipschitz")) {
      c.lipschitz.radius = j["lipschitz"].value("radius", c.lipschitz.radius);
      c.lipschitz.samples = j["lipschitz"].value("samples", c.lipschitz.samples);
      c.lipschitz.axes = j["lipschitz"].value("axes", c.lipschitz.axes);
    }
    c.complexity_tolerance = j.value("complexity_tolerance", c.complexity_tolerance);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, fmt::format("metric config: {}", e.what()));
  }
  c.validate();
  return c;
}

double infidelity(const AttributionExplanation& e, const Predictor& p, const Instance& x,
                  const Vector& scale, const Matrix& perturbations) {
  const auto m = static_cast<Eigen::Index>(x.size());
  if (perturbations.cols() != m || scale.size() != m || static_cast<Eigen::Index>(e.weights.size()) != m)
    fail(ErrorKind::kValidation, "infidelity inputs have mismatched widths");
  if (perturbations.rows() == 0) fail(ErrorKind::kValidation, "no perturbations");
  Matrix pert = perturbations;
  for (Eigen::Index j = 0; j < m; ++j)
    if (x.schema().feature(static_cast<std::size_t>(j)).categorical()) pert.col(j).setZero();
  const Eigen::Map<const Vector> phi(e.weights.data(), m);
  const int c = e.target_class;
  const double fx = p.predict_proba(x.values())[c];
  const Matrix z = (-(pert.array().rowwise() * scale.transpose().array())).matrix().rowwise() +
                   x.values().transpose();
  const Vector fz = p.predict_proba(z).col(c);
  std::vector<double> terms(static_cast<std::size_t>(pert.rows()));
  for (Eigen::Index k = 0; k < pert.rows(); ++k) {
    const double r = pert.row(k).dot(phi) - (fx - fz[k]);
    terms[static_cast<std::size_t>(k)] = r * r;
  }
  // Fixed summation order makes the estimate independent of sample order.
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum / static_cast<double>(terms.size());
}

double infidelity(const AttributionExplanation& e, const Predictor& p, const Instance& x,
                  const Vector& scale, const InfidelityConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "infidelity"));
  std::normal_distribution<double> g(0.0, cfg.scale);
  const auto m = static_cast<Eigen::Index>(x.size());
  Matrix pert = Matrix::Zero(static_cast<Eigen::Index>(cfg.samples), m);
  for (Eigen::Index k = 0; k < pert.rows(); ++k)
    for (Eigen::Index j = 0; j < m; ++j)
      if (!x.schema().feature(static_cast<std::size_t>(j)).categorical()) pert(k, j) = g(rng);
  return infidelity(e, p, x, scale, pert);
}

std::optional<double> infidelity(const Explanation& e, const Predictor& p, const Instance& x,
                                 const Vector& scale, const InfidelityConfig& cfg) {
  if (const auto* a = std::get_if<AttributionExplanation>(&e)) return infidelity(*a, p, x, scale, cfg);
  return std::nullopt;
}

double local_lipschitz(const ExplainFn& phi, const Instance& x, const Vector& scale,
                       const LipschitzConfig& cfg) {
  if (cfg.samples < 1) fail(ErrorKind::kConfig, "lipschitz.samples must be >= 1");
  if (!(cfg.radius > 0.0)) fail(ErrorKind::kConfig, "lipschitz.radius must be > 0");
  const auto cont = x.schema().continuous_features();
  if (cont.empty())
    fail(ErrorKind::kNumericDegeneracy, "no continuous features to perturb for Lipschitz");
  const Vector phi0 = phi(x);
  const auto d = static_cast<double>(cont.size());
  double best = 0.0;
  for (std::size_t k = 0; k < cfg.samples; ++k) {
    Rng rng(derive_seed(cfg.seed, "lipschitz", k));
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100) fail(ErrorKind::kNumericDegeneracy, "could not draw a distinct neighbour");
      Vector step = Vector::Zero(x.values().size());
      if (cfg.axes) {
        step[static_cast<Eigen::Index>(cont[k % cont.size()])] = cfg.radius;
      } else {
        for (auto j : cont) step[static_cast<Eigen::Index>(j)] = g(rng);
        const double n = step.norm();
        if (n == 0.0) continue;
        step *= cfg.radius * std::pow(u(rng), 1.0 / d) / n;
      }
      const Vector xp = x.values() + step.cwiseProduct(scale);
      if (xp == x.values()) continue;  // redraw
      const double dist = step.norm();
      const Vector phip = phi(Instance(x.schema_ptr(), xp));
      best = std::max(best, (phip - phi0).norm() / dist);
      break;
    }
  }
  return best;
}

Vector explanation_vector(const Explanation& e, std::size_t feature_count) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(feature_count));
  if (const auto* a = std::get_if<AttributionExplanation>(&e)) {
    for (std::size_t j = 0; j < a->weights.size() && j < feature_count; ++j)
      v[static_cast<Eigen::Index>(j)] = a->weights[j];
  } else {
    for (const auto& p : std::get<RuleExplanation>(e).predicates) v[static_cast<Eigen::Index>(p.feature)] = 1.0;
  }
  return v;
}

ExplainFn fixed_seed_explainer(const Predictor& p, Method m, const ExplainContext& ctx,
                               const ExplainerConfig& cfg, std::uint64_t stream_seed,
                               int target_class) {
  return [&p, m, &ctx, cfg, stream_seed, target_class](const Instance& xp) {
    const auto target = m == Method::kAnchor ? std::nullopt : std::optional<int>(target_class);
    return explanation_vector(explain(p, xp, m, ctx, cfg, target, stream_seed), xp.size());
  };
}

std::vector<std::size_t> complexity_ranking(const Explanation& e,
                                            const std::vector<double>& association) {
  const auto& b = base_of(e);
  const std::size_t m = b.feature_names.size();
  std::vector<std::size_t> order;
  if (const auto* a = std::get_if<AttributionExplanation>(&e)) {
    order.resize(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      return std::abs(a->weights[i]) > std::abs(a->weights[j]);
    });
    return order;
  }
  std::vector<bool> used(m, false);
  for (const auto& p : std::get<RuleExplanation>(e).predicates) {
    order.push_back(p.feature);
    used[p.feature] = true;
  }
  std::vector<std::size_t> rest;
  for (std::size_t j = 0; j < m; ++j)
    if (!used[j]) rest.push_back(j);
  std::stable_sort(rest.begin(), rest.end(), [&](std::size_t i, std::size_t j) {
    return association.at(i) > association.at(j);
  });
  order.insert(order.end(), rest.begin(), rest.end());
  return order;
}

std::size_t effective_complexity(const Predictor& p, const Instance& x, const Vector& reference,
                                 const std::vector<std::size_t>& ranking, double tolerance) {
  const auto m = static_cast<Eigen::Index>(x.size());
  if (reference.size() != m || static_cast<Eigen::Index>(ranking.size()) != m)
    fail(ErrorKind::kValidation, "reference or ranking length does not match the instance");
  Matrix rows(m + 1, m);
  for (Eigen::Index k = 0; k <= m; ++k) {
    rows.row(k) = reference.transpose();
    for (Eigen::Index r = 0; r < k; ++r) {
      const auto j = static_cast<Eigen::Index>(ranking[static_cast<std::size_t>(r)]);
      rows(k, j) = x.values()[j];
    }
  }
  const Matrix proba = p.predict_proba(rows);
  Eigen::Index c = 0;
  proba.row(m).maxCoeff(&c);
  for (Eigen::Index k = 0; k <= m; ++k) {
    Eigen::Index ck = 0;
    proba.row(k).maxCoeff(&ck);
    if (ck == c && std::abs(proba(k, c) - proba(m, c)) <= tolerance) return static_cast<std::size_t>(k);
  }
  return static_cast<std::size_t>(m);
}

std::size_t effective_complexity(const Explanation& e, const Predictor& p, const Instance& x,
                                 const Vector& reference, const std::vector<double>& association,
                                 double tolerance) {
  return effective_complexity(p, x, reference, complexity_ranking(e, association), tolerance);
}

InstanceEvaluation evaluate_instance(const Predictor& p, const Instance& x,
                                     const ExplainContext& ctx, const ExplainerConfig& ecfg,
                                     const MetricConfig& mcfg, const SelectionWeights& weights,
                                     const std::vector<Method>& methods) {
  const auto h = instance_hash(x);
  const Vector scale = ctx.train->scale();
  const Vector reference = ctx.train->reference_point();
  InfidelityConfig icfg = mcfg.infidelity;
  icfg.seed = derive_seed(mcfg.seed, "infidelity", h);
  LipschitzConfig lcfg = mcfg.lipschitz;
  lcfg.seed = derive_seed(mcfg.seed, "lipschitz", h);

  auto run = [&](Method m) {
    auto e = explain(p, x, m, ctx, ecfg);
    MetricBundle b;
    b.method = m;
    b.seed = mcfg.seed;
    b.infidelity = infidelity(e, p, x, scale, icfg);
    if (b.infidelity) b.infidelity_samples = icfg.samples;
    const auto& base = base_of(e);
    b.lipschitz = local_lipschitz(fixed_seed_explainer(p, m, ctx, ecfg, base.seed, base.target_class),
                                  x, scale, lcfg);
    b.lipschitz_samples = lcfg.samples;
    b.effective_complexity =
        effective_complexity(e, p, x, reference, ctx.association, mcfg.complexity_tolerance);
    return std::pair{std::move(e), b};
  };

  std::vector<std::future<std::pair<Explanation, MetricBundle>>> jobs;
  for (auto m : methods) jobs.push_back(std::async(std::launch::async, run, m));
  InstanceEvaluation out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto [e, b] = jobs[i].get();
    out.explanations.emplace(methods[i], std::move(e));
    out.bundles.push_back(b);
  }
  if (out.bundles.size() >= 2) out.selection = select_explainer(out.bundles, weights);
  return out;
}

}  // namespace pxai
