#include <cmath>
#include <random>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/explainers.hpp"
#include "pxai/seeding.hpp"

#include "explainer_util.hpp"

namespace pxai {

LimeNeighborhood lime_neighborhood(const Predictor& p, const Instance& x,
                                   const std::vector<FeatureStats>& stats,
                                   const ExplainerConfig& cfg, int target_class) {
  if (cfg.lime.samples < 10) fail(ErrorKind::kConfig, "lime.samples must be >= 10");
  const auto& schema = x.schema();
  const auto m = static_cast<Eigen::Index>(x.size());
  if (stats.size() != x.size()) fail(ErrorKind::kValidation, "training stats do not match the instance");
  const auto n = static_cast<Eigen::Index>(cfg.lime.samples);
  const double width =
      cfg.lime.kernel_width > 0.0 ? cfg.lime.kernel_width : 0.75 * std::sqrt(static_cast<double>(m));

  Rng rng(derive_seed(cfg.seed, "lime.samples"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::discrete_distribution<int>> marginals(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    if (schema.feature(j).categorical())
      marginals[j] = std::discrete_distribution<int>(stats[j].frequencies.begin(),
                                                     stats[j].frequencies.end());

  LimeNeighborhood out{Matrix(n, m), Vector(n), Vector(n)};
  Matrix z(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      if (schema.feature(jj).categorical()) {
        z(i, j) = marginals[jj](rng);
        const bool same = z(i, j) == x.values()[j];
        out.design(i, j) = same ? 1.0 : 0.0;
        if (!same) d2 += 1.0;
      } else {
        const double scale = stats[jj].std > 0.0 ? stats[jj].std : 1.0;
        const double g = gauss(rng);
        z(i, j) = x.values()[j] + scale * g;
        out.design(i, j) = g;
        d2 += g * g;
      }
    }
    out.kernel[i] = std::exp(-d2 / (width * width));
  }
  out.response = p.predict_proba(z).col(target_class);
  return out;
}

std::pair<double, Vector> weighted_ridge(const Matrix& design, const Vector& response,
                                         const Vector& kernel, double ridge) {
  const double total = kernel.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    fail(ErrorKind::kNumericDegeneracy, "LIME kernel weights sum to zero");
  const Eigen::RowVectorXd xbar = (kernel.transpose() * design) / total;
  const double ybar = kernel.dot(response) / total;
  const Matrix xc = design.rowwise() - xbar;
  const Vector yc = response.array() - ybar;
  const Matrix xw = xc.array().colwise() * kernel.array();
  Matrix normal = xw.transpose() * xc;
  normal.diagonal().array() += ridge;
  const Vector beta = normal.ldlt().solve(xw.transpose() * yc);
  return {ybar - xbar.dot(beta), beta};
}

AttributionExplanation lime_tabular(const Predictor& p, const Instance& x,
                                    const std::vector<FeatureStats>& stats,
                                    const ExplainerConfig& cfg, int target_class) {
  AttributionExplanation out;
  out.method = Method::kLime;
  detail::fill_base(out, p, x, target_class, cfg);
  const auto hood = lime_neighborhood(p, x, stats, cfg, target_class);
  const auto [intercept, beta] = weighted_ridge(hood.design, hood.response, hood.kernel, cfg.lime.ridge);
  out.base_value = intercept;
  out.weights.assign(beta.data(), beta.data() + beta.size());
  out.sample_count = cfg.lime.samples;
  return out;
}

}  // namespace pxai
