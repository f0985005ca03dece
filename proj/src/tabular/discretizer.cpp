#include <algorithm>
#include <cmath>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/tabular.hpp"

namespace pxai {

Discretizer::Discretizer(SchemaPtr schema, std::vector<FeatureBins> bins)
    : schema_(std::move(schema)), bins_(std::move(bins)) {
  if (!schema_ || bins_.size() != schema_->feature_count())
    fail(ErrorKind::kValidation, "discretizer does not match schema");
  for (std::size_t j = 0; j < bins_.size(); ++j) {
    const auto& e = bins_[j].edges;
    for (std::size_t k = 1; k < e.size(); ++k)
      if (!(e[k] > e[k - 1]))
        fail(ErrorKind::kValidation,
             fmt::format("bin edges for '{}' not strictly increasing", schema_->feature(j).name));
  }
}

int Discretizer::bin_of(std::size_t feature, double value) const {
  const auto& b = bins_.at(feature);
  if (b.categorical) return static_cast<int>(value);
  // Number of edges strictly below the value: a value on an edge stays in the
  // lower bin, values outside the observed range clamp to the end bins.
  return static_cast<int>(std::lower_bound(b.edges.begin(), b.edges.end(), value) -
                          b.edges.begin());
}

std::vector<int> Discretizer::discretize(std::span<const double> values) const {
  if (values.size() != bins_.size())
    fail(ErrorKind::kValidation, "value count does not match discretizer");
  std::vector<int> out(values.size());
  for (std::size_t j = 0; j < values.size(); ++j) out[j] = bin_of(j, values[j]);
  return out;
}

std::vector<int> Discretizer::discretize(const Instance& instance) const {
  const auto& v = instance.values();
  return discretize(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

std::string Discretizer::describe(std::size_t feature, int bin) const {
  const auto& name = schema_->feature(feature).name;
  const auto& b = bins_.at(feature);
  if (b.categorical) return fmt::format("{} = {}", name, schema_->decode_category(feature, bin));
  if (b.edges.empty()) return fmt::format("{} is any value", name);
  const auto k = static_cast<std::size_t>(bin);
  if (bin <= 0) return fmt::format("{} <= {:.2f}", name, b.edges.front());
  if (k >= b.edges.size()) return fmt::format("{} > {:.2f}", name, b.edges.back());
  return fmt::format("{:.2f} < {} <= {:.2f}", b.edges[k - 1], name, b.edges[k]);
}

nlohmann::json Discretizer::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : bins_)
    arr.push_back({{"edges", b.edges},
                   {"categorical", b.categorical},
                   {"degenerate", b.degenerate},
                   {"category_count", b.category_count}});
  return {{"bins", arr}};
}

Discretizer Discretizer::from_json(SchemaPtr schema, const nlohmann::json& j) {
  std::vector<FeatureBins> bins;
  for (const auto& jb : j.at("bins")) {
    FeatureBins b;
    b.edges = jb.at("edges").get<std::vector<double>>();
    b.categorical = jb.at("categorical").get<bool>();
    b.degenerate = jb.at("degenerate").get<bool>();
    b.category_count = jb.at("category_count").get<int>();
    bins.push_back(std::move(b));
  }
  return Discretizer(std::move(schema), std::move(bins));
}

Discretizer fit_discretizer(const Dataset& dataset, int bins_per_feature) {
  if (bins_per_feature < 2)
    fail(ErrorKind::kConfig, fmt::format("bins_per_feature must be >= 2, got {}", bins_per_feature));
  const auto& schema = dataset.schema();
  std::vector<FeatureBins> bins(schema.feature_count());
  for (std::size_t j = 0; j < schema.feature_count(); ++j) {
    auto& b = bins[j];
    const auto& spec = schema.feature(j);
    if (spec.categorical()) {
      b.categorical = true;
      b.category_count = static_cast<int>(spec.categories.size());
      continue;
    }
    std::vector<double> col(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i)
      col[i] = dataset.rows()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    std::sort(col.begin(), col.end());
    const double max = col.back();
    for (int k = 1; k < bins_per_feature; ++k) {
      const double edge = quantile_sorted(col, static_cast<double>(k) / bins_per_feature);
      // Duplicate quantiles merge; an edge at the maximum would leave an empty top bin.
      if (edge >= max) continue;
      if (!b.edges.empty() && edge <= b.edges.back()) continue;
      b.edges.push_back(edge);
    }
    b.degenerate = b.edges.empty();
  }
  return Discretizer(dataset.schema_ptr(), std::move(bins));
}

std::vector<double> feature_label_association(const Dataset& dataset, const Discretizer& disc) {
  const std::size_t m = dataset.feature_count();
  const std::size_t classes = dataset.schema().class_count();
  const double n = static_cast<double>(dataset.size());
  std::vector<double> mi(m, 0.0);
  std::vector<double> py(classes, 0.0);
  for (int y : dataset.labels()) py[static_cast<std::size_t>(y)] += 1.0 / n;
  for (std::size_t j = 0; j < m; ++j) {
    const auto nb = static_cast<std::size_t>(disc.bins(j).bin_count());
    std::vector<double> joint(nb * classes, 0.0);
    std::vector<double> px(nb, 0.0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const auto b = static_cast<std::size_t>(
          disc.bin_of(j, dataset.rows()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
      joint[b * classes + static_cast<std::size_t>(dataset.labels()[i])] += 1.0 / n;
      px[b] += 1.0 / n;
    }
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t c = 0; c < classes; ++c) {
        const double pj = joint[b * classes + c];
        if (pj > 0.0) mi[j] += pj * std::log(pj / (px[b] * py[c]));
      }
  }
  return mi;
}

}  // namespace pxai
