#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "pxai/linalg.hpp"

namespace pxai {

enum class FeatureKind { kContinuous, kCategorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kContinuous;
  // Categorical only. May be empty in a declared schema, in which case the
  // loader fills it in order of first appearance.
  std::vector<std::string> categories;

  bool categorical() const { return kind == FeatureKind::kCategorical; }
  bool operator==(const FeatureSpec&) const = default;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  // Checks name uniqueness only; category and class completeness is checked by
  // validate_complete() once the loader has discovered any undeclared values.
  FeatureSchema(std::vector<FeatureSpec> features, std::string target,
                std::vector<std::string> class_names);

  const std::vector<FeatureSpec>& features() const { return features_; }
  const FeatureSpec& feature(std::size_t i) const { return features_.at(i); }
  std::size_t feature_count() const { return features_.size(); }
  const std::string& target() const { return target_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  std::size_t class_count() const { return class_names_.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const;
  std::optional<int> encode_category(std::size_t feature, std::string_view value) const;
  const std::string& decode_category(std::size_t feature, int code) const;
  std::optional<int> encode_class(std::string_view label) const;

  // Throws kSchemaMismatch if a categorical feature has < 2 categories or the
  // class list has < 2 entries / duplicates.
  void validate_complete() const;

  std::vector<std::size_t> continuous_features() const;

  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& j);

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
  std::string target_;
  std::vector<std::string> class_names_;
};

using SchemaPtr = std::shared_ptr<const FeatureSchema>;

struct FeatureStats {
  double mean = 0.0;
  double std = 0.0;  // population (ddof = 0)
  double min = 0.0;
  double max = 0.0;
  std::vector<double> deciles;  // 11 values, q = 0.0, 0.1, ..., 1.0
  // Categorical only: relative frequency per category code.
  std::vector<double> frequencies;
  int mode = 0;
};

// Linear-interpolation quantile on an ascending-sorted sample (numpy's default).
double quantile_sorted(std::span<const double> sorted, double q);

class Instance {
 public:
  Instance(SchemaPtr schema, Vector values);

  const Vector& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  const FeatureSchema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const { return schema_; }

  // Name -> display value ("63", "reversible").
  std::string display_value(std::size_t feature) const;

 private:
  SchemaPtr schema_;
  Vector values_;
};

class Dataset {
 public:
  Dataset(SchemaPtr schema, Matrix rows, std::vector<int> labels);

  const FeatureSchema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const { return schema_; }
  const Matrix& rows() const { return rows_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<FeatureStats>& stats() const { return stats_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t feature_count() const { return schema_->feature_count(); }

  Instance instance(std::size_t row) const;
  Dataset subset(std::span<const std::size_t> indices) const;

  // Per-feature std with zeros replaced by 1 (safe divisor for standardization).
  Vector scale() const;
  // Mean for continuous features, mode for categorical ones.
  Vector reference_point() const;

 private:
  SchemaPtr schema_;
  Matrix rows_;
  std::vector<int> labels_;
  std::vector<FeatureStats> stats_;
};

// Header must contain every schema feature plus the target, in any order;
// extra columns are ignored. Missing or unparseable cells are rejected.
Dataset load_csv_dataset(const std::filesystem::path& path, const FeatureSchema& schema);
Dataset load_csv_dataset(std::istream& in, const FeatureSchema& schema,
                         std::string_view source_name = "<stream>");

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified by label; both index lists are ascending.
SplitIndices split_indices(const Dataset& dataset, double test_fraction, std::uint64_t seed);
std::pair<Dataset, Dataset> split(const Dataset& dataset, double test_fraction,
                                  std::uint64_t seed);

struct FeatureBins {
  // Interior edges, strictly increasing. Bin k covers (edges[k-1], edges[k]];
  // bin 0 is everything <= edges[0], the last bin everything > edges.back().
  std::vector<double> edges;
  bool categorical = false;
  bool degenerate = false;
  int category_count = 0;

  int bin_count() const {
    return categorical ? category_count : static_cast<int>(edges.size()) + 1;
  }
};

class Discretizer {
 public:
  Discretizer(SchemaPtr schema, std::vector<FeatureBins> bins);

  const FeatureSchema& schema() const { return *schema_; }
  const FeatureBins& bins(std::size_t feature) const { return bins_.at(feature); }
  std::size_t feature_count() const { return bins_.size(); }

  int bin_of(std::size_t feature, double value) const;
  std::vector<int> discretize(const Instance& instance) const;
  std::vector<int> discretize(std::span<const double> values) const;

  // "age > 61.00", "48.00 < age <= 56.00", "thal = reversible".
  std::string describe(std::size_t feature, int bin) const;

  nlohmann::json to_json() const;
  static Discretizer from_json(SchemaPtr schema, const nlohmann::json& j);

 private:
  SchemaPtr schema_;
  std::vector<FeatureBins> bins_;
};

Discretizer fit_discretizer(const Dataset& dataset, int bins_per_feature = 4);

// Mutual information (nats) between each discretized feature and the label.
std::vector<double> feature_label_association(const Dataset& dataset, const Discretizer& disc);

std::string_view to_string(FeatureKind kind);

}  // namespace pxai
