#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>

#include <optional>

#include "json.hpp"
#include "pxai/errors.hpp"
#include "pxai/predictors.hpp"
#include "pxai/tabular.hpp"

namespace pxai::testing {

inline std::filesystem::path source_path(const std::string& rel) {
  return std::filesystem::path(PXAI_SOURCE_DIR) / rel;
}

inline FeatureSchema schema_file(const std::string& rel) {
  std::ifstream in(source_path(rel));
  return FeatureSchema::from_json(nlohmann::json::parse(in));
}

inline Dataset heart() {
  return load_csv_dataset(source_path("data/heart.csv"), schema_file("configs/heart.schema.json"));
}

inline Dataset thyroid() {
  return load_csv_dataset(source_path("data/thyroid_synthetic.csv"),
                          schema_file("configs/thyroid.schema.json"));
}

// All-continuous schema x0..x{m-1} with two classes.
inline SchemaPtr continuous_schema(std::size_t m) {
  std::vector<FeatureSpec> feats;
  for (std::size_t j = 0; j < m; ++j) feats.push_back({"x" + std::to_string(j), FeatureKind::kContinuous, {}});
  return std::make_shared<const FeatureSchema>(std::move(feats), "y", std::vector<std::string>{"0", "1"});
}

inline Dataset uniform_dataset(std::size_t m, std::size_t n, std::uint64_t seed,
                               double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix rows(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  std::vector<int> labels(n);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) rows(i, j) = u(rng);
    labels[static_cast<std::size_t>(i)] = static_cast<int>(i % 2);
  }
  return Dataset(continuous_schema(m), std::move(rows), std::move(labels));
}

template <class F>
std::optional<ErrorKind> error_kind(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

struct Trained {
  Dataset train;
  Dataset test;
  PredictorPtr model;
};

// Default MLP on the pinned Heart split, trained once per process.
inline const Trained& heart_mlp() {
  static const Trained t = [] {
    auto [train, test] = split(heart(), 0.2, 7);
    auto model = train_mlp(train, MlpParams{.seed = 7}).first;
    return Trained{std::move(train), std::move(test), std::move(model)};
  }();
  return t;
}

}  // namespace pxai::testing
