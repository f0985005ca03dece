#include <cmath>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/predictors.hpp"

namespace pxai {

std::string_view to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::kMlp: return "mlp";
    case PredictorKind::kRandomForest: return "random_forest";
    case PredictorKind::kRemote: return "remote";
    case PredictorKind::kFunction: return "function";
  }
  return "unknown";
}

Vector Predictor::predict_proba(const Vector& row) const {
  Matrix batch = row.transpose();
  return predict_proba(batch).row(0).transpose();
}

int Predictor::predict(const Vector& row) const {
  Eigen::Index best = 0;
  predict_proba(row).maxCoeff(&best);
  return static_cast<int>(best);
}

void check_simplex(const Matrix& proba, std::size_t expected_rows, std::size_t classes) {
  if (static_cast<std::size_t>(proba.rows()) != expected_rows)
    fail(ErrorKind::kContractViolation,
         fmt::format("predictor returned {} rows for {} inputs", proba.rows(), expected_rows));
  if (static_cast<std::size_t>(proba.cols()) != classes)
    fail(ErrorKind::kContractViolation,
         fmt::format("predictor returned {} classes, expected {}", proba.cols(), classes));
  for (Eigen::Index i = 0; i < proba.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < proba.cols(); ++c) {
      const double v = proba(i, c);
      if (!(v >= 0.0) || !std::isfinite(v))
        fail(ErrorKind::kContractViolation,
             fmt::format("row {} has invalid probability {}", i, v));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      fail(ErrorKind::kContractViolation,
           fmt::format("row {} probabilities sum to {}", i, sum));
  }
}

FunctionPredictor::FunctionPredictor(std::size_t features, std::size_t classes, RowFn fn)
    : features_(features), classes_(classes), fn_(std::move(fn)) {}

PredictorPtr FunctionPredictor::binary(std::size_t features,
                                       std::function<double(const Vector&)> p1) {
  return std::make_shared<FunctionPredictor>(features, 2, [p1 = std::move(p1)](const Vector& x) {
    const double p = p1(x);
    Vector out(2);
    out << 1.0 - p, p;
    return out;
  });
}

Matrix FunctionPredictor::predict_proba(const Matrix& rows) const {
  Matrix out(rows.rows(), static_cast<Eigen::Index>(classes_));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out.row(i) = fn_(rows.row(i).transpose()).transpose();
  return out;
}

double accuracy(const Predictor& p, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const Matrix proba = p.predict_proba(data.rows());
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < proba.rows(); ++i) {
    Eigen::Index best = 0;
    proba.row(i).maxCoeff(&best);
    if (best == data.labels()[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j{{"train_accuracy", train_accuracy},
                   {"seed", seed},
                   {"hyperparameters", hyperparameters}};
  j["holdout_accuracy"] = holdout_accuracy ? nlohmann::json(*holdout_accuracy) : nlohmann::json();
  return j;
}

}  // namespace pxai
