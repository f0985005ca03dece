#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pxai/linalg.hpp"
#include "pxai/tabular.hpp"

namespace pxai {

enum class PredictorKind { kMlp, kRandomForest, kRemote, kFunction };

std::string_view to_string(PredictorKind kind);

// Black-box classifier contract. Implementations are immutable after
// construction; predict_proba may be called concurrently.
class Predictor {
 public:
  virtual ~Predictor() = default;

  // One row per input row; each output row is a probability vector.
  virtual Matrix predict_proba(const Matrix& rows) const = 0;
  virtual PredictorKind kind() const = 0;
  virtual std::size_t class_count() const = 0;
  virtual std::size_t feature_count() const = 0;

  Vector predict_proba(const Vector& row) const;
  int predict(const Vector& row) const;
};

using PredictorPtr = std::shared_ptr<const Predictor>;

// Throws kContractViolation if any row is off the probability simplex (1e-6).
void check_simplex(const Matrix& proba, std::size_t expected_rows, std::size_t classes);

// Adapts a per-row callable; used for synthetic models.
class FunctionPredictor final : public Predictor {
 public:
  using RowFn = std::function<Vector(const Vector&)>;

  FunctionPredictor(std::size_t features, std::size_t classes, RowFn fn);

  // Two-class model whose positive-class probability is fn(row).
  static PredictorPtr binary(std::size_t features, std::function<double(const Vector&)> p1);

  Matrix predict_proba(const Matrix& rows) const override;
  PredictorKind kind() const override { return PredictorKind::kFunction; }
  std::size_t class_count() const override { return classes_; }
  std::size_t feature_count() const override { return features_; }

 private:
  std::size_t features_;
  std::size_t classes_;
  RowFn fn_;
};

// Raw feature vector -> model input: z-scored continuous columns followed by
// one-hot blocks for categorical columns, in schema order.
struct InputEncoder {
  std::vector<bool> categorical;
  std::vector<int> category_count;
  Vector mean;
  Vector scale;

  static InputEncoder fit(const Dataset& train);
  Eigen::Index width() const;
  Matrix encode(const Matrix& rows) const;

  nlohmann::json to_json() const;
  static InputEncoder from_json(const nlohmann::json& j);
};

struct MlpParams {
  int hidden_units = 8;
  int epochs = 1000;
  double learning_rate = 0.05;
  double weight_decay = 3e-2;
  std::uint64_t seed = 0;
};

// One tanh hidden layer, softmax output.
class MlpPredictor final : public Predictor {
 public:
  MlpPredictor(InputEncoder encoder, Matrix w1, Vector b1, Matrix w2, Vector b2);

  Matrix predict_proba(const Matrix& rows) const override;
  PredictorKind kind() const override { return PredictorKind::kMlp; }
  std::size_t class_count() const override { return static_cast<std::size_t>(b2_.size()); }
  std::size_t feature_count() const override { return encoder_.categorical.size(); }

  nlohmann::json to_json() const;
  static std::shared_ptr<const MlpPredictor> from_json(const nlohmann::json& j);

 private:
  InputEncoder encoder_;
  Matrix w1_;  // input width x hidden
  Vector b1_;
  Matrix w2_;  // hidden x classes
  Vector b2_;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  bool categorical_split = false;
  double threshold = 0.0;  // continuous: go left when value <= threshold;
                           // categorical: go left when value == threshold
  int left = -1;
  int right = -1;
  int leaf_class = 0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;
  int predict(const double* row) const;
};

struct ForestParams {
  int trees = 100;
  int max_depth = 8;
  std::uint64_t seed = 0;
};

// Probability = fraction of tree votes.
class RandomForestPredictor final : public Predictor {
 public:
  RandomForestPredictor(std::vector<DecisionTree> trees, std::vector<bool> categorical,
                        std::size_t classes);

  Matrix predict_proba(const Matrix& rows) const override;
  PredictorKind kind() const override { return PredictorKind::kRandomForest; }
  std::size_t class_count() const override { return classes_; }
  std::size_t feature_count() const override { return categorical_.size(); }

  const std::vector<DecisionTree>& trees() const { return trees_; }

  nlohmann::json to_json() const;
  static std::shared_ptr<const RandomForestPredictor> from_json(const nlohmann::json& j);

 private:
  std::vector<DecisionTree> trees_;
  std::vector<bool> categorical_;
  std::size_t classes_;
};

struct TrainReport {
  double train_accuracy = 0.0;
  std::optional<double> holdout_accuracy;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> hyperparameters;

  nlohmann::json to_json() const;
};

double accuracy(const Predictor& p, const Dataset& data);

std::pair<PredictorPtr, TrainReport> train_mlp(const Dataset& train, const MlpParams& params,
                                               const Dataset* holdout = nullptr);

std::pair<PredictorPtr, TrainReport> train_random_forest(const Dataset& train,
                                                         const ForestParams& params,
                                                         const Dataset* holdout = nullptr);

// Client for POST {endpoint}/predict, {"rows": [[...]]} -> {"proba": [[...]]}.
// Performs an empty-batch handshake on construction.
PredictorPtr connect_remote_predictor(const std::string& endpoint,
                                      std::chrono::milliseconds timeout,
                                      std::size_t features, std::size_t classes,
                                      std::size_t max_batch_rows = 4096);

inline constexpr std::string_view kModelMagic = "PXAI-MODEL/1";

void save_predictor(const Predictor& p, const std::filesystem::path& path);
PredictorPtr load_predictor(const std::filesystem::path& path);

}  // namespace pxai
