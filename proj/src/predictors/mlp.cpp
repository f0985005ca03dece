#include <cmath>
#include <random>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/predictors.hpp"
#include "pxai/seeding.hpp"

namespace pxai {
namespace {

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out(i, c) = std::exp(logits(i, c) - top);
      sum += out(i, c);
    }
    out.row(i) /= sum;
  }
  return out;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(r.size()) != cols)
      fail(ErrorKind::kFormat, "ragged matrix in model file");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    out.push_back(std::move(row));
  }
  return out;
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json vector_to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

InputEncoder InputEncoder::fit(const Dataset& train) {
  InputEncoder enc;
  const auto& schema = train.schema();
  enc.mean = Vector::Zero(static_cast<Eigen::Index>(schema.feature_count()));
  enc.scale = train.scale();
  for (std::size_t j = 0; j < schema.feature_count(); ++j) {
    const auto& f = schema.feature(j);
    enc.categorical.push_back(f.categorical());
    enc.category_count.push_back(static_cast<int>(f.categories.size()));
    enc.mean[static_cast<Eigen::Index>(j)] = train.stats()[j].mean;
  }
  return enc;
}

Eigen::Index InputEncoder::width() const {
  Eigen::Index w = 0;
  for (std::size_t j = 0; j < categorical.size(); ++j) w += categorical[j] ? category_count[j] : 1;
  return w;
}

Matrix InputEncoder::encode(const Matrix& rows) const {
  Matrix out = Matrix::Zero(rows.rows(), width());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Eigen::Index col = 0;
    for (std::size_t j = 0; j < categorical.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (categorical[j]) {
        // Out-of-range codes (possible under raw perturbation) clamp to a valid category.
        const int code = std::clamp(static_cast<int>(std::lround(rows(i, jj))), 0,
                                    category_count[j] - 1);
        out(i, col + code) = 1.0;
        col += category_count[j];
      } else {
        out(i, col) = (rows(i, jj) - mean[jj]) / scale[jj];
        ++col;
      }
    }
  }
  return out;
}

nlohmann::json InputEncoder::to_json() const {
  return {{"categorical", categorical},
          {"category_count", category_count},
          {"mean", vector_to_json(mean)},
          {"scale", vector_to_json(scale)}};
}

InputEncoder InputEncoder::from_json(const nlohmann::json& j) {
  InputEncoder enc;
  enc.categorical = j.at("categorical").get<std::vector<bool>>();
  enc.category_count = j.at("category_count").get<std::vector<int>>();
  enc.mean = vector_from_json(j.at("mean"));
  enc.scale = vector_from_json(j.at("scale"));
  if (enc.category_count.size() != enc.categorical.size() ||
      static_cast<std::size_t>(enc.mean.size()) != enc.categorical.size() ||
      static_cast<std::size_t>(enc.scale.size()) != enc.categorical.size())
    fail(ErrorKind::kFormat, "inconsistent input encoder in model file");
  return enc;
}

MlpPredictor::MlpPredictor(InputEncoder encoder, Matrix w1, Vector b1, Matrix w2, Vector b2)
    : encoder_(std::move(encoder)),
      w1_(std::move(w1)),
      b1_(std::move(b1)),
      w2_(std::move(w2)),
      b2_(std::move(b2)) {
  if (w1_.rows() != encoder_.width() || w1_.cols() != b1_.size() || w2_.rows() != b1_.size() ||
      w2_.cols() != b2_.size())
    fail(ErrorKind::kFormat, "MLP parameter shapes are inconsistent");
}

Matrix MlpPredictor::predict_proba(const Matrix& rows) const {
  const Matrix x = encoder_.encode(rows);
  Matrix h = (x * w1_).rowwise() + b1_.transpose();
  h = h.array().tanh().matrix();
  const Matrix logits = (h * w2_).rowwise() + b2_.transpose();
  return softmax_rows(logits);
}

nlohmann::json MlpPredictor::to_json() const {
  return {{"encoder", encoder_.to_json()},
          {"w1", matrix_to_json(w1_)},
          {"b1", vector_to_json(b1_)},
          {"w2", matrix_to_json(w2_)},
          {"b2", vector_to_json(b2_)}};
}

std::shared_ptr<const MlpPredictor> MlpPredictor::from_json(const nlohmann::json& j) {
  return std::make_shared<const MlpPredictor>(
      InputEncoder::from_json(j.at("encoder")), matrix_from_json(j.at("w1")),
      vector_from_json(j.at("b1")), matrix_from_json(j.at("w2")), vector_from_json(j.at("b2")));
}

std::pair<PredictorPtr, TrainReport> train_mlp(const Dataset& train, const MlpParams& params,
                                               const Dataset* holdout) {
  if (train.size() == 0) fail(ErrorKind::kEmptyDataset, "cannot train on an empty dataset");
  if (params.hidden_units < 1) fail(ErrorKind::kConfig, "hidden_units must be >= 1");
  if (params.epochs < 1) fail(ErrorKind::kConfig, "epochs must be >= 1");
  if (!(params.learning_rate > 0.0)) fail(ErrorKind::kConfig, "learning_rate must be positive");

  auto encoder = InputEncoder::fit(train);
  const Matrix x = encoder.encode(train.rows());
  const auto n = x.rows();
  const auto d = x.cols();
  const auto hidden = static_cast<Eigen::Index>(params.hidden_units);
  const auto k = static_cast<Eigen::Index>(train.schema().class_count());

  Matrix y = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) y(i, train.labels()[static_cast<std::size_t>(i)]) = 1.0;

  Rng rng(derive_seed(params.seed, "mlp.init"));
  auto glorot = [&rng](Eigen::Index fan_in, Eigen::Index fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    Matrix w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < fan_in; ++i)
      for (Eigen::Index j = 0; j < fan_out; ++j) w(i, j) = u(rng);
    return w;
  };
  Matrix w1 = glorot(d, hidden);
  Vector b1 = Vector::Zero(hidden);
  Matrix w2 = glorot(hidden, k);
  Vector b2 = Vector::Zero(k);

  const double lr = params.learning_rate;
  const double decay = params.weight_decay;
  for (int epoch = 1; epoch <= params.epochs; ++epoch) {
    Matrix h = ((x * w1).rowwise() + b1.transpose()).array().tanh().matrix();
    const Matrix p = softmax_rows((h * w2).rowwise() + b2.transpose());

    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) loss -= std::log(p(i, train.labels()[static_cast<std::size_t>(i)]));
    loss = loss / static_cast<double>(n) + 0.5 * decay * (w1.squaredNorm() + w2.squaredNorm());
    if (!std::isfinite(loss))
      fail(ErrorKind::kDivergence, fmt::format("MLP training diverged at epoch {}", epoch));

    const Matrix dlogits = (p - y) / static_cast<double>(n);
    const Matrix dw2 = h.transpose() * dlogits + decay * w2;
    const Vector db2 = dlogits.colwise().sum().transpose();
    const Matrix dpre = ((dlogits * w2.transpose()).array() * (1.0 - h.array().square())).matrix();
    const Matrix dw1 = x.transpose() * dpre + decay * w1;
    const Vector db1 = dpre.colwise().sum().transpose();

    w1 -= lr * dw1;
    b1 -= lr * db1;
    w2 -= lr * dw2;
    b2 -= lr * db2;
  }

  auto model = std::make_shared<const MlpPredictor>(std::move(encoder), std::move(w1),
                                                    std::move(b1), std::move(w2), std::move(b2));
  TrainReport report;
  report.seed = params.seed;
  report.train_accuracy = accuracy(*model, train);
  if (holdout) report.holdout_accuracy = accuracy(*model, *holdout);
  report.hyperparameters = {{"model", "mlp"},
                            {"hidden_units", std::to_string(params.hidden_units)},
                            {"epochs", std::to_string(params.epochs)},
                            {"learning_rate", fmt::format("{}", params.learning_rate)},
                            {"weight_decay", fmt::format("{}", params.weight_decay)},
                            {"activation", "tanh"}};
  return {model, report};
}

}  // namespace pxai
