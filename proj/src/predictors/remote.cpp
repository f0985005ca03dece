#include <algorithm>
#include <mutex>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/http_util.hpp"
#include "pxai/predictors.hpp"
// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen internals.
#include "httplib.h"

namespace pxai {

HttpEndpoint HttpEndpoint::parse(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos)
    fail(ErrorKind::kConfig, fmt::format("endpoint '{}' lacks a scheme", url));
  const auto slash = url.find('/', scheme + 3);
  HttpEndpoint ep;
  ep.origin = url.substr(0, slash);
  ep.prefix = slash == std::string::npos ? "" : url.substr(slash);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

namespace {

class RemotePredictor final : public Predictor {
 public:
  RemotePredictor(HttpEndpoint endpoint, std::chrono::milliseconds timeout, std::size_t features,
                  std::size_t classes, std::size_t max_batch)
      : endpoint_(std::move(endpoint)),
        timeout_(timeout),
        features_(features),
        classes_(classes),
        max_batch_(std::max<std::size_t>(1, max_batch)) {}

  Matrix predict_proba(const Matrix& rows) const override {
    Matrix out(rows.rows(), static_cast<Eigen::Index>(classes_));
    for (Eigen::Index start = 0; start < rows.rows();
         start += static_cast<Eigen::Index>(max_batch_)) {
      const auto count = std::min<Eigen::Index>(static_cast<Eigen::Index>(max_batch_), rows.rows() - start);
      out.middleRows(start, count) = request(rows.middleRows(start, count));
    }
    return out;
  }

  Matrix request(const Matrix& rows) const {
    nlohmann::json body;
    body["rows"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      body["rows"].push_back(std::vector<double>(rows.row(i).data(), rows.row(i).data() + rows.cols()));

    // A client per call keeps concurrent callers independent.
    httplib::Client client(endpoint_.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    client.set_read_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    client.set_write_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    auto res = client.Post(endpoint_.path("/predict"), body.dump(), "application/json");
    if (!res)
      fail(ErrorKind::kUnavailable, fmt::format("remote predictor {} unreachable: {}",
                                                endpoint_.origin, httplib::to_string(res.error())));
    if (res->status != 200)
      fail(ErrorKind::kProtocol, fmt::format("remote predictor returned HTTP {}", res->status));

    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kProtocol, "remote predictor returned malformed JSON");
    }
    if (!reply.is_object() || !reply.contains("proba") || !reply["proba"].is_array())
      fail(ErrorKind::kProtocol, "remote predictor response lacks a 'proba' array");
    const auto& proba = reply["proba"];
    if (static_cast<Eigen::Index>(proba.size()) != rows.rows())
      fail(ErrorKind::kProtocol, fmt::format("remote predictor returned {} rows for {}",
                                             proba.size(), rows.rows()));
    Matrix out(rows.rows(), static_cast<Eigen::Index>(classes_));
    for (std::size_t i = 0; i < proba.size(); ++i) {
      const auto& r = proba[i];
      if (!r.is_array() || r.size() != classes_)
        fail(ErrorKind::kProtocol, fmt::format("remote row {} has wrong arity", i));
      for (std::size_t c = 0; c < classes_; ++c) {
        if (!r[c].is_number()) fail(ErrorKind::kProtocol, "non-numeric probability");
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r[c].get<double>();
      }
    }
    check_simplex(out, static_cast<std::size_t>(rows.rows()), classes_);
    return out;
  }

  PredictorKind kind() const override { return PredictorKind::kRemote; }
  std::size_t class_count() const override { return classes_; }
  std::size_t feature_count() const override { return features_; }

 private:
  HttpEndpoint endpoint_;
  std::chrono::milliseconds timeout_;
  std::size_t features_;
  std::size_t classes_;
  std::size_t max_batch_;
};

}  // namespace

PredictorPtr connect_remote_predictor(const std::string& endpoint, std::chrono::milliseconds timeout,
                                      std::size_t features, std::size_t classes,
                                      std::size_t max_batch_rows) {
  auto p = std::make_shared<RemotePredictor>(HttpEndpoint::parse(endpoint), timeout, features,
                                             classes, max_batch_rows);
  p->request(Matrix(0, static_cast<Eigen::Index>(features)));
  return p;
}

}  // namespace pxai
