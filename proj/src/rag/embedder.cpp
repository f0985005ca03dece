#include <cctype>
#include <cmath>
#include <set>
#include <thread>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/http_util.hpp"
#include "pxai/rag.hpp"
#include "pxai/seeding.hpp"
// After Eigen, see remote.cpp.
#include "httplib.h"

namespace pxai {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::uint32_t BuiltinEmbedder::bucket(std::string_view token) {
  return static_cast<std::uint32_t>(fnv1a64(token) & ((1U << kHashBits) - 1U));
}

BuiltinEmbedder::BuiltinEmbedder(std::size_t dimension, std::map<std::uint32_t, double> idf,
                                 double default_idf)
    : dimension_(dimension), idf_(std::move(idf)), default_idf_(default_idf) {
  if (dimension_ < 1) fail(ErrorKind::kConfig, "embedding dimension must be >= 1");
  const auto digest = idf_.empty() ? std::string("none") : hex_digest(idf_json().dump());
  id_ = fmt::format("builtin-hash-v1:d{}:idf-{}", dimension_, digest);
}

std::shared_ptr<BuiltinEmbedder> BuiltinEmbedder::fit(std::size_t dimension,
                                                      const std::vector<std::string>& corpus) {
  std::map<std::uint32_t, double> df;
  for (const auto& doc : corpus) {
    std::set<std::uint32_t> seen;
    for (const auto& t : tokenize(doc)) seen.insert(bucket(t));
    for (auto b : seen) df[b] += 1.0;
  }
  const double n = static_cast<double>(corpus.size());
  for (auto& [b, v] : df) v = std::log((1.0 + n) / (1.0 + v)) + 1.0;
  return std::make_shared<BuiltinEmbedder>(dimension, std::move(df), std::log(1.0 + n) + 1.0);
}

std::vector<Vector> BuiltinEmbedder::embed(const std::vector<std::string>& texts) const {
  if (texts.empty()) fail(ErrorKind::kValidation, "nothing to embed");
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    if (text.empty()) fail(ErrorKind::kValidation, "cannot embed an empty string");
    std::map<std::uint32_t, double> tf;
    for (const auto& t : tokenize(text)) tf[bucket(t)] += 1.0;
    Vector v = Vector::Zero(static_cast<Eigen::Index>(dimension_));
    for (const auto& [b, count] : tf) {
      const auto it = idf_.find(b);
      const double w = count * (it == idf_.end() ? default_idf_ : it->second);
      const auto h = mix64(b);
      const auto d = static_cast<Eigen::Index>(h % dimension_);
      v[d] += (h >> 63) ? -w : w;
    }
    const double norm = v.norm();
    if (!(norm > 0.0)) fail(ErrorKind::kValidation, "text has no embeddable tokens");
    out.push_back(v / norm);
  }
  return out;
}

nlohmann::json BuiltinEmbedder::idf_json() const {
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& [b, v] : idf_) buckets.push_back({b, v});
  return {{"default", default_idf_}, {"buckets", buckets}};
}

std::shared_ptr<BuiltinEmbedder> BuiltinEmbedder::from_idf_json(std::size_t dimension,
                                                                const nlohmann::json& j) {
  std::map<std::uint32_t, double> idf;
  for (const auto& e : j.at("buckets")) idf[e.at(0).get<std::uint32_t>()] = e.at(1).get<double>();
  return std::make_shared<BuiltinEmbedder>(dimension, std::move(idf), j.at("default").get<double>());
}

RemoteEmbedder::RemoteEmbedder(std::string endpoint, std::string model_id, std::size_t dimension,
                               std::chrono::milliseconds timeout, int attempts)
    : endpoint_(std::move(endpoint)),
      model_id_(std::move(model_id)),
      dimension_(dimension),
      timeout_(timeout),
      attempts_(std::max(1, attempts)) {}

std::vector<Vector> RemoteEmbedder::embed(const std::vector<std::string>& texts) const {
  if (texts.empty()) fail(ErrorKind::kValidation, "nothing to embed");
  for (const auto& t : texts)
    if (t.empty()) fail(ErrorKind::kValidation, "cannot embed an empty string");
  const auto ep = HttpEndpoint::parse(endpoint_);
  const nlohmann::json body{{"texts", texts}, {"model", model_id_}};
  std::string last_error;
  int made = 0;
  for (int attempt = 1; attempt <= attempts_; ++attempt) {
    made = attempt;
    httplib::Client client(ep.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    client.set_read_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    auto res = client.Post(ep.path("/embed"), body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status != 200) {
      last_error = fmt::format("HTTP {}", res->status);
      if (res->status < 500 && res->status != 429) break;
    } else {
      nlohmann::json reply;
      try {
        reply = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception&) {
        fail(ErrorKind::kProtocol, "embedding service returned malformed JSON");
      }
      if (!reply.contains("vectors") || !reply["vectors"].is_array() || reply["vectors"].size() != texts.size())
        fail(ErrorKind::kProtocol, "embedding service returned the wrong number of vectors");
      std::vector<Vector> out;
      for (const auto& jv : reply["vectors"]) {
        if (!jv.is_array() || jv.size() != dimension_)
          fail(ErrorKind::kProtocol, fmt::format("embedding has wrong dimension (expected {})", dimension_));
        Vector v(static_cast<Eigen::Index>(dimension_));
        for (std::size_t d = 0; d < dimension_; ++d) v[static_cast<Eigen::Index>(d)] = jv[d].get<double>();
        const double norm = v.norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) fail(ErrorKind::kProtocol, "embedding is zero or non-finite");
        out.push_back(v / norm);
      }
      return out;
    }
    if (attempt < attempts_) std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
  }
  fail(ErrorKind::kRetriable,
       fmt::format("embedding service failed after {} attempt(s): {}", made, last_error));
}

}  // namespace pxai
