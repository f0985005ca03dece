#include <thread>

#include "fmt/format.h"
#include "pxai/service.hpp"
#include "spdlog/spdlog.h"

#include "httplib.h"

namespace pxai {

namespace {

constexpr const char* kJson = "application/json";

nlohmann::json body_json(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ServiceError(ErrorKind::kFormat, fmt::format("request body is not valid JSON: {}", e.what()), 400);
  }
}

template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    res.status = http_status(e);
    if (res.status >= 500) spdlog::error("{}", e.what());
    res.set_content(error_body(e).dump(), kJson);
  }
}

void reply(httplib::Response& res, const nlohmann::json& j) { res.set_content(j.dump(), kJson); }

std::vector<SourceDocument> documents_from(const nlohmann::json& body) {
  if (!body.contains("documents") || !body["documents"].is_array())
    throw ServiceError(ErrorKind::kValidation, "expected {\"documents\": [...]}", 422);
  std::vector<SourceDocument> docs;
  for (const auto& d : body["documents"]) {
    SourceDocument doc;
    try {
      doc.id = d.at("id").get<std::string>();
      doc.title = d.value("title", doc.id);
      if (d.value("media", "text") == "image") {
        doc.media = Media::kImageReference;
        doc.body = d.at("caption").get<std::string>();
        doc.image_path = d.value("path", "");
      } else {
        doc.body = d.at("text").get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ServiceError(ErrorKind::kValidation, fmt::format("malformed document: {}", e.what()), 422);
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace

struct HttpService::Impl {
  std::shared_ptr<const Engine> engine;
  httplib::Server server;
  std::thread thread;
  bool stopped = false;
};

HttpService::HttpService(std::shared_ptr<const Engine> engine) : impl_(std::make_unique<Impl>()) {
  impl_->engine = std::move(engine);
  auto& svr = impl_->server;
  const Engine* eng = impl_->engine.get();

  svr.Get("/healthz", [eng](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, eng->health()); });
  });

  svr.Post("/v1/ingest", [eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, eng->ingest(documents_from(body_json(req)))); });
  });

  svr.Post("/v1/explain", [eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, eng->explain(ExplainRequest::from_json(body_json(req)))); });
  });

  svr.Post("/v1/chat", [eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = body_json(req);
      std::string id, message;
      try {
        id = body.at("session_id").get<std::string>();
        message = body.at("message").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw ServiceError(ErrorKind::kValidation, "expected {\"session_id\", \"message\"}", 422);
      }
      reply(res, eng->chat(id, message));
    });
  });

  svr.Get(R"(/v1/session/([^/]+))", [eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, eng->session(req.matches[1])); });
  });

  svr.Post(R"(/v1/evaluate/([^/]+))", [eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = body_json(req);
      std::size_t n = 0;
      std::optional<std::uint64_t> seed;
      std::size_t concurrency = 1;
      ReportFormat format = ReportFormat::kJson;
      try {
        n = body.value("n", std::size_t{100});
        if (body.contains("seed")) seed = body["seed"].get<std::uint64_t>();
        concurrency = body.value("concurrency", concurrency);
        format = parse_report_format(body.value("format", "json"));
      } catch (const nlohmann::json::exception& e) {
        throw ServiceError(ErrorKind::kValidation, fmt::format("malformed request: {}", e.what()), 422);
      }
      const auto text = eng->evaluate(std::string(req.matches[1]), n, format, seed, concurrency);
      res.set_content(text, format == ReportFormat::kJson ? kJson : "text/plain; charset=utf-8");
    });
  });

  svr.Get("/v1/config", [eng](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      reply(res, {{"dataset", eng->dataset_config().id},
                  {"schema", eng->full().schema().to_json()},
                  {"profiles", {"ml_engineer", "domain_expert", "non_technical"}},
                  {"methods", {"auto", "lime", "shap", "anchor"}},
                  {"config", eng->config().redacted()}});
    });
  });

  svr.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    res.set_content(nlohmann::json{{"error", res.status == 404 ? "not_found" : "http"},
                                   {"message", fmt::format("{} {}", req.method, req.path)}}
                        .dump(),
                    kJson);
  });
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) port = svr.bind_to_any_port(host);
  else if (!svr.bind_to_port(host, port)) port = -1;
  if (port < 0) fail(ErrorKind::kUnavailable, fmt::format("cannot bind {}", host));
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return port;
}

void HttpService::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) fail(ErrorKind::kUnavailable, fmt::format("cannot listen on {}:{}", host, port));
}

void HttpService::stop() {
  if (!impl_ || impl_->stopped) return;
  impl_->stopped = true;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  const auto& snap = impl_->engine->config().service.session_snapshot;
  if (!snap.empty()) {
    try {
      impl_->engine->sessions().snapshot(snap);
    } catch (const std::exception& e) {
      spdlog::error("session snapshot failed: {}", e.what());
    }
  }
}

}  // namespace pxai
