#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pxai/errors.hpp"
#include "pxai/eval.hpp"
#include "pxai/explainers.hpp"
#include "pxai/metrics.hpp"
#include "pxai/narration.hpp"
#include "pxai/predictors.hpp"
#include "pxai/rag.hpp"
#include "pxai/tabular.hpp"

namespace pxai {

// Carries an HTTP status and a structured body next to the usual kind.
class ServiceError : public Error {
 public:
  ServiceError(ErrorKind kind, const std::string& message, int status,
               nlohmann::json details = nlohmann::json::object())
      : Error(kind, message), status_(status), details_(std::move(details)) {}

  int status() const noexcept { return status_; }
  const nlohmann::json& details() const noexcept { return details_; }

 private:
  int status_;
  nlohmann::json details_;
};

// HTTP status for a library error: 422 validation, 404 not found, 400 config,
// 503 unavailable, 500 otherwise.
int http_status(const std::exception& e);
nlohmann::json error_body(const std::exception& e);

struct DatasetConfig {
  std::string id;
  std::filesystem::path csv;
  std::filesystem::path schema;
  double test_fraction = 0.2;
  std::string glossary;  // builtin name or a JSON file
  std::filesystem::path knowledge_base;  // optional directory
};

// Exactly one of builtin, remote, path. "{dataset}" in path expands to the dataset id.
struct ModelConfig {
  std::optional<std::string> builtin;  // "mlp" | "random_forest"
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::optional<std::string> remote;
  std::chrono::milliseconds remote_timeout{10000};
  std::optional<std::string> path;
};

struct RagConfig {
  ChunkingConfig chunking;
  std::string embedder = "builtin";  // "builtin" | "remote"
  std::size_t dimension = 256;
  std::string embedder_endpoint;
  std::string embedder_model;
  std::string store_path;  // "{dataset}" expands; empty keeps the store in memory
  std::size_t k = 4;
};

struct SeedConfig {
  std::uint64_t split = 7;
  std::uint64_t model = 7;
  std::uint64_t explainer = 7;
  std::uint64_t metrics = 7;
  std::uint64_t evaluation = 7;
};

struct ServiceSettings {
  double session_idle_seconds = 3600.0;
  std::size_t evaluation_cap = 200;
  std::filesystem::path output_dir = "reports";
  std::filesystem::path session_snapshot;  // optional
};

struct RunConfig {
  std::vector<DatasetConfig> datasets;  // the first is the default
  ModelConfig model;
  ExplainerConfig explainer;
  MetricConfig metrics;
  SelectionWeights weights;
  RagConfig rag;
  std::optional<LlmSettings> llm;  // absent: offline stub
  SeedConfig seeds;
  ServiceSettings service;

  // Relative paths resolve against base_dir. Throws kConfig listing every
  // offending field.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;

  const DatasetConfig& dataset(std::string_view id = {}) const;
  std::string expand(const std::string& pattern, const DatasetConfig& d) const;

  nlohmann::json to_json() const;
  nlohmann::json redacted() const;
};

// Instance from {"feature": value}. Categorical values may be given as the
// category string or its numeric spelling.
struct InstanceProblems {
  std::vector<std::string> missing;
  std::vector<std::string> unknown;
  std::map<std::string, std::string> invalid;

  bool empty() const { return missing.empty() && unknown.empty() && invalid.empty(); }
  nlohmann::json to_json() const;
};

std::optional<Instance> parse_instance(const SchemaPtr& schema, const nlohmann::json& values,
                                       InstanceProblems& problems);
// Throws a 422 ServiceError naming every offending feature.
Instance parse_instance(const SchemaPtr& schema, const nlohmann::json& values);
nlohmann::json instance_to_json(const Instance& x);

struct ExplainRequest {
  nlohmann::json instance;
  ProfileKind profile = ProfileKind::kMlEngineer;
  std::optional<Method> method;  // nullopt = auto
  bool live = false;             // refuse the stub fallback

  static ExplainRequest from_json(const nlohmann::json& j);
};

struct SessionEntry {
  std::shared_ptr<ChatSession> session;
  std::string explanation_digest;
  std::chrono::steady_clock::time_point touched;
};

class SessionRegistry {
 public:
  explicit SessionRegistry(std::chrono::duration<double> idle = std::chrono::hours(1)) : idle_(idle) {}

  void add(std::shared_ptr<ChatSession> s, std::string explanation_digest);
  // kNotFound when unknown or idle past the limit.
  SessionEntry get(const std::string& id);
  std::size_t evict_idle();
  std::size_t size() const;

  void snapshot(const std::filesystem::path& path) const;
  std::size_t restore(const std::filesystem::path& path);

 private:
  std::chrono::duration<double> idle_;
  mutable std::mutex mu_;
  std::map<std::string, SessionEntry> sessions_;
};

// Read-only serving state for one dataset plus the session registry. Shared by
// the CLI and the HTTP service so both produce the same response bodies.
class Engine {
 public:
  struct Options {
    std::string dataset;  // empty = first configured
    LlmClientPtr client;  // overrides the configured client
  };

  static std::shared_ptr<Engine> start(const RunConfig& cfg, Options opt = {});

  const RunConfig& config() const { return cfg_; }
  const DatasetConfig& dataset_config() const { return dataset_; }
  const Dataset& full() const { return *full_; }
  const Dataset& train() const { return *train_; }
  const Dataset& test() const { return *test_; }
  const PredictorPtr& predictor() const { return predictor_; }
  const Glossary& glossary() const { return glossary_; }
  VectorStore& store() const { return *store_; }
  const LlmClient& client() const { return *client_; }
  bool live() const { return live_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  SessionRegistry& sessions() const { return *sessions_; }

  // ExplainResponse as JSON; opens a session.
  nlohmann::json explain(const ExplainRequest& req) const;
  nlohmann::json chat(const std::string& session_id, const std::string& message) const;
  nlohmann::json session(const std::string& session_id) const;
  nlohmann::json ingest(const std::vector<SourceDocument>& docs) const;
  std::size_t ingest_directory(const std::filesystem::path& dir) const;
  nlohmann::json health() const;

  EvalTarget eval_target() const;
  // block: "metrics" | "tokens" | "satisfaction". The service enforces the
  // configured cap; the command line passes capped = false.
  std::string evaluate(std::string_view block, std::size_t n, ReportFormat format,
                       std::optional<std::uint64_t> seed = std::nullopt, std::size_t concurrency = 1,
                       bool capped = true) const;

  // Digest over datasets, model outputs on the full dataset, and configuration.
  std::string state_digest() const;

 private:
  Engine() = default;

  RunConfig cfg_;
  DatasetConfig dataset_;
  std::shared_ptr<const Dataset> full_;
  std::shared_ptr<const Dataset> train_;
  std::shared_ptr<const Dataset> test_;
  PredictorPtr predictor_;
  std::shared_ptr<const ExplainContext> context_;
  Glossary glossary_;
  std::shared_ptr<VectorStore> store_;
  LlmClientPtr client_;
  bool live_ = false;
  std::vector<std::string> warnings_;
  std::unique_ptr<SessionRegistry> sessions_;
};

struct LoadedData {
  std::shared_ptr<const Dataset> full;
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> test;
};

// Loads the dataset and applies the seeded split.
LoadedData load_data(const RunConfig& cfg, const DatasetConfig& d);

// Trains or loads the configured model for a dataset.
std::pair<PredictorPtr, std::optional<TrainReport>> build_predictor(const RunConfig& cfg,
                                                                    const DatasetConfig& d,
                                                                    const Dataset& train,
                                                                    const Dataset& test);

// Response body without the fields that legitimately differ between calls.
nlohmann::json comparable_response(nlohmann::json response);

class HttpService {
 public:
  explicit HttpService(std::shared_ptr<const Engine> engine);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds and serves on a background thread. port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Blocks until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pxai
