#include <cstdlib>
#include <fstream>

#include "fmt/format.h"
#include "pxai/seeding.hpp"
#include "pxai/service.hpp"
#include "spdlog/spdlog.h"

namespace pxai {

namespace fs = std::filesystem;

namespace {

// Runs one pipeline stage; library failures become 502 responses tagged with
// the component that failed. Validation problems keep their own status.
template <class Fn>
auto stage(const char* component, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ServiceError&) {
    throw;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kValidation) throw;
    throw ServiceError(e.kind(), fmt::format("{}: {}", component, e.what()), 502,
                       {{"component", component}});
  } catch (const std::exception& e) {
    throw ServiceError(ErrorKind::kContractViolation, fmt::format("{}: {}", component, e.what()), 502,
                       {{"component", component}});
  }
}

template <class T>
T hyper(const nlohmann::json& h, const char* key, T fallback) {
  try {
    return h.value(key, fallback);
  } catch (const nlohmann::json::exception&) {
    throw ServiceError(ErrorKind::kConfig, fmt::format("model.hyperparameters.{}: wrong type", key), 400);
  }
}

std::string digest_bytes(const void* data, std::size_t bytes) {
  return hex_digest(std::string_view(static_cast<const char*>(data), bytes));
}

}  // namespace

LoadedData load_data(const RunConfig& cfg, const DatasetConfig& d) {
  std::ifstream in(d.schema);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, fmt::format("{}: {}", d.schema.string(), e.what()));
  }
  LoadedData out;
  out.full = std::make_shared<const Dataset>(load_csv_dataset(d.csv, FeatureSchema::from_json(j)));
  auto [train, test] = split(*out.full, d.test_fraction, cfg.seeds.split);
  out.train = std::make_shared<const Dataset>(std::move(train));
  out.test = std::make_shared<const Dataset>(std::move(test));
  return out;
}

std::pair<PredictorPtr, std::optional<TrainReport>> build_predictor(const RunConfig& cfg,
                                                                    const DatasetConfig& d,
                                                                    const Dataset& train,
                                                                    const Dataset& test) {
  const auto& m = cfg.model;
  const auto& h = m.hyperparameters;
  if (m.builtin && *m.builtin == "mlp") {
    MlpParams p;
    p.hidden_units = hyper(h, "hidden_units", p.hidden_units);
    p.epochs = hyper(h, "epochs", p.epochs);
    p.learning_rate = hyper(h, "learning_rate", p.learning_rate);
    p.weight_decay = hyper(h, "weight_decay", p.weight_decay);
    p.seed = cfg.seeds.model;
    auto [model, report] = train_mlp(train, p, &test);
    return {model, report};
  }
  if (m.builtin && *m.builtin == "random_forest") {
    ForestParams p;
    p.trees = hyper(h, "trees", p.trees);
    p.max_depth = hyper(h, "max_depth", p.max_depth);
    p.seed = cfg.seeds.model;
    auto [model, report] = train_random_forest(train, p, &test);
    return {model, report};
  }
  if (m.remote)
    return {connect_remote_predictor(*m.remote, m.remote_timeout, train.feature_count(),
                                     train.schema().class_count()),
            std::nullopt};
  if (m.path) {
    auto model = load_predictor(cfg.expand(*m.path, d));
    if (model->feature_count() != train.feature_count() || model->class_count() != train.schema().class_count())
      fail(ErrorKind::kCompatibility,
           fmt::format("saved model expects {} features and {} classes; dataset '{}' has {} and {}",
                       model->feature_count(), model->class_count(), d.id, train.feature_count(),
                       train.schema().class_count()));
    return {model, std::nullopt};
  }
  fail(ErrorKind::kConfig, "no model source configured");
}

std::shared_ptr<Engine> Engine::start(const RunConfig& cfg, Options opt) {
  cfg.validate();
  std::shared_ptr<Engine> e(new Engine());
  e->cfg_ = cfg;
  e->dataset_ = cfg.dataset(opt.dataset);
  const auto& d = e->dataset_;

  auto data = load_data(cfg, d);
  e->full_ = data.full;
  e->train_ = data.train;
  e->test_ = data.test;
  e->predictor_ = build_predictor(cfg, d, *e->train_, *e->test_).first;
  e->context_ = std::make_shared<const ExplainContext>(ExplainContext::build(e->train_, cfg.explainer));

  if (d.glossary.empty()) e->glossary_ = Glossary::builtin(d.id);
  else if (d.glossary == "heart" || d.glossary == "thyroid") e->glossary_ = Glossary::builtin(d.glossary);
  else e->glossary_ = Glossary::load(d.glossary);

  const auto store_path = cfg.rag.store_path.empty() ? std::string() : cfg.expand(cfg.rag.store_path, d);
  EmbedderPtr configured;
  if (cfg.rag.embedder == "remote")
    configured = std::make_shared<RemoteEmbedder>(cfg.rag.embedder_endpoint, cfg.rag.embedder_model,
                                                  cfg.rag.dimension);
  if (!store_path.empty() && fs::exists(store_path)) {
    e->store_ = std::shared_ptr<VectorStore>(VectorStore::restore(store_path, configured).release());
  } else {
    std::vector<SourceDocument> docs;
    if (!d.knowledge_base.empty()) docs = load_knowledge_base(d.knowledge_base);
    if (!configured) {
      std::vector<std::string> corpus;
      for (const auto& doc : docs) corpus.push_back(doc.body);
      configured = corpus.empty() ? std::make_shared<BuiltinEmbedder>(cfg.rag.dimension)
                                  : BuiltinEmbedder::fit(cfg.rag.dimension, corpus);
    }
    e->store_ = std::make_shared<VectorStore>(configured);
    for (const auto& doc : docs) e->store_->ingest(doc, cfg.rag.chunking);
    if (!store_path.empty() && !docs.empty()) e->store_->persist(store_path);
  }

  if (opt.client) {
    e->client_ = opt.client;
    e->live_ = true;
  } else if (cfg.llm) {
    auto http = std::make_shared<HttpLlmClient>(*cfg.llm);
    if (http->has_credential()) {
      e->client_ = http;
      e->live_ = true;
    } else {
      e->warnings_.push_back(fmt::format(
          "credential variable '{}' is not set; narratives come from the offline stub and live requests are refused",
          cfg.llm->api_key_env));
      e->client_ = std::make_shared<StubLlmClient>();
    }
  } else {
    e->client_ = std::make_shared<StubLlmClient>();
  }
  for (const auto& w : e->warnings_) spdlog::warn("{}", w);

  e->sessions_ = std::make_unique<SessionRegistry>(std::chrono::duration<double>(cfg.service.session_idle_seconds));
  if (!cfg.service.session_snapshot.empty() && fs::exists(cfg.service.session_snapshot))
    e->sessions_->restore(cfg.service.session_snapshot);
  return e;
}

nlohmann::json Engine::explain(const ExplainRequest& req) const {
  if (req.live && !live_)
    throw ServiceError(ErrorKind::kUnavailable, "live LLM client is not available; only the offline stub is configured",
                       503, {{"component", "llm"}});
  const auto x = parse_instance(full_->schema_ptr(), req.instance);
  const auto proba = stage("predictor", [&] { return predictor_->predict_proba(x.values()); });

  std::vector<Method> methods{Method::kLime, Method::kShap, Method::kAnchor};
  if (req.method) methods = {*req.method};
  const auto eval = stage("explainer", [&] {
    return evaluate_instance(*predictor_, x, *context_, cfg_.explainer, cfg_.metrics, cfg_.weights, methods);
  });
  std::optional<SelectionResult> selection;
  if (!req.method) selection = eval.selection;
  const Method chosen = selection ? selection->chosen : *req.method;
  const auto& expl = eval.explanations.at(chosen);

  const auto hits = stage("retrieval", [&] {
    if (store_->size() == 0) return std::vector<Hit>{};
    return store_->query(retrieval_query(expl, glossary_), cfg_.rag.k);
  });
  const auto prompt = build_prompt(Profile::builtin(req.profile, glossary_), x, proba, selection, expl, hits);
  std::shared_ptr<ChatSession> session = stage("llm", [&] { return start_session(*client_, prompt); });

  const auto expl_json = to_json(expl);
  const auto expl_digest = hex_digest(expl_json.dump());
  sessions_->add(session, expl_digest);

  nlohmann::json sel;
  if (selection) {
    sel = selection->to_json();
    sel["mode"] = "auto";
  } else {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& bundle : eval.bundles) b.push_back(bundle.to_json());
    sel = {{"mode", "user-forced"}, {"chosen", to_string(chosen)}, {"bundles", b}};
  }
  nlohmann::json probs = nlohmann::json::object();
  Eigen::Index best = 0;
  for (Eigen::Index c = 0; c < proba.size(); ++c) {
    probs[full_->schema().class_names()[static_cast<std::size_t>(c)]] = proba[c];
    if (proba[c] > proba[best]) best = c;
  }
  nlohmann::json retrieved = nlohmann::json::array();
  for (const auto& h : hits) retrieved.push_back(h.id);
  const auto history = session->history();
  return {{"dataset", dataset_.id},
          {"profile", to_string(req.profile)},
          {"instance", instance_to_json(x)},
          {"prediction",
           {{"class", best},
            {"label", full_->schema().class_names()[static_cast<std::size_t>(best)]},
            {"probabilities", probs}}},
          {"selection", sel},
          {"explanation", expl_json},
          {"explanation_digest", expl_digest},
          {"narrative", history.front().content},
          {"prompt_digest", prompt.digest()},
          {"usage", session->cumulative_usage().to_json()},
          {"retrieved", retrieved},
          {"model", client_->model_id()},
          {"session_id", session->id()}};
}

nlohmann::json Engine::chat(const std::string& session_id, const std::string& message) const {
  sessions_->evict_idle();
  const auto entry = sessions_->get(session_id);
  if (message.empty()) throw ServiceError(ErrorKind::kValidation, "message must not be empty", 422);
  const auto reply = stage("llm", [&] { return chat_turn(*client_, *entry.session, message); });
  return {{"session_id", session_id},
          {"reply", reply.text},
          {"usage", reply.usage.to_json()},
          {"cumulative_usage", entry.session->cumulative_usage().to_json()},
          {"turns", entry.session->turns()}};
}

nlohmann::json Engine::session(const std::string& session_id) const {
  sessions_->evict_idle();
  const auto entry = sessions_->get(session_id);
  auto j = entry.session->to_json();
  j["explanation_digest"] = entry.explanation_digest;
  return j;
}

nlohmann::json Engine::ingest(const std::vector<SourceDocument>& docs) const {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& d : docs) {
    if (d.id.empty()) throw ServiceError(ErrorKind::kValidation, "document id must not be empty", 422);
    if (d.body.empty()) throw ServiceError(ErrorKind::kValidation, fmt::format("document '{}' is empty", d.id), 422);
  }
  for (const auto& d : docs)
    counts[d.id] = stage("retrieval", [&] { return store_->ingest(d, cfg_.rag.chunking); });
  if (!cfg_.rag.store_path.empty()) store_->persist(cfg_.expand(cfg_.rag.store_path, dataset_));
  return {{"ingested", counts}, {"chunks", store_->size()}, {"documents", store_->documents().size()}};
}

std::size_t Engine::ingest_directory(const fs::path& dir) const {
  const auto docs = load_knowledge_base(dir);
  ingest(docs);
  return docs.size();
}

nlohmann::json Engine::health() const {
  nlohmann::json model{{"status", "ok"}, {"kind", to_string(predictor_->kind())}};
  if (predictor_->kind() == PredictorKind::kRemote) {
    try {
      predictor_->predict_proba(Matrix(full_->rows().topRows(1)));
    } catch (const std::exception& ex) {
      model = {{"status", "unavailable"}, {"kind", "remote"}, {"message", ex.what()}};
    }
  }
  const bool ok = model["status"] == "ok";
  return {{"status", ok ? "ok" : "degraded"},
          {"dataset", dataset_.id},
          {"components",
           {{"dataset", {{"status", "ok"}, {"rows", full_->size()}, {"features", full_->feature_count()}}},
            {"model", model},
            {"store", {{"status", "ok"}, {"chunks", store_->size()}, {"embedder", store_->embedder_id()}}},
            {"llm", {{"status", "ok"}, {"mode", live_ ? "live" : "stub"}, {"model", client_->model_id()}}},
            {"sessions", {{"status", "ok"}, {"active", sessions_->size()}}}}},
          {"warnings", warnings_}};
}

EvalTarget Engine::eval_target() const {
  EvalTarget t;
  t.dataset_id = dataset_.id;
  t.predictor = predictor_;
  t.context = context_;
  t.test = test_;
  t.full = full_;
  t.glossary = glossary_;
  t.store = store_;
  t.retrieval_k = cfg_.rag.k;
  return t;
}

std::string Engine::evaluate(std::string_view block, std::size_t n, ReportFormat format,
                             std::optional<std::uint64_t> seed, std::size_t concurrency,
                             bool capped) const {
  if (block != "metrics" && block != "tokens" && block != "satisfaction")
    throw ServiceError(ErrorKind::kNotFound,
                       fmt::format("unknown evaluation block '{}' (metrics, tokens, satisfaction)", block), 404);
  if (n == 0) throw ServiceError(ErrorKind::kValidation, "n must be >= 1", 422);
  if (capped && n > cfg_.service.evaluation_cap)
    throw ServiceError(ErrorKind::kValidation,
                       fmt::format("n must be between 1 and {}", cfg_.service.evaluation_cap), 422);
  EvalOptions opt;
  opt.explainer = cfg_.explainer;
  opt.metrics = cfg_.metrics;
  opt.weights = cfg_.weights;
  opt.seed = seed.value_or(cfg_.seeds.evaluation);
  opt.concurrency = std::max<std::size_t>(1, concurrency);
  const auto target = eval_target();
  if (block == "metrics") return render_report(run_metric_block(target, n, opt), format);
  if (block == "tokens") return render_report(run_token_block(target, n, opt, *client_), format);
  return render_report(run_satisfaction_block(target, n, opt, *client_, *client_), format);
}

std::string Engine::state_digest() const {
  std::string acc;
  for (const auto* d : {full_.get(), train_.get(), test_.get()}) {
    acc += digest_bytes(d->rows().data(), static_cast<std::size_t>(d->rows().size()) * sizeof(double));
    acc += digest_bytes(d->labels().data(), d->labels().size() * sizeof(int));
  }
  const Matrix p = predictor_->predict_proba(full_->rows());
  acc += digest_bytes(p.data(), static_cast<std::size_t>(p.size()) * sizeof(double));
  acc += cfg_.to_json().dump();
  return hex_digest(acc);
}

void SessionRegistry::add(std::shared_ptr<ChatSession> s, std::string explanation_digest) {
  std::lock_guard lock(mu_);
  const auto id = s->id();
  sessions_[id] = {std::move(s), std::move(explanation_digest), std::chrono::steady_clock::now()};
}

SessionEntry SessionRegistry::get(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end())
    throw ServiceError(ErrorKind::kNotFound, fmt::format("unknown session '{}'", id), 404);
  const auto now = std::chrono::steady_clock::now();
  if (now - it->second.touched > idle_) {
    sessions_.erase(it);
    throw ServiceError(ErrorKind::kNotFound, fmt::format("session '{}' expired", id), 404);
  }
  it->second.touched = now;
  return it->second;
}

std::size_t SessionRegistry::evict_idle() {
  std::lock_guard lock(mu_);
  const auto now = std::chrono::steady_clock::now();
  return std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second.touched > idle_; });
}

std::size_t SessionRegistry::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

void SessionRegistry::snapshot(const fs::path& path) const {
  nlohmann::json list = nlohmann::json::array();
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, e] : sessions_)
      list.push_back({{"session", e.session->to_json()}, {"explanation_digest", e.explanation_digest}});
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << nlohmann::json{{"version", 1}, {"sessions", list}}.dump();
    if (!out) fail(ErrorKind::kUnavailable, fmt::format("cannot write {}", tmp));
  }
  fs::rename(tmp, path);
}

std::size_t SessionRegistry::restore(const fs::path& path) {
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("{}: {}", path.string(), e.what()));
  }
  std::size_t n = 0;
  for (const auto& s : j.at("sessions")) {
    add(std::shared_ptr<ChatSession>(ChatSession::from_json(s.at("session")).release()),
        s.value("explanation_digest", ""));
    ++n;
  }
  return n;
}

}  // namespace pxai
