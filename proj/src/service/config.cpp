#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "fmt/format.h"
#include "pxai/service.hpp"

namespace pxai {

namespace fs = std::filesystem;

int http_status(const std::exception& e) {
  if (const auto* s = dynamic_cast<const ServiceError*>(&e)) return s->status();
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return 500;
  switch (err->kind()) {
    case ErrorKind::kValidation:
    case ErrorKind::kSchemaMismatch:
    case ErrorKind::kParse: return 422;
    case ErrorKind::kNotFound: return 404;
    case ErrorKind::kConfig:
    case ErrorKind::kFormat: return 400;
    case ErrorKind::kUnavailable: return 503;
    default: return 500;
  }
}

nlohmann::json error_body(const std::exception& e) {
  nlohmann::json j{{"message", e.what()}};
  if (const auto* err = dynamic_cast<const Error*>(&e)) j["error"] = to_string(err->kind());
  else j["error"] = "internal";
  if (const auto* s = dynamic_cast<const ServiceError*>(&e))
    for (const auto& [k, v] : s->details().items()) j[k] = v;
  return j;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <class T>
void take(const nlohmann::json& obj, const char* key, T& out, const std::string& where,
          std::vector<std::string>& problems) {
  if (!obj.contains(key) || obj.at(key).is_null()) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    problems.push_back(fmt::format("{}.{}: wrong type", where, key));
  }
}

void raise(const std::vector<std::string>& problems) {
  if (problems.empty()) return;
  std::string msg = "invalid run configuration:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ServiceError(ErrorKind::kConfig, msg, 400, {{"fields", problems}});
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig c;
  std::vector<std::string> problems;
  if (!j.is_object()) raise({"configuration must be an object"});

  if (j.contains("datasets") && j["datasets"].is_array()) {
    for (std::size_t i = 0; i < j["datasets"].size(); ++i) {
      const auto& d = j["datasets"][i];
      const auto where = fmt::format("datasets[{}]", i);
      DatasetConfig dc;
      std::string csv, schema, kb;
      take(d, "id", dc.id, where, problems);
      take(d, "csv", csv, where, problems);
      take(d, "schema", schema, where, problems);
      take(d, "test_fraction", dc.test_fraction, where, problems);
      take(d, "glossary", dc.glossary, where, problems);
      take(d, "knowledge_base", kb, where, problems);
      dc.csv = resolve(base_dir, csv);
      dc.schema = resolve(base_dir, schema);
      dc.knowledge_base = resolve(base_dir, kb);
      if (!dc.glossary.empty() && dc.glossary.ends_with(".json"))
        dc.glossary = resolve(base_dir, dc.glossary).string();
      c.datasets.push_back(std::move(dc));
    }
  } else {
    problems.push_back("datasets: required array");
  }

  if (j.contains("model")) {
    const auto& m = j["model"];
    std::string s;
    if (m.contains("builtin") && !m["builtin"].is_null()) {
      take(m, "builtin", s, "model", problems);
      c.model.builtin = s;
    }
    if (m.contains("hyperparameters")) c.model.hyperparameters = m["hyperparameters"];
    if (m.contains("remote") && !m["remote"].is_null()) {
      take(m, "remote", s, "model", problems);
      c.model.remote = s;
    }
    std::int64_t timeout = c.model.remote_timeout.count();
    take(m, "remote_timeout_ms", timeout, "model", problems);
    c.model.remote_timeout = std::chrono::milliseconds(timeout);
    if (m.contains("path") && !m["path"].is_null()) {
      take(m, "path", s, "model", problems);
      c.model.path = resolve(base_dir, s).string();
    }
  } else {
    problems.push_back("model: required");
  }

  try {
    if (j.contains("explainer")) c.explainer = ExplainerConfig::from_json(j["explainer"]);
  } catch (const Error& e) {
    problems.push_back(fmt::format("explainer: {}", e.what()));
  }
  try {
    if (j.contains("metrics")) c.metrics = MetricConfig::from_json(j["metrics"]);
  } catch (const Error& e) {
    problems.push_back(fmt::format("metrics: {}", e.what()));
  }
  if (j.contains("selection")) {
    take(j["selection"], "fidelity", c.weights.fidelity, "selection", problems);
    take(j["selection"], "robustness", c.weights.robustness, "selection", problems);
    take(j["selection"], "parsimony", c.weights.parsimony, "selection", problems);
  }
  if (j.contains("rag")) {
    const auto& r = j["rag"];
    if (r.contains("chunking")) {
      take(r["chunking"], "max_chunk_chars", c.rag.chunking.max_chunk_chars, "rag.chunking", problems);
      take(r["chunking"], "overlap_chars", c.rag.chunking.overlap_chars, "rag.chunking", problems);
    }
    take(r, "embedder", c.rag.embedder, "rag", problems);
    take(r, "dimension", c.rag.dimension, "rag", problems);
    take(r, "embedder_endpoint", c.rag.embedder_endpoint, "rag", problems);
    take(r, "embedder_model", c.rag.embedder_model, "rag", problems);
    take(r, "store_path", c.rag.store_path, "rag", problems);
    if (!c.rag.store_path.empty()) c.rag.store_path = resolve(base_dir, c.rag.store_path).string();
    take(r, "k", c.rag.k, "rag", problems);
  }
  if (j.contains("llm") && !j["llm"].is_null()) {
    try {
      c.llm = LlmSettings::from_json(j["llm"]);
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    take(s, "split", c.seeds.split, "seeds", problems);
    take(s, "model", c.seeds.model, "seeds", problems);
    take(s, "explainer", c.seeds.explainer, "seeds", problems);
    take(s, "metrics", c.seeds.metrics, "seeds", problems);
    take(s, "evaluation", c.seeds.evaluation, "seeds", problems);
  }
  c.explainer.seed = c.seeds.explainer;
  c.metrics.seed = c.seeds.metrics;
  c.metrics.infidelity.seed = c.seeds.metrics;
  c.metrics.lipschitz.seed = c.seeds.metrics;
  if (j.contains("service")) {
    const auto& s = j["service"];
    take(s, "session_idle_seconds", c.service.session_idle_seconds, "service", problems);
    take(s, "evaluation_cap", c.service.evaluation_cap, "service", problems);
    std::string out, snap;
    take(s, "output_dir", out, "service", problems);
    take(s, "session_snapshot", snap, "service", problems);
    if (!out.empty()) c.service.output_dir = resolve(base_dir, out);
    c.service.session_snapshot = resolve(base_dir, snap);
  }
  raise(problems);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ServiceError(ErrorKind::kConfig, fmt::format("cannot read config {}", path.string()), 400);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ServiceError(ErrorKind::kConfig, fmt::format("{}: {}", path.string(), e.what()), 400);
  }
  return from_json(j, fs::absolute(path).parent_path());
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  if (datasets.empty()) problems.push_back("datasets: at least one dataset is required");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const auto& d = datasets[i];
    const auto where = fmt::format("datasets[{}]", i);
    if (d.id.empty()) problems.push_back(where + ".id: required");
    else if (!ids.insert(d.id).second) problems.push_back(fmt::format("{}.id: duplicate '{}'", where, d.id));
    if (d.csv.empty() || !fs::exists(d.csv))
      problems.push_back(fmt::format("{}.csv: file not found '{}'", where, d.csv.string()));
    if (d.schema.empty() || !fs::exists(d.schema))
      problems.push_back(fmt::format("{}.schema: file not found '{}'", where, d.schema.string()));
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
      problems.push_back(where + ".test_fraction: must be in (0, 1)");
    if (!d.glossary.empty() && d.glossary != "heart" && d.glossary != "thyroid" && !fs::exists(d.glossary))
      problems.push_back(fmt::format("{}.glossary: not a builtin name or file '{}'", where, d.glossary));
    if (!d.knowledge_base.empty() && !fs::is_directory(d.knowledge_base))
      problems.push_back(fmt::format("{}.knowledge_base: directory not found '{}'", where,
                                     d.knowledge_base.string()));
    if (model.path && !fs::exists(expand(*model.path, d)))
      problems.push_back(fmt::format("model.path: file not found '{}'", expand(*model.path, d)));
  }
  const int sources = model.builtin.has_value() + model.remote.has_value() + model.path.has_value();
  if (sources != 1)
    problems.push_back(fmt::format("model: exactly one of builtin, remote, path must be set (found {})", sources));
  if (model.builtin && *model.builtin != "mlp" && *model.builtin != "random_forest")
    problems.push_back(fmt::format("model.builtin: unknown kind '{}' (mlp or random_forest)", *model.builtin));
  if (!model.hyperparameters.is_object()) problems.push_back("model.hyperparameters: must be an object");
  try {
    explainer.validate();
  } catch (const Error& e) {
    problems.push_back(fmt::format("explainer: {}", e.what()));
  }
  try {
    metrics.validate();
  } catch (const Error& e) {
    problems.push_back(fmt::format("metrics: {}", e.what()));
  }
  for (double w : {weights.fidelity, weights.robustness, weights.parsimony})
    if (!(w >= 0.0) || !std::isfinite(w)) problems.push_back("selection: weights must be nonnegative");
  if (rag.embedder != "builtin" && rag.embedder != "remote")
    problems.push_back(fmt::format("rag.embedder: unknown kind '{}'", rag.embedder));
  if (rag.embedder == "remote" && rag.embedder_endpoint.empty())
    problems.push_back("rag.embedder_endpoint: required for the remote embedder");
  if (rag.dimension == 0) problems.push_back("rag.dimension: must be >= 1");
  if (rag.k == 0) problems.push_back("rag.k: must be >= 1");
  if (rag.chunking.max_chunk_chars == 0 || rag.chunking.overlap_chars >= rag.chunking.max_chunk_chars)
    problems.push_back("rag.chunking: need 0 <= overlap_chars < max_chunk_chars");
  if (llm && llm->base_url.empty()) problems.push_back("llm.base_url: required when llm is set");
  if (!(service.session_idle_seconds > 0.0)) problems.push_back("service.session_idle_seconds: must be > 0");
  if (service.evaluation_cap == 0) problems.push_back("service.evaluation_cap: must be >= 1");
  raise(problems);
}

const DatasetConfig& RunConfig::dataset(std::string_view id) const {
  if (datasets.empty()) fail(ErrorKind::kConfig, "no datasets configured");
  if (id.empty()) return datasets.front();
  for (const auto& d : datasets)
    if (d.id == id) return d;
  std::string known;
  for (const auto& d : datasets) known += (known.empty() ? "" : ", ") + d.id;
  fail(ErrorKind::kConfig, fmt::format("unknown dataset '{}' (configured: {})", id, known));
}

std::string RunConfig::expand(const std::string& pattern, const DatasetConfig& d) const {
  std::string out = pattern;
  const std::string key = "{dataset}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + d.id.size()))
    out.replace(pos, key.size(), d.id);
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : datasets)
    ds.push_back({{"id", d.id},
                  {"csv", d.csv.string()},
                  {"schema", d.schema.string()},
                  {"test_fraction", d.test_fraction},
                  {"glossary", d.glossary},
                  {"knowledge_base", d.knowledge_base.string()}});
  nlohmann::json m{{"hyperparameters", model.hyperparameters}};
  m["builtin"] = model.builtin ? nlohmann::json(*model.builtin) : nlohmann::json(nullptr);
  m["remote"] = model.remote ? nlohmann::json(*model.remote) : nlohmann::json(nullptr);
  m["remote_timeout_ms"] = model.remote_timeout.count();
  m["path"] = model.path ? nlohmann::json(*model.path) : nlohmann::json(nullptr);
  return {{"datasets", ds},
          {"model", m},
          {"explainer", explainer.to_json()},
          {"metrics", metrics.to_json()},
          {"selection", weights.to_json()},
          {"rag",
           {{"chunking", {{"max_chunk_chars", rag.chunking.max_chunk_chars},
                          {"overlap_chars", rag.chunking.overlap_chars}}},
            {"embedder", rag.embedder},
            {"dimension", rag.dimension},
            {"embedder_endpoint", rag.embedder_endpoint},
            {"embedder_model", rag.embedder_model},
            {"store_path", rag.store_path},
            {"k", rag.k}}},
          {"llm", llm ? llm->to_json() : nlohmann::json(nullptr)},
          {"seeds",
           {{"split", seeds.split},
            {"model", seeds.model},
            {"explainer", seeds.explainer},
            {"metrics", seeds.metrics},
            {"evaluation", seeds.evaluation}}},
          {"service",
           {{"session_idle_seconds", service.session_idle_seconds},
            {"evaluation_cap", service.evaluation_cap},
            {"output_dir", service.output_dir.string()},
            {"session_snapshot", service.session_snapshot.string()}}}};
}

nlohmann::json RunConfig::redacted() const {
  auto j = to_json();
  if (llm) {
    const char* env = llm->api_key_env.empty() ? nullptr : std::getenv(llm->api_key_env.c_str());
    j["llm"]["api_key_env"] = "<redacted>";
    j["llm"]["credential"] = env && *env ? "present" : "absent";
  }
  return j;
}

nlohmann::json InstanceProblems::to_json() const {
  nlohmann::json inv = nlohmann::json::object();
  for (const auto& [k, v] : invalid) inv[k] = v;
  return {{"missing", missing}, {"unknown", unknown}, {"invalid", inv}};
}

std::optional<Instance> parse_instance(const SchemaPtr& schema, const nlohmann::json& values,
                                       InstanceProblems& problems) {
  if (!values.is_object()) {
    problems.invalid["<instance>"] = "expected an object of feature values";
    return std::nullopt;
  }
  Vector x(static_cast<Eigen::Index>(schema->feature_count()));
  for (std::size_t i = 0; i < schema->feature_count(); ++i) {
    const auto& spec = schema->feature(i);
    const auto it = values.find(spec.name);
    if (it == values.end() || it->is_null()) {
      problems.missing.push_back(spec.name);
      continue;
    }
    const auto idx = static_cast<Eigen::Index>(i);
    if (spec.kind == FeatureKind::kContinuous) {
      if (it->is_number()) {
        x[idx] = it->get<double>();
      } else if (it->is_string()) {
        try {
          std::size_t used = 0;
          const auto s = it->get<std::string>();
          x[idx] = std::stod(s, &used);
          if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
          problems.invalid[spec.name] = "not a number";
          continue;
        }
      } else {
        problems.invalid[spec.name] = "not a number";
        continue;
      }
      if (!std::isfinite(x[idx])) problems.invalid[spec.name] = "not finite";
    } else {
      std::string label;
      if (it->is_string()) label = it->get<std::string>();
      else if (it->is_number_integer()) label = std::to_string(it->get<std::int64_t>());
      else if (it->is_number()) label = fmt::format("{}", it->get<double>());
      const auto code = label.empty() ? std::nullopt : schema->encode_category(i, label);
      if (!code) {
        std::string allowed;
        for (const auto& c : spec.categories) allowed += (allowed.empty() ? "" : ", ") + c;
        problems.invalid[spec.name] = fmt::format("unknown category (allowed: {})", allowed);
        continue;
      }
      x[idx] = *code;
    }
  }
  for (const auto& [k, v] : values.items())
    if (!schema->index_of(k)) problems.unknown.push_back(k);
  if (!problems.empty()) return std::nullopt;
  return Instance(schema, std::move(x));
}

Instance parse_instance(const SchemaPtr& schema, const nlohmann::json& values) {
  InstanceProblems p;
  auto x = parse_instance(schema, values, p);
  if (x) return *x;
  std::vector<std::string> parts;
  if (!p.missing.empty()) {
    std::string s;
    for (const auto& m : p.missing) s += (s.empty() ? "" : ", ") + m;
    parts.push_back("missing: " + s);
  }
  for (const auto& [k, v] : p.invalid) parts.push_back(fmt::format("{}: {}", k, v));
  if (!p.unknown.empty()) {
    std::string s;
    for (const auto& u : p.unknown) s += (s.empty() ? "" : ", ") + u;
    parts.push_back("unknown: " + s);
  }
  std::string msg = "invalid instance";
  for (std::size_t i = 0; i < parts.size(); ++i) msg += (i ? "; " : ": ") + parts[i];
  throw ServiceError(ErrorKind::kValidation, msg, 422, {{"features", p.to_json()}});
}

nlohmann::json instance_to_json(const Instance& x) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& spec = x.schema().feature(i);
    if (spec.kind == FeatureKind::kCategorical) j[spec.name] = x.display_value(i);
    else j[spec.name] = x[i];
  }
  return j;
}

ExplainRequest ExplainRequest::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ServiceError(ErrorKind::kValidation, "request body must be an object", 422);
  ExplainRequest r;
  if (!j.contains("instance")) throw ServiceError(ErrorKind::kValidation, "missing 'instance'", 422);
  r.instance = j["instance"];
  try {
    r.profile = parse_profile(j.value("profile", "ml_engineer"));
    const auto method = j.value("method", "auto");
    if (method != "auto") r.method = parse_method(method);
    r.live = j.value("live", false);
  } catch (const nlohmann::json::exception& e) {
    throw ServiceError(ErrorKind::kValidation, fmt::format("malformed request: {}", e.what()), 422);
  }
  return r;
}

nlohmann::json comparable_response(nlohmann::json response) {
  response.erase("session_id");
  return response;
}

}  // namespace pxai
