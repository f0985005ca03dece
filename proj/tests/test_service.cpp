#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "fmt/format.h"
#include "pxai/seeding.hpp"
#include "pxai/service.hpp"
#include "support.hpp"

#include "httplib.h"

using namespace pxai;
using namespace pxai::testing;
namespace fs = std::filesystem;

namespace {

nlohmann::json base_config_json() {
  std::ifstream in(source_path("configs/pxai.json"));
  return nlohmann::json::parse(in);
}

// Default configuration with lighter estimator settings.
RunConfig fast_config() {
  auto j = base_config_json();
  j["explainer"]["lime"]["samples"] = 1000;
  j["explainer"]["anchor"]["sample_budget"] = 4000;
  j["explainer"]["anchor"]["coverage_samples"] = 2000;
  j["metrics"]["infidelity"]["samples"] = 200;
  j["metrics"]["lipschitz"]["samples"] = 4;
  j["service"]["output_dir"] = (fs::temp_directory_path() / "pxai_test_reports").string();
  return RunConfig::from_json(j, source_path("configs"));
}

const std::shared_ptr<Engine>& shared_engine() {
  static const auto e = Engine::start(fast_config());
  return e;
}

nlohmann::json test_instance(const Engine& e, std::size_t row = 0) {
  return instance_to_json(e.test().instance(row));
}

ExplainRequest request(const nlohmann::json& instance, const std::string& profile = "ml_engineer",
                       const std::string& method = "auto") {
  return ExplainRequest::from_json({{"instance", instance}, {"profile", profile}, {"method", method}});
}

std::optional<int> status_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return http_status(e);
  }
  return std::nullopt;
}

class FailingClient final : public LlmClient {
 public:
  Completion complete(const std::vector<ChatMessage>&) const override {
    fail(ErrorKind::kUnavailable, "provider down");
  }
  std::string model_id() const override { return "failing"; }
};

struct Proc {
  int code = -1;
  std::string out;
};

Proc run_cli(const std::string& args) {
  const auto cmd = fmt::format("cd '{}' && '{}' {} 2>&1", PXAI_SOURCE_DIR, PXAI_CLI, args);
  Proc p;
  FILE* f = popen(cmd.c_str(), "r");
  REQUIRE(f);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), f)) p.out += buf.data();
  const int st = pclose(f);
  p.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return p;
}

fs::path write_temp_config(const RunConfig& cfg, const std::string& name) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream(path) << cfg.to_json().dump(2);
  return path;
}

}  // namespace

TEST_SUITE("run config") {
  TEST_CASE("the shipped configuration validates and seeds default") {
    const auto cfg = RunConfig::load(source_path("configs/pxai.json"));
    REQUIRE(cfg.datasets.size() == 2);
    CHECK(cfg.dataset().id == "heart");
    CHECK(cfg.dataset("thyroid").id == "thyroid");
    CHECK(fs::exists(cfg.dataset().csv));

    auto j = base_config_json();
    j.erase("seeds");
    const auto defaulted = RunConfig::from_json(j, source_path("configs"));
    CHECK(defaulted.seeds.split == 7);
    CHECK(defaulted.explainer.seed == 7);
    CHECK(defaulted.metrics.lipschitz.seed == 7);
    j["seeds"] = {{"explainer", 11}};
    const auto partial = RunConfig::from_json(j, source_path("configs"));
    CHECK(partial.explainer.seed == 11);
    CHECK(partial.seeds.model == 7);
    CHECK(error_kind([&] { cfg.dataset("nope"); }) == ErrorKind::kConfig);
  }

  TEST_CASE("round trip through JSON") {
    const auto cfg = fast_config();
    const auto again = RunConfig::from_json(cfg.to_json());
    CHECK(again.to_json() == cfg.to_json());
  }

  TEST_CASE("exactly one model source") {
    auto j = base_config_json();
    j["model"]["remote"] = "http://127.0.0.1:1";
    try {
      RunConfig::from_json(j, source_path("configs"));
      FAIL("expected a config error");
    } catch (const ServiceError& e) {
      CHECK(e.kind() == ErrorKind::kConfig);
      CHECK(std::string(e.what()).find("exactly one of builtin, remote, path") != std::string::npos);
    }
    j["model"] = nlohmann::json::object();
    CHECK(error_kind([&] { RunConfig::from_json(j, source_path("configs")); }) == ErrorKind::kConfig);
  }

  TEST_CASE("every offending field is listed") {
    auto j = base_config_json();
    j["datasets"][0]["csv"] = "missing.csv";
    j["datasets"][1]["test_fraction"] = 1.5;
    j["rag"]["k"] = 0;
    j["model"]["builtin"] = "svm";
    try {
      RunConfig::from_json(j, source_path("configs"));
      FAIL("expected a config error");
    } catch (const ServiceError& e) {
      const auto fields = e.details()["fields"].dump();
      CHECK(fields.find("datasets[0].csv") != std::string::npos);
      CHECK(fields.find("datasets[1].test_fraction") != std::string::npos);
      CHECK(fields.find("rag.k") != std::string::npos);
      CHECK(fields.find("model.builtin") != std::string::npos);
      CHECK(http_status(e) == 400);
    }
    auto bad_type = base_config_json();
    bad_type["rag"]["k"] = "four";
    CHECK(error_kind([&] { RunConfig::from_json(bad_type, source_path("configs")); }) == ErrorKind::kConfig);
  }

  TEST_CASE("redaction") {
    auto j = base_config_json();
    j["llm"] = {{"base_url", "http://127.0.0.1:9"}, {"model", "m"}, {"api_key_env", "PXAI_TEST_UNSET_KEY"}};
    const auto cfg = RunConfig::from_json(j, source_path("configs"));
    const auto r = cfg.redacted();
    CHECK(r["llm"]["api_key_env"] == "<redacted>");
    CHECK(r["llm"]["credential"] == "absent");
    CHECK(r.dump().find("PXAI_TEST_UNSET_KEY") == std::string::npos);
  }
}

TEST_SUITE("instance parsing") {
  TEST_CASE("round trip and numeric spellings") {
    const auto& e = *shared_engine();
    const auto x = e.test().instance(2);
    auto j = instance_to_json(x);
    const auto back = parse_instance(e.full().schema_ptr(), j);
    CHECK(back.values() == x.values());
    j["sex"] = 1;
    j["age"] = "61";
    const auto y = parse_instance(e.full().schema_ptr(), j);
    CHECK(y[0] == 61.0);
  }

  TEST_CASE("problems name the features") {
    const auto& e = *shared_engine();
    auto j = test_instance(e);
    j.erase("thal");
    j["cp"] = "9";
    j["chol"] = "high";
    j["colour"] = "blue";
    InstanceProblems p;
    CHECK_FALSE(parse_instance(e.full().schema_ptr(), j, p));
    CHECK(p.missing == std::vector<std::string>{"thal"});
    CHECK(p.invalid.count("cp") == 1);
    CHECK(p.invalid.count("chol") == 1);
    CHECK(p.unknown == std::vector<std::string>{"colour"});
    try {
      parse_instance(e.full().schema_ptr(), j);
      FAIL("expected a validation error");
    } catch (const ServiceError& err) {
      CHECK(err.status() == 422);
      CHECK(std::string(err.what()).find("thal") != std::string::npos);
    }
  }
}

TEST_SUITE("engine") {
  TEST_CASE("auto explain is self-consistent") {
    const auto& e = *shared_engine();
    const auto r = e.explain(request(test_instance(e, 1)));
    REQUIRE(r["selection"]["bundles"].size() == 3);
    CHECK(r["selection"]["mode"] == "auto");
    CHECK(r["selection"]["chosen"] == r["explanation"]["method"]);
    CHECK(r["explanation_digest"] == hex_digest(r["explanation"].dump()));
    const auto s = e.session(r["session_id"]);
    CHECK(s["explanation_digest"] == r["explanation_digest"]);
    CHECK(s["prompt_digest"] == r["prompt_digest"]);
    CHECK(s["history"].size() == 1);
    CHECK(s["history"][0]["content"] == r["narrative"]);
    REQUIRE(r["retrieved"].size() >= 1);
    bool cited = false;
    for (const auto& id : r["retrieved"])
      cited |= r["narrative"].get<std::string>().find("[" + id.get<std::string>() + "]") != std::string::npos;
    CHECK(cited);
    double sum = 0.0;
    for (const auto& [k, v] : r["prediction"]["probabilities"].items()) sum += v.get<double>();
    CHECK(sum == doctest::Approx(1.0));
  }

  TEST_CASE("forced method skips selection") {
    const auto& e = *shared_engine();
    const auto r = e.explain(request(test_instance(e, 1), "non_technical", "anchor"));
    CHECK(r["selection"]["mode"] == "user-forced");
    CHECK(r["selection"]["chosen"] == "anchor");
    REQUIRE(r["selection"]["bundles"].size() == 1);
    CHECK(r["selection"]["bundles"][0]["method"] == "anchor");
    CHECK(r["explanation"]["method"] == "anchor");
  }

  TEST_CASE("identical requests give identical bodies") {
    const auto& e = *shared_engine();
    const auto a = e.explain(request(test_instance(e, 4), "domain_expert"));
    const auto b = e.explain(request(test_instance(e, 4), "domain_expert"));
    CHECK(a["session_id"] != b["session_id"]);
    CHECK(comparable_response(a) == comparable_response(b));
  }

  TEST_CASE("live requests are refused without a credential") {
    auto cfg = fast_config();
    cfg.llm = LlmSettings{};
    cfg.llm->base_url = "http://127.0.0.1:9";
    cfg.llm->api_key_env = "PXAI_TEST_UNSET_KEY";
    const auto e = Engine::start(cfg);
    CHECK_FALSE(e->live());
    REQUIRE(e->warnings().size() == 1);
    CHECK(e->warnings()[0].find("PXAI_TEST_UNSET_KEY") != std::string::npos);
    auto req = request(test_instance(*e));
    req.live = true;
    CHECK(status_of([&] { e->explain(req); }) == 503);
    req.live = false;
    CHECK(e->explain(req)["model"] == "stub");
  }

  TEST_CASE("downstream failures carry the component") {
    const auto e = Engine::start(fast_config(), {.dataset = "", .client = std::make_shared<FailingClient>()});
    try {
      e->explain(request(test_instance(*e), "ml_engineer", "lime"));
      FAIL("expected a failure");
    } catch (const ServiceError& err) {
      CHECK(err.status() == 502);
      CHECK(err.details()["component"] == "llm");
    }
    CHECK(e->sessions().size() == 0);
  }

  TEST_CASE("chat turns, unknown sessions, idle eviction") {
    auto cfg = fast_config();
    cfg.service.session_idle_seconds = 0.3;
    const auto e = Engine::start(cfg);
    const auto r = e->explain(request(test_instance(*e), "ml_engineer", "shap"));
    const auto id = r["session_id"].get<std::string>();
    const auto t = e->chat(id, "Which feature matters most?");
    CHECK(t["turns"] == 1);
    CHECK(t["cumulative_usage"]["total"].get<std::int64_t>() ==
          r["usage"]["total"].get<std::int64_t>() + t["usage"]["total"].get<std::int64_t>());
    CHECK(e->session(id)["history"].size() == 3);
    CHECK(status_of([&] { e->chat(id, ""); }) == 422);
    CHECK(status_of([&] { e->chat("s-unknown", "hi"); }) == 404);
    std::this_thread::sleep_for(std::chrono::milliseconds(450));
    CHECK(status_of([&] { e->session(id); }) == 404);
  }

  TEST_CASE("session snapshot round trip") {
    const auto& e = *shared_engine();
    const auto r = e.explain(request(test_instance(e, 5), "ml_engineer", "lime"));
    e.chat(r["session_id"], "And the second most important?");
    const auto path = fs::temp_directory_path() / "pxai_sessions_test.json";
    e.sessions().snapshot(path);
    SessionRegistry restored;
    CHECK(restored.restore(path) == e.sessions().size());
    const auto entry = restored.get(r["session_id"]);
    auto want = e.session(r["session_id"]);
    want.erase("explanation_digest");
    CHECK(entry.session->to_json() == want);
    CHECK(entry.explanation_digest == r["explanation_digest"]);
    fs::remove(path);
  }

  TEST_CASE("evaluation limits") {
    const auto& e = *shared_engine();
    CHECK(status_of([&] { e.evaluate("metrics", 201, ReportFormat::kJson); }) == 422);
    CHECK(status_of([&] { e.evaluate("metrics", 0, ReportFormat::kJson); }) == 422);
    CHECK(status_of([&] { e.evaluate("bogus", 1, ReportFormat::kJson); }) == 404);
    const auto j = nlohmann::json::parse(e.evaluate("tokens", 2, ReportFormat::kJson));
    CHECK(j["kind"] == "token_block");
    CHECK(j["dataset"] == "heart");
  }

  TEST_CASE("thyroid dataset") {
    const auto e = Engine::start(fast_config(), {.dataset = "thyroid", .client = nullptr});
    CHECK(e->full().feature_count() == 16);
    CHECK(e->store().size() > 0);
    const auto r = e->explain(request(test_instance(*e, 0), "domain_expert", "shap"));
    CHECK(r["dataset"] == "thyroid");
    CHECK(r["narrative"].get<std::string>().size() > 0);
  }
}

TEST_SUITE("http") {
  TEST_CASE("endpoints") {
    const auto engine = shared_engine();
    const auto before = engine->state_digest();
    HttpService service(engine);
    const int port = service.start();
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(120, 0);

    auto post = [&](const std::string& path, const nlohmann::json& body) {
      auto res = cli.Post(path, body.dump(), "application/json");
      REQUIRE(res);
      return std::make_pair(res->status, nlohmann::json::parse(res->body));
    };
    auto get = [&](const std::string& path) {
      auto res = cli.Get(path);
      REQUIRE(res);
      return std::make_pair(res->status, nlohmann::json::parse(res->body));
    };

    SUBCASE("health and config") {
      const auto [st, h] = get("/healthz");
      CHECK(st == 200);
      CHECK(h["status"] == "ok");
      for (const char* c : {"dataset", "model", "store", "llm"}) CHECK(h["components"][c]["status"] == "ok");
      CHECK(h["components"]["llm"]["mode"] == "stub");
      const auto [st2, c] = get("/v1/config");
      CHECK(st2 == 200);
      CHECK(c["schema"]["features"].size() == 13);
      CHECK(c["config"]["datasets"][0]["id"] == "heart");
      const auto [st3, nf] = get("/v1/nothing");
      CHECK(st3 == 404);
      CHECK(nf["error"] == "not_found");
    }

    SUBCASE("explain matches the engine") {
      const nlohmann::json body{{"instance", test_instance(*engine, 6)}, {"profile", "domain_expert"}};
      const auto [st, r] = post("/v1/explain", body);
      REQUIRE(st == 200);
      const auto direct = engine->explain(ExplainRequest::from_json(body));
      CHECK(comparable_response(r) == comparable_response(direct));
      const auto [st2, s] = get("/v1/session/" + r["session_id"].get<std::string>());
      CHECK(st2 == 200);
      CHECK(s["explanation_digest"] == r["explanation_digest"]);
    }

    SUBCASE("validation errors") {
      auto inst = test_instance(*engine);
      inst.erase("oldpeak");
      const auto [st, r] = post("/v1/explain", {{"instance", inst}});
      CHECK(st == 422);
      CHECK(r["error"] == "validation");
      CHECK(r["features"]["missing"] == nlohmann::json::array({"oldpeak"}));
      CHECK(r["message"].get<std::string>().find("oldpeak") != std::string::npos);
      const auto [st2, r2] = post("/v1/explain", {{"instance", test_instance(*engine)}, {"profile", "child"}});
      CHECK(st2 == 422);
      auto res = cli.Post("/v1/explain", "{not json", "application/json");
      REQUIRE(res);
      CHECK(res->status == 400);
    }

    SUBCASE("chat") {
      const auto [st, r] = post("/v1/explain", {{"instance", test_instance(*engine, 7)}, {"method", "lime"}});
      REQUIRE(st == 200);
      const std::string id = r["session_id"];
      const auto [st2, t] = post("/v1/chat", {{"session_id", id}, {"message", "Why?"}});
      CHECK(st2 == 200);
      CHECK(t["reply"].get<std::string>().size() > 0);
      CHECK(get("/v1/session/" + id).second["history"].size() == 3);

      std::vector<std::thread> threads;
      std::array<int, 2> statuses{};
      for (int k = 0; k < 2; ++k)
        threads.emplace_back([&, k] {
          httplib::Client c("127.0.0.1", port);
          auto res = c.Post("/v1/chat", nlohmann::json{{"session_id", id}, {"message", "more " + std::to_string(k)}}.dump(),
                            "application/json");
          statuses[static_cast<std::size_t>(k)] = res ? res->status : -1;
        });
      for (auto& th : threads) th.join();
      CHECK(statuses == std::array<int, 2>{200, 200});
      const auto s = get("/v1/session/" + id).second;
      CHECK(s["history"].size() == 7);
      CHECK(s["turns"] == 3);

      const auto [st3, nf] = post("/v1/chat", {{"session_id", "s-missing"}, {"message", "hi"}});
      CHECK(st3 == 404);
      CHECK(get("/v1/session/s-missing").first == 404);
    }

    SUBCASE("ingest") {
      const auto chunks = engine->store().size();
      const auto [st, r] = post("/v1/ingest", {{"documents", {{{"id", "note"}, {"text", "A short clinical note about angina."}}}}});
      CHECK(st == 200);
      CHECK(r["ingested"]["note"] == 1);
      CHECK(r["chunks"] == chunks + 1);
      const auto [st2, r2] = post("/v1/ingest", {{"documents", {{{"id", "empty"}, {"text", ""}}}}});
      CHECK(st2 == 422);
      const auto [st3, r3] = post("/v1/ingest", {{"docs", 1}});
      CHECK(st3 == 422);
      CHECK(engine->store().documents().count("empty") == 0);
    }

    SUBCASE("evaluate") {
      const auto [st, r] = post("/v1/evaluate/metrics", {{"n", 1}});
      CHECK(st == 200);
      CHECK(r["kind"] == "metric_block");
      CHECK(r["requested"] == 1);
      CHECK(post("/v1/evaluate/metrics", {{"n", 201}}).first == 422);
      CHECK(post("/v1/evaluate/everything", {{"n", 1}}).first == 404);
      auto res = cli.Post("/v1/evaluate/satisfaction", R"({"n": 1, "format": "text"})", "application/json");
      REQUIRE(res);
      CHECK(res->status == 200);
      CHECK(res->body.find("Satisfaction") == 0);
    }

    SUBCASE("state is read-only under load") {
      std::vector<std::thread> threads;
      std::atomic<int> ok{0};
      for (int k = 0; k < 4; ++k)
        threads.emplace_back([&, k] {
          httplib::Client c("127.0.0.1", port);
          c.set_read_timeout(120, 0);
          const nlohmann::json body{{"instance", test_instance(*engine, static_cast<std::size_t>(k))},
                                    {"method", k % 2 ? "shap" : "lime"}};
          auto res = c.Post("/v1/explain", body.dump(), "application/json");
          if (res && res->status == 200) ++ok;
        });
      for (auto& th : threads) th.join();
      CHECK(ok == 4);
    }

    service.stop();
    CHECK(engine->state_digest() == before);
  }
}

TEST_SUITE("command line") {
  TEST_CASE("usage and exit codes") {
    const auto none = run_cli("");
    CHECK(none.code == 2);
    CHECK(none.out.find("Usage") != std::string::npos);
    CHECK(run_cli("frobnicate").code == 2);
    CHECK(run_cli("explain --bogus-flag").code == 2);
    CHECK(run_cli("evaluate everything").code == 2);
    CHECK(run_cli("--help").code == 0);
    const auto missing = run_cli("--config /nonexistent/pxai.json explain --row 0");
    CHECK(missing.code == 1);
  }

  TEST_CASE("explain validates, then matches the service body") {
    const auto cfg_path = write_temp_config(fast_config(), "pxai_cli_test.json");
    auto inst = test_instance(*shared_engine(), 8);
    inst.erase("age");
    const auto bad = run_cli(fmt::format("--config '{}' explain --instance '{}'", cfg_path.string(), inst.dump()));
    CHECK(bad.code == 1);
    CHECK(bad.out.find("age") != std::string::npos);

    const auto out_path = fs::temp_directory_path() / "pxai_cli_explain.json";
    const auto ok = run_cli(fmt::format("--config '{}' explain --row 8 --profile non_technical --out '{}'",
                                        cfg_path.string(), out_path.string()));
    REQUIRE(ok.code == 0);
    std::ifstream in(out_path);
    const auto cli_body = nlohmann::json::parse(in);
    const auto fresh = Engine::start(fast_config());
    const auto svc_body = fresh->explain(request(test_instance(*fresh, 8), "non_technical"));
    CHECK(comparable_response(cli_body) == comparable_response(svc_body));
  }

  TEST_CASE("evaluate writes a report file") {
    const auto cfg_path = write_temp_config(fast_config(), "pxai_cli_eval.json");
    const auto dir = fs::temp_directory_path() / "pxai_cli_reports";
    fs::remove_all(dir);
    const auto r = run_cli(fmt::format("--config '{}' evaluate metrics --n 2 --format json --out-dir '{}'",
                                       cfg_path.string(), dir.string()));
    REQUIRE(r.code == 0);
    std::ifstream in(dir / "heart_metrics_n2.json");
    REQUIRE(in);
    const auto j = nlohmann::json::parse(in);
    CHECK(j["kind"] == "metric_block");
    CHECK(MetricBlockReport::from_json(j).to_json() == j);
  }

  TEST_CASE("train then serve from the saved model") {
    const auto model = fs::temp_directory_path() / "pxai_cli_model.pxm";
    const auto cfg_path = write_temp_config(fast_config(), "pxai_cli_train.json");
    const auto r = run_cli(fmt::format("--config '{}' train --out '{}'", cfg_path.string(), model.string()));
    REQUIRE(r.code == 0);
    CHECK(fs::exists(model));

    auto j = fast_config().to_json();
    j["model"] = {{"path", model.string()}};
    const auto e = Engine::start(RunConfig::from_json(j));
    const auto direct = shared_engine();
    const auto x = direct->test().instance(0);
    CHECK((e->predictor()->predict_proba(x.values()) - direct->predictor()->predict_proba(x.values())).norm() < 1e-12);
  }
}
