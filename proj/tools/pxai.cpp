#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>

#include "CLI11.hpp"
#include "fmt/format.h"
#include "pxai/service.hpp"
#include "spdlog/spdlog.h"

namespace fs = std::filesystem;
using namespace pxai;

namespace {

struct Common {
  std::string config = "configs/pxai.json";
  std::string dataset;
  std::string log_level = "warn";
};

struct InstanceArgs {
  std::string instance;  // JSON text or @file
  long row = -1;         // row of the test split
  std::string profile = "ml_engineer";
  std::string method = "auto";
  bool live = false;
};

void add_instance_options(CLI::App* cmd, InstanceArgs& a) {
  cmd->add_option("--instance", a.instance, "Feature values as JSON, or @file.json");
  cmd->add_option("--row", a.row, "Use this row of the held-out split instead");
  cmd->add_option("--profile", a.profile, "ml_engineer | domain_expert | non_technical");
  cmd->add_option("--method", a.method, "auto | lime | shap | anchor");
  cmd->add_flag("--live", a.live, "Refuse to run with the offline stub");
}

RunConfig load_config(const Common& c) { return RunConfig::load(c.config); }

std::shared_ptr<Engine> engine_for(const Common& c) {
  return Engine::start(load_config(c), {.dataset = c.dataset, .client = nullptr});
}

ExplainRequest make_request(const Engine& eng, const InstanceArgs& a) {
  nlohmann::json body{{"profile", a.profile}, {"method", a.method}, {"live", a.live}};
  if (a.row >= 0) {
    if (static_cast<std::size_t>(a.row) >= eng.test().size())
      throw ServiceError(ErrorKind::kValidation,
                         fmt::format("--row {} is out of range (held-out split has {} rows)", a.row, eng.test().size()), 422);
    body["instance"] = instance_to_json(eng.test().instance(static_cast<std::size_t>(a.row)));
  } else if (!a.instance.empty()) {
    std::string text = a.instance;
    if (text.starts_with("@")) {
      std::ifstream in(text.substr(1));
      if (!in) throw ServiceError(ErrorKind::kValidation, fmt::format("cannot read {}", text.substr(1)), 422);
      text.assign(std::istreambuf_iterator<char>(in), {});
    }
    try {
      body["instance"] = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ServiceError(ErrorKind::kValidation, fmt::format("--instance is not valid JSON: {}", e.what()), 422);
    }
  } else {
    throw ServiceError(ErrorKind::kValidation, "one of --instance or --row is required", 422);
  }
  return ExplainRequest::from_json(body);
}

int run_train(const Common& c, const std::string& out) {
  const auto cfg = load_config(c);
  if (!cfg.model.builtin) fail(ErrorKind::kConfig, "train needs a builtin model in the configuration");
  const auto& d = cfg.dataset(c.dataset);
  const auto data = load_data(cfg, d);
  auto [model, report] = build_predictor(cfg, d, *data.train, *data.test);
  const fs::path path = out.empty() ? cfg.service.output_dir / "models" / (d.id + ".pxm") : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_predictor(*model, path);
  nlohmann::json j{{"dataset", d.id}, {"model", path.string()}};
  if (report) j["report"] = report->to_json();
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_ingest(const Common& c, const std::string& dir, const std::string& store) {
  const auto eng = engine_for(c);
  std::size_t docs = 0;
  if (!dir.empty()) docs = eng->ingest_directory(dir);
  if (!store.empty()) {
    const fs::path p(store);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    eng->store().persist(p);
  }
  std::cout << nlohmann::json{{"dataset", eng->dataset_config().id},
                              {"documents_added", docs},
                              {"documents", eng->store().documents().size()},
                              {"chunks", eng->store().size()},
                              {"embedder", eng->store().embedder_id()},
                              {"store", store}}
                   .dump(2)
            << "\n";
  return 0;
}

int run_explain(const Common& c, const InstanceArgs& a, const std::string& out) {
  const auto eng = engine_for(c);
  const auto response = eng->explain(make_request(*eng, a));
  const auto text = response.dump(2) + "\n";
  if (!out.empty()) {
    std::ofstream f(out);
    f << text;
  }
  std::cout << text;
  return 0;
}

int run_chat(const Common& c, const InstanceArgs& a) {
  const auto eng = engine_for(c);
  const auto response = eng->explain(make_request(*eng, a));
  const auto id = response["session_id"].get<std::string>();
  std::cout << fmt::format("[{} | {} | session {}]\n\n{}\n", response["selection"]["chosen"].get<std::string>(),
                           a.profile, id, response["narrative"].get<std::string>());
  std::string line;
  while (true) {
    std::cout << "\n> " << std::flush;
    if (!std::getline(std::cin, line) || line == "/quit" || line == "/exit") break;
    if (line.empty()) continue;
    try {
      const auto turn = eng->chat(id, line);
      std::cout << "\n" << turn["reply"].get<std::string>() << "\n";
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
    }
  }
  const auto s = eng->session(id);
  std::cout << fmt::format("\nturns {} | tokens {}\n", s["turns"].get<std::size_t>(),
                           s["cumulative_usage"]["total"].dump());
  return 0;
}

int run_evaluate(const Common& c, const std::string& block, std::size_t n, const std::string& format,
                 const std::string& out_dir, std::optional<std::uint64_t> seed, std::size_t concurrency) {
  const auto fmt_kind = parse_report_format(format);
  const auto eng = engine_for(c);
  const auto text = eng->evaluate(block, n, fmt_kind, seed, concurrency, false);
  const fs::path dir = out_dir.empty() ? eng->config().service.output_dir : fs::path(out_dir);
  fs::create_directories(dir);
  const auto path = dir / fmt::format("{}_{}_n{}.{}", eng->dataset_config().id, block, n,
                                      fmt_kind == ReportFormat::kJson ? "json" : "txt");
  std::ofstream f(path);
  f << text;
  if (!f) fail(ErrorKind::kUnavailable, fmt::format("cannot write {}", path.string()));
  std::cout << text << (fmt_kind == ReportFormat::kText ? "\n" : "") << "report written to " << path.string() << "\n";
  return 0;
}

int run_serve(const Common& c, const std::string& host, int port) {
  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  const auto eng = engine_for(c);
  HttpService service(eng);
  const int bound = service.start(host, port);
  spdlog::info("serving dataset {} on http://{}:{}", eng->dataset_config().id, host, bound);
  std::cout << fmt::format("listening on http://{}:{}", host, bound) << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  service.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explain tabular predictions, narrate them for different readers, and evaluate the explainers."};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config, "Run configuration (JSON)");
  app.add_option("-d,--dataset", common.dataset, "Dataset id from the configuration (default: the first)");
  app.add_option("--log-level", common.log_level, "trace | debug | info | warn | error");

  std::string model_out;
  auto* train = app.add_subcommand("train", "Train the configured model and save it");
  train->add_option("--out", model_out, "Model file (default: <output_dir>/models/<dataset>.pxm)");

  std::string kb_dir, store_path;
  auto* ingest = app.add_subcommand("ingest", "Add a knowledge-base directory to the vector store");
  ingest->add_option("--kb", kb_dir, "Directory of .md/.txt documents and .image.json references");
  ingest->add_option("--store", store_path, "Write the store to this file");

  InstanceArgs explain_args;
  std::string explain_out;
  auto* explain = app.add_subcommand("explain", "Explain one instance and print the response");
  add_instance_options(explain, explain_args);
  explain->add_option("--out", explain_out, "Also write the response to this file");

  InstanceArgs chat_args;
  auto* chat = app.add_subcommand("chat", "Explain one instance, then answer questions from stdin");
  add_instance_options(chat, chat_args);

  std::string block, format = "text", out_dir;
  std::size_t n = 100, concurrency = 1;
  std::optional<std::uint64_t> eval_seed;
  auto* evaluate = app.add_subcommand("evaluate", "Run an evaluation block and write the report");
  evaluate->add_option("block", block, "metrics | tokens | satisfaction")
      ->required()
      ->check(CLI::IsMember({"metrics", "tokens", "satisfaction"}));
  evaluate->add_option("--n", n, "Number of instances")->check(CLI::PositiveNumber);
  evaluate->add_option("--format", format, "text | json")->check(CLI::IsMember({"text", "json"}));
  evaluate->add_option("--out-dir", out_dir, "Report directory (default: service.output_dir)");
  evaluate->add_option("--seed", eval_seed, "Overrides seeds.evaluation");
  evaluate->add_option("--concurrency", concurrency, "Instances evaluated in parallel");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  spdlog::set_level(spdlog::level::from_str(common.log_level));
  try {
    if (*train) return run_train(common, model_out);
    if (*ingest) return run_ingest(common, kb_dir, store_path);
    if (*explain) return run_explain(common, explain_args, explain_out);
    if (*chat) return run_chat(common, chat_args);
    if (*evaluate) return run_evaluate(common, block, n, format, out_dir, eval_seed, concurrency);
    if (*serve) return run_serve(common, host, port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
