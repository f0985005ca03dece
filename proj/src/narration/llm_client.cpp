#include <cstdlib>
#include <regex>
#include <set>
#include <thread>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/http_util.hpp"
#include "pxai/narration.hpp"
#include "httplib.h"

namespace pxai {

TokenUsage& TokenUsage::operator+=(const TokenUsage& o) {
  input += o.input;
  output += o.output;
  if (o.source == UsageSource::kEstimated) source = UsageSource::kEstimated;
  return *this;
}

nlohmann::json TokenUsage::to_json() const {
  return {{"input", input},
          {"output", output},
          {"total", total()},
          {"source", source == UsageSource::kReported ? "reported" : "estimated"}};
}

TokenUsage TokenUsage::from_json(const nlohmann::json& j) {
  TokenUsage u;
  u.input = j.at("input").get<std::int64_t>();
  u.output = j.at("output").get<std::int64_t>();
  u.source = j.value("source", "reported") == "estimated" ? UsageSource::kEstimated
                                                          : UsageSource::kReported;
  return u;
}

std::int64_t estimate_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

nlohmann::json LlmSettings::to_json() const {
  return {{"base_url", base_url},
          {"model", model},
          {"api_key_env", api_key_env},
          {"temperature", temperature},
          {"timeout_ms", timeout.count()},
          {"attempts", attempts},
          {"backoff_ms", backoff.count()}};
}

LlmSettings LlmSettings::from_json(const nlohmann::json& j) {
  LlmSettings s;
  try {
    s.base_url = j.value("base_url", s.base_url);
    s.model = j.value("model", s.model);
    s.api_key_env = j.value("api_key_env", s.api_key_env);
    s.temperature = j.value("temperature", s.temperature);
    s.timeout = std::chrono::milliseconds(j.value("timeout_ms", s.timeout.count()));
    s.attempts = j.value("attempts", s.attempts);
    s.backoff = std::chrono::milliseconds(j.value("backoff_ms", s.backoff.count()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, fmt::format("llm settings: {}", e.what()));
  }
  if (s.attempts < 1) fail(ErrorKind::kConfig, "llm.attempts must be >= 1");
  if (s.temperature < 0.0) fail(ErrorKind::kConfig, "llm.temperature must be >= 0");
  return s;
}

HttpLlmClient::HttpLlmClient(LlmSettings settings) : settings_(std::move(settings)) {
  if (settings_.attempts < 1) fail(ErrorKind::kConfig, "llm.attempts must be >= 1");
  HttpEndpoint::parse(settings_.base_url);
  if (!settings_.api_key_env.empty())
    if (const char* key = std::getenv(settings_.api_key_env.c_str())) api_key_ = key;
}

Completion HttpLlmClient::complete(const std::vector<ChatMessage>& messages) const {
  const auto ep = HttpEndpoint::parse(settings_.base_url);
  nlohmann::json body{{"model", settings_.model}, {"temperature", settings_.temperature}};
  body["messages"] = nlohmann::json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  const auto payload = body.dump();

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::vector<std::string> log;
  for (int attempt = 1; attempt <= settings_.attempts; ++attempt) {
    if (attempt > 1) std::this_thread::sleep_for(settings_.backoff * (attempt - 1));
    httplib::Client client(ep.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(settings_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(settings_.timeout - secs);
    client.set_connection_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    client.set_read_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    client.set_write_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    auto res = client.Post(ep.path("/chat"), headers, payload, "application/json");
    if (!res) {
      log.push_back(fmt::format("attempt {}: {}", attempt, httplib::to_string(res.error())));
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      log.push_back(fmt::format("attempt {}: HTTP {}", attempt, res->status));
      continue;
    }
    if (res->status != 200)
      fail(ErrorKind::kProvider, fmt::format("llm provider returned HTTP {}: {}", res->status,
                                             res->body.substr(0, 200)));
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kProtocol, "llm provider returned malformed JSON");
    }
    if (!reply.is_object() || !reply.contains("content") || !reply["content"].is_string())
      fail(ErrorKind::kProtocol, "llm response lacks a 'content' string");
    Completion c;
    c.content = reply["content"].get<std::string>();
    if (reply.contains("usage") && reply["usage"].is_object()) {
      const auto& u = reply["usage"];
      if (u.contains("input") && u.contains("output") && u["input"].is_number_integer() &&
          u["output"].is_number_integer()) {
        c.usage = TokenUsage{u["input"].get<std::int64_t>(), u["output"].get<std::int64_t>(),
                             UsageSource::kReported};
        if (c.usage->input < 0 || c.usage->output < 0)
          fail(ErrorKind::kProtocol, "llm reported negative token counts");
      }
    }
    return c;
  }
  fail(ErrorKind::kUnavailable,
       fmt::format("llm endpoint {} failed after {} attempt(s): {}", settings_.base_url,
                   settings_.attempts, fmt::join(log, "; ")));
}

StubLlmClient::StubLlmClient() : StubLlmClient(&StubLlmClient::default_reply) {}

StubLlmClient::StubLlmClient(Responder responder, std::string model,
                             std::optional<TokenUsage> declared, bool report_usage)
    : responder_(std::move(responder)),
      model_(std::move(model)),
      declared_(declared),
      report_usage_(report_usage) {}

std::shared_ptr<StubLlmClient> StubLlmClient::fixed(std::string reply, TokenUsage declared) {
  return std::make_shared<StubLlmClient>([reply](const std::vector<ChatMessage>&) { return reply; },
                                         "stub-fixed", declared);
}

std::string StubLlmClient::default_reply(const std::vector<ChatMessage>& messages) {
  std::string last;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it)
    if (it->role == "user") {
      last = it->content;
      break;
    }
  static const std::regex cite(R"(\[([A-Za-z0-9_.\-]+:[0-9]{4})\])");
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (std::sregex_iterator it(last.begin(), last.end(), cite), end; it != end; ++it)
    if (seen.insert((*it)[1].str()).second) ids.push_back((*it)[1].str());

  std::string title;
  if (const auto pos = last.find("## "); pos != std::string::npos)
    title = last.substr(pos + 3, last.find('\n', pos) - pos - 3);
  std::string reply = messages.size() <= 2
                          ? "Summary of the explanation above."
                          : "Follow-up answer based on the explanation above.";
  if (!title.empty()) reply += fmt::format(" The section \"{}\" was reviewed.", title);
  if (ids.empty()) {
    reply += " No background passages were available.";
  } else {
    reply += " Supporting passages:";
    for (std::size_t i = 0; i < ids.size() && i < 2; ++i) reply += fmt::format(" [{}]", ids[i]);
    reply += ".";
  }
  return reply;
}

Completion StubLlmClient::complete(const std::vector<ChatMessage>& messages) const {
  ++calls_;
  Completion c;
  c.content = responder_(messages);
  if (!report_usage_) return c;
  if (declared_) {
    c.usage = *declared_;
  } else {
    TokenUsage u;
    for (const auto& m : messages) u.input += estimate_tokens(m.content);
    u.output = estimate_tokens(c.content);
    c.usage = u;
  }
  c.usage->source = UsageSource::kReported;
  return c;
}

std::vector<ChatMessage> prompt_messages(const PromptBundle& prompt) {
  return {{"system", prompt.system, {}}, {"user", prompt.user, {}}};
}

namespace {

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

}  // namespace

Narrative complete_checked(const LlmClient& client, const std::vector<ChatMessage>& messages) {
  auto c = client.complete(messages);
  if (blank(c.content))
    fail(ErrorKind::kProvider, fmt::format("model {} returned an empty completion", client.model_id()));
  Narrative n;
  n.text = std::move(c.content);
  if (c.usage) {
    n.usage = *c.usage;
  } else {
    n.usage.source = UsageSource::kEstimated;
    for (const auto& m : messages) n.usage.input += estimate_tokens(m.content);
    n.usage.output = estimate_tokens(n.text);
  }
  return n;
}

Narrative generate_narrative(const LlmClient& client, const PromptBundle& prompt) {
  return complete_checked(client, prompt_messages(prompt));
}

}  // namespace pxai
