#include <random>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/narration.hpp"

namespace pxai {

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}() ^
                             static_cast<std::uint64_t>(
                                 std::chrono::steady_clock::now().time_since_epoch().count())};
  static std::uint64_t counter = 0;
  std::lock_guard lock(mu);
  return fmt::format("s-{:016x}{:04x}", rng(), ++counter & 0xffff);
}

ChatSession::ChatSession(std::string id, PromptBundle prompt, Narrative first)
    : id_(std::move(id)), prompt_(std::move(prompt)), last_used_(std::chrono::steady_clock::now()) {
  history_.push_back({"assistant", std::move(first.text), first.usage});
  cumulative_ = first.usage;
}

std::vector<ChatMessage> ChatSession::history() const {
  std::lock_guard lock(mu_);
  return history_;
}

TokenUsage ChatSession::cumulative_usage() const {
  std::lock_guard lock(mu_);
  return cumulative_;
}

std::chrono::steady_clock::time_point ChatSession::last_used() const {
  std::lock_guard lock(mu_);
  return last_used_;
}

Narrative ChatSession::turn(const LlmClient& client, const std::string& message) {
  if (message.find_first_not_of(" \t\r\n") == std::string::npos)
    fail(ErrorKind::kValidation, "chat message is empty");
  std::lock_guard lock(mu_);
  auto messages = prompt_messages(prompt_);
  messages.insert(messages.end(), history_.begin(), history_.end());
  messages.push_back({"user", message, {}});
  auto reply = complete_checked(client, messages);

  history_.push_back({"user", message, {}});
  history_.push_back({"assistant", reply.text, reply.usage});
  cumulative_ += reply.usage;
  last_used_ = std::chrono::steady_clock::now();
  ++turns_;
  return reply;
}

nlohmann::json ChatSession::to_json() const {
  std::lock_guard lock(mu_);
  nlohmann::json h = nlohmann::json::array();
  for (const auto& m : history_)
    h.push_back({{"role", m.role}, {"content", m.content}, {"usage", m.usage.to_json()}});
  return {{"id", id_},
          {"profile", to_string(prompt_.profile)},
          {"prompt", prompt_.to_json()},
          {"prompt_digest", prompt_.digest()},
          {"history", h},
          {"turns", turns_.load()},
          {"cumulative_usage", cumulative_.to_json()}};
}

std::unique_ptr<ChatSession> ChatSession::from_json(const nlohmann::json& j) {
  try {
    const auto& h = j.at("history");
    if (!h.is_array() || h.empty() || h[0].at("role") != "assistant")
      fail(ErrorKind::kFormat, "session history must start with the assistant narrative");
    Narrative first{h[0].at("content").get<std::string>(), TokenUsage::from_json(h[0].at("usage"))};
    auto s = std::make_unique<ChatSession>(j.at("id").get<std::string>(),
                                           PromptBundle::from_json(j.at("prompt")), first);
    for (std::size_t i = 1; i < h.size(); ++i) {
      ChatMessage m{h[i].at("role").get<std::string>(), h[i].at("content").get<std::string>(),
                    TokenUsage::from_json(h[i].at("usage"))};
      s->cumulative_ += m.usage;
      s->history_.push_back(std::move(m));
    }
    s->turns_ = j.value("turns", (h.size() - 1) / 2);
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("malformed session: {}", e.what()));
  }
}

std::unique_ptr<ChatSession> start_session(const LlmClient& client, const PromptBundle& prompt) {
  return std::make_unique<ChatSession>(new_session_id(), prompt, generate_narrative(client, prompt));
}

Narrative chat_turn(const LlmClient& client, ChatSession& session, const std::string& message) {
  return session.turn(client, message);
}

}  // namespace pxai
