#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pxai/explainers.hpp"
#include "pxai/metrics.hpp"
#include "pxai/rag.hpp"

namespace pxai {

// Assets compiled into the library, keyed by path under assets/.
const std::map<std::string, std::string_view>& embedded_assets();
std::string_view embedded_asset(std::string_view name);  // kNotFound if absent

enum class ProfileKind { kMlEngineer, kDomainExpert, kNonTechnical };
inline constexpr ProfileKind kAllProfiles[] = {ProfileKind::kMlEngineer, ProfileKind::kDomainExpert,
                                               ProfileKind::kNonTechnical};
std::string_view to_string(ProfileKind k);
ProfileKind parse_profile(std::string_view name);  // kValidation

struct GlossaryEntry {
  std::string term;
  std::string unit;
  std::string description;
  std::map<std::string, std::string> values;  // raw category -> label
};

struct Glossary {
  std::string domain;
  std::string outcome;
  std::map<std::string, std::string> classes;
  std::map<std::string, GlossaryEntry> features;

  std::string term(const std::string& feature) const;
  std::string value(const std::string& feature, const std::string& raw) const;
  std::string class_label(const std::string& raw) const;
  const GlossaryEntry* find(const std::string& feature) const;

  static Glossary from_json(const nlohmann::json& j);
  static Glossary load(const std::filesystem::path& path);
  static Glossary builtin(std::string_view dataset);  // "heart", "thyroid"; empty otherwise
};

struct ProfileTemplate {
  std::string version;
  std::string system;
  std::string user;  // holds the four placeholders

  // "version: ..." line, then "[system]" and "[user]" blocks. kFormat when a
  // placeholder is missing or unknown.
  static ProfileTemplate parse(std::string_view text);
};

enum class FieldPolicy { kVerbatim, kTranslated, kOmitted };
std::string_view to_string(FieldPolicy p);

// Every key that to_json(Explanation) can emit, for either explanation kind.
const std::vector<std::string>& explanation_fields();

struct Profile {
  ProfileKind kind = ProfileKind::kMlEngineer;
  ProfileTemplate tmpl;
  std::map<std::string, FieldPolicy> policy;
  Glossary glossary;

  static Profile builtin(ProfileKind kind, Glossary glossary = {});
  static Profile from_template(ProfileKind kind, std::string_view template_text,
                               Glossary glossary = {});
};

struct PromptBundle {
  ProfileKind profile = ProfileKind::kMlEngineer;
  std::string template_version;
  std::string system;
  std::string user;
  std::string instance_table;
  std::string prediction;
  std::string explanation;
  std::string selection_rationale;
  std::string context;
  std::vector<std::string> cited_chunks;

  std::string digest() const;
  nlohmann::json to_json() const;
  static PromptBundle from_json(const nlohmann::json& j);
};

inline constexpr std::string_view kNoContextMarker = "(no retrieved context)";

// Pure template expansion. `selection` is empty when the method was forced.
PromptBundle build_prompt(const Profile& profile, const Instance& x, const Vector& proba,
                          const std::optional<SelectionResult>& selection, const Explanation& expl,
                          const std::vector<Hit>& context);

// Retrieval query for an explanation: the predicted label plus the domain terms
// of its most influential features.
std::string retrieval_query(const Explanation& e, const Glossary& glossary,
                            std::size_t top_features = 3);

enum class UsageSource { kReported, kEstimated };

struct TokenUsage {
  std::int64_t input = 0;
  std::int64_t output = 0;
  UsageSource source = UsageSource::kReported;

  std::int64_t total() const { return input + output; }
  TokenUsage& operator+=(const TokenUsage& o);
  bool operator==(const TokenUsage&) const = default;
  nlohmann::json to_json() const;
  static TokenUsage from_json(const nlohmann::json& j);
};

// ceil(bytes / 4). A rough estimate, used only when a provider omits counts.
std::int64_t estimate_tokens(std::string_view text);

struct ChatMessage {
  std::string role;  // "system", "user", "assistant"
  std::string content;
  TokenUsage usage;  // zero for everything but assistant replies
};

struct Completion {
  std::string content;
  std::optional<TokenUsage> usage;  // as reported by the provider
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  // Thread-safe; one chat-completion round trip.
  virtual Completion complete(const std::vector<ChatMessage>& messages) const = 0;
  virtual std::string model_id() const = 0;
};

using LlmClientPtr = std::shared_ptr<const LlmClient>;

struct LlmSettings {
  std::string base_url;
  std::string model = "default";
  std::string api_key_env;  // name of the variable holding the key
  double temperature = 0.0;
  std::chrono::milliseconds timeout{60000};
  int attempts = 3;
  std::chrono::milliseconds backoff{100};

  nlohmann::json to_json() const;
  static LlmSettings from_json(const nlohmann::json& j);
};

// POST {base}/chat {"model", "messages", "temperature"} -> {"content", "usage"?}.
class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(LlmSettings settings);
  Completion complete(const std::vector<ChatMessage>& messages) const override;
  std::string model_id() const override { return settings_.model; }
  bool has_credential() const { return !api_key_.empty(); }

 private:
  LlmSettings settings_;
  std::string api_key_;
};

// Offline client. The default responder writes a short narrative that cites
// the chunk ids found in the last user message.
class StubLlmClient final : public LlmClient {
 public:
  using Responder = std::function<std::string(const std::vector<ChatMessage>&)>;

  StubLlmClient();
  explicit StubLlmClient(Responder responder, std::string model = "stub",
                         std::optional<TokenUsage> declared = std::nullopt,
                         bool report_usage = true);
  static std::shared_ptr<StubLlmClient> fixed(std::string reply, TokenUsage declared);

  Completion complete(const std::vector<ChatMessage>& messages) const override;
  std::string model_id() const override { return model_; }
  std::size_t calls() const { return calls_.load(); }

  static std::string default_reply(const std::vector<ChatMessage>& messages);

 private:
  Responder responder_;
  std::string model_;
  std::optional<TokenUsage> declared_;
  bool report_usage_;
  mutable std::atomic<std::size_t> calls_{0};
};

struct Narrative {
  std::string text;
  TokenUsage usage;
};

std::vector<ChatMessage> prompt_messages(const PromptBundle& prompt);

// One round trip. kProvider on a blank completion; usage estimated when the
// provider omits it.
Narrative complete_checked(const LlmClient& client, const std::vector<ChatMessage>& messages);

// System and user messages of the prompt, through complete_checked.
Narrative generate_narrative(const LlmClient& client, const PromptBundle& prompt);

class ChatSession {
 public:
  ChatSession(std::string id, PromptBundle prompt, Narrative first);

  const std::string& id() const { return id_; }
  ProfileKind profile() const { return prompt_.profile; }
  const PromptBundle& prompt() const { return prompt_; }
  std::vector<ChatMessage> history() const;
  TokenUsage cumulative_usage() const;
  std::size_t turns() const { return turns_.load(); }
  std::chrono::steady_clock::time_point last_used() const;

  // Serialized per session; history and usage are untouched when the client throws.
  Narrative turn(const LlmClient& client, const std::string& message);

  nlohmann::json to_json() const;
  static std::unique_ptr<ChatSession> from_json(const nlohmann::json& j);

 private:
  std::string id_;
  PromptBundle prompt_;
  mutable std::mutex mu_;
  std::vector<ChatMessage> history_;
  TokenUsage cumulative_;
  std::atomic<std::size_t> turns_{0};
  std::chrono::steady_clock::time_point last_used_;
};

std::string new_session_id();

std::unique_ptr<ChatSession> start_session(const LlmClient& client, const PromptBundle& prompt);
Narrative chat_turn(const LlmClient& client, ChatSession& session, const std::string& message);

}  // namespace pxai
