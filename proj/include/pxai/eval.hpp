#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pxai/explainers.hpp"
#include "pxai/metrics.hpp"
#include "pxai/narration.hpp"
#include "pxai/rag.hpp"

namespace pxai {

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1); 0 when n < 2
  std::size_t n = 0;
  bool low_n = false;  // n < 2

  nlohmann::json to_json() const;
  static Summary from_json(const nlohmann::json& j);
  bool operator==(const Summary&) const = default;
};

// Two-pass mean and sample standard deviation.
Summary summarize(std::span<const double> values);

// Everything a block needs about one dataset and model.
struct EvalTarget {
  std::string dataset_id;
  PredictorPtr predictor;
  std::shared_ptr<const ExplainContext> context;
  std::shared_ptr<const Dataset> test;
  std::shared_ptr<const Dataset> full;
  Glossary glossary;
  std::shared_ptr<const VectorStore> store;  // optional
  std::size_t retrieval_k = 4;
};

struct InstancePool {
  std::string source;  // "test" or "full"
  std::vector<std::size_t> rows;
  std::vector<Instance> instances;
};

// Stratified, seeded sample of n rows from the test split, or from the full
// dataset when the test split is smaller than n. kValidation when n exceeds both.
InstancePool sample_instances(const Dataset& test, const Dataset& full, std::size_t n,
                              std::uint64_t seed);

struct EvalOptions {
  ExplainerConfig explainer;
  MetricConfig metrics;
  SelectionWeights weights;
  std::uint64_t seed = 7;  // replaces the explainer and metric seeds
  std::size_t concurrency = 1;
  std::vector<Method> methods{Method::kLime, Method::kShap, Method::kAnchor};
  std::vector<ProfileKind> profiles{ProfileKind::kMlEngineer, ProfileKind::kDomainExpert,
                                    ProfileKind::kNonTechnical};
};

inline constexpr std::string_view kNotApplicable = "--";
inline constexpr const char* kMetricNames[] = {"infidelity", "lipschitz", "effective_complexity"};

struct MetricBlockReport {
  std::string dataset;
  std::string pool;
  std::size_t requested = 0;
  std::uint64_t seed = 0;
  std::size_t skipped = 0;
  std::vector<std::string> skip_log;
  nlohmann::json configs;
  // nullopt marks a metric that does not apply to the method.
  std::map<Method, std::map<std::string, std::optional<Summary>>> cells;
  std::map<Method, std::size_t> chosen;
  nlohmann::json reference;

  nlohmann::json to_json() const;
  static MetricBlockReport from_json(const nlohmann::json& j);
};

struct TokenCell {
  Summary total;
  Summary input;
  Summary output;
  double cv = 0.0;  // std / mean of total
  std::size_t estimated = 0;  // narratives whose usage was estimated
  bool partial = false;
};

struct TokenBlockReport {
  std::string dataset;
  std::string pool;
  std::size_t requested = 0;
  std::uint64_t seed = 0;
  std::string model;
  std::size_t skipped = 0;
  std::vector<std::string> skip_log;
  std::map<Method, std::map<ProfileKind, TokenCell>> cells;
  nlohmann::json reference;

  nlohmann::json to_json() const;
  static TokenBlockReport from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kQuestionnaireItems = 7;

struct QuestionnaireItem {
  int number = 0;
  std::string name;
  std::string statement;
};

// Parses "<number>|<name>|<statement>" lines; '#' starts a comment.
std::vector<QuestionnaireItem> parse_questionnaire(std::string_view text);
const std::vector<QuestionnaireItem>& builtin_questionnaire();

struct JudgeScores {
  std::array<double, kQuestionnaireItems> scores{};
  std::size_t clamped = 0;
};

// Expects one "item=k score=s" line per item (integer s). Out-of-range scores
// are clamped to [1, 5] and counted. nullopt when any item is missing.
std::optional<JudgeScores> parse_judge_reply(std::string_view reply);

std::vector<ChatMessage> judge_messages(const std::string& narrative,
                                        const std::vector<QuestionnaireItem>& items);

struct JudgeRecord {
  Method method = Method::kLime;
  ProfileKind profile = ProfileKind::kMlEngineer;
  std::optional<JudgeScores> scores;  // nullopt = missing after the retry
};

struct SatisfactionCell {
  std::array<double, kQuestionnaireItems> item_means{};
  double profile_mean = 0.0;
  std::size_t n = 0;
  std::size_t missing = 0;
  std::size_t clamped = 0;
};

struct SatisfactionReport {
  std::string dataset;
  std::string pool;
  std::size_t requested = 0;
  std::uint64_t seed = 0;
  std::string judge_model;
  std::size_t skipped = 0;
  std::vector<std::string> skip_log;
  std::vector<QuestionnaireItem> items;
  std::map<Method, std::map<ProfileKind, SatisfactionCell>> cells;
  std::map<Method, double> method_means;
  nlohmann::json reference;

  nlohmann::json to_json() const;
  static SatisfactionReport from_json(const nlohmann::json& j);
};

// Order-independent aggregation of judge records into cells and method means.
void aggregate_satisfaction(const std::vector<JudgeRecord>& records, SatisfactionReport& report);

// Published values for the dataset and block ("metrics", "tokens",
// "satisfaction"), or null when there are none.
nlohmann::json reference_cells(std::string_view block, std::string_view dataset);

MetricBlockReport run_metric_block(const EvalTarget& target, std::size_t n, const EvalOptions& opt);
TokenBlockReport run_token_block(const EvalTarget& target, std::size_t n, const EvalOptions& opt,
                                 const LlmClient& client);
SatisfactionReport run_satisfaction_block(const EvalTarget& target, std::size_t n,
                                          const EvalOptions& opt, const LlmClient& narrator,
                                          const LlmClient& judge);

enum class ReportFormat { kText, kJson };
ReportFormat parse_report_format(std::string_view name);  // "text" | "json"

std::string render_report(const MetricBlockReport& r, ReportFormat f);
std::string render_report(const TokenBlockReport& r, ReportFormat f);
std::string render_report(const SatisfactionReport& r, ReportFormat f);

}  // namespace pxai
