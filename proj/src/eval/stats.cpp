#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <sstream>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/eval.hpp"
#include "pxai/seeding.hpp"

namespace pxai {

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  s.low_n = s.n < 2;
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  return s;
}

nlohmann::json Summary::to_json() const {
  nlohmann::json j{{"mean", mean}, {"std", std}, {"n", n}};
  if (low_n) j["low_n"] = true;
  return j;
}

Summary Summary::from_json(const nlohmann::json& j) {
  Summary s;
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.n = j.at("n").get<std::size_t>();
  s.low_n = j.value("low_n", false);
  return s;
}

InstancePool sample_instances(const Dataset& test, const Dataset& full, std::size_t n,
                              std::uint64_t seed) {
  if (n == 0) fail(ErrorKind::kValidation, "instance count must be >= 1");
  const bool use_test = n <= test.size();
  if (!use_test && n > full.size())
    fail(ErrorKind::kValidation,
         fmt::format("requested {} instances but the dataset has only {}", n, full.size()));
  const Dataset& src = use_test ? test : full;

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < src.size(); ++i) by_class[src.labels()[i]].push_back(i);

  // Largest-remainder allocation of n across classes.
  std::vector<std::pair<int, std::size_t>> quota;
  std::vector<std::pair<double, int>> remainder;
  std::size_t assigned = 0;
  for (const auto& [label, rows] : by_class) {
    const double exact = static_cast<double>(n) * static_cast<double>(rows.size()) /
                         static_cast<double>(src.size());
    const auto q = static_cast<std::size_t>(std::floor(exact));
    quota.emplace_back(label, q);
    remainder.emplace_back(exact - static_cast<double>(q), label);
    assigned += q;
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned)
    for (auto& [label, q] : quota)
      if (label == remainder[k % remainder.size()].second) ++q;

  InstancePool pool;
  pool.source = use_test ? "test" : "full";
  for (const auto& [label, q] : quota) {
    auto rows = by_class[label];
    Rng rng(derive_seed(seed, "pool", static_cast<std::uint64_t>(label)));
    for (std::size_t i = 0; i < q; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
      std::swap(rows[i], rows[pick(rng)]);
      pool.rows.push_back(rows[i]);
    }
  }
  std::sort(pool.rows.begin(), pool.rows.end());
  for (auto r : pool.rows) pool.instances.push_back(src.instance(r));
  return pool;
}

std::vector<QuestionnaireItem> parse_questionnaire(std::string_view text) {
  std::vector<QuestionnaireItem> items;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto a = line.find('|');
    const auto b = a == std::string::npos ? a : line.find('|', a + 1);
    if (b == std::string::npos) fail(ErrorKind::kFormat, fmt::format("questionnaire line '{}'", line));
    QuestionnaireItem item;
    try {
      item.number = std::stoi(line.substr(0, a));
    } catch (const std::exception&) {
      fail(ErrorKind::kFormat, fmt::format("questionnaire line '{}'", line));
    }
    item.name = line.substr(a + 1, b - a - 1);
    item.statement = line.substr(b + 1);
    items.push_back(std::move(item));
  }
  if (items.size() != kQuestionnaireItems)
    fail(ErrorKind::kFormat, fmt::format("questionnaire needs {} items, found {}", kQuestionnaireItems,
                                         items.size()));
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].number != static_cast<int>(i + 1))
      fail(ErrorKind::kFormat, "questionnaire items must be numbered 1..7 in order");
  return items;
}

const std::vector<QuestionnaireItem>& builtin_questionnaire() {
  static const auto items = parse_questionnaire(embedded_asset("questionnaire/hoffman_items.v1.txt"));
  return items;
}

std::optional<JudgeScores> parse_judge_reply(std::string_view reply) {
  static const std::regex line_re(R"(item\s*=\s*(\d+)\s+score\s*=\s*(-?\d+)(?![\d.]))", std::regex::icase);
  std::array<std::optional<int>, kQuestionnaireItems> raw;
  const std::string text(reply);
  for (std::sregex_iterator it(text.begin(), text.end(), line_re), end; it != end; ++it) {
    int item = 0;
    int score = 0;
    try {
      item = std::stoi((*it)[1].str());
      score = std::stoi((*it)[2].str());
    } catch (const std::exception&) {
      continue;
    }
    if (item < 1 || item > static_cast<int>(kQuestionnaireItems)) continue;
    auto& slot = raw[static_cast<std::size_t>(item - 1)];
    if (!slot) slot = score;
  }
  JudgeScores s;
  for (std::size_t i = 0; i < kQuestionnaireItems; ++i) {
    if (!raw[i]) return std::nullopt;
    const int clamped = std::clamp(*raw[i], 1, 5);
    if (clamped != *raw[i]) ++s.clamped;
    s.scores[i] = clamped;
  }
  return s;
}

std::vector<ChatMessage> judge_messages(const std::string& narrative,
                                        const std::vector<QuestionnaireItem>& items) {
  std::string statements;
  for (const auto& it : items) statements += fmt::format("{}. {}\n", it.number, it.statement);
  return {{"system",
           "You rate explanations of a model's prediction. For every numbered statement give an "
           "integer from 1 (strongly disagree) to 5 (strongly agree). Answer with exactly one line "
           "per statement in the form item=<number> score=<integer> and nothing else.",
           {}},
          {"user", fmt::format("Explanation:\n{}\n\nStatements:\n{}", narrative, statements), {}}};
}

void aggregate_satisfaction(const std::vector<JudgeRecord>& records, SatisfactionReport& report) {
  report.cells.clear();
  report.method_means.clear();
  std::map<Method, std::map<ProfileKind, std::array<std::vector<double>, kQuestionnaireItems>>> scores;
  for (const auto& r : records) {
    auto& cell = report.cells[r.method][r.profile];
    auto& cols = scores[r.method][r.profile];
    if (!r.scores) {
      ++cell.missing;
      continue;
    }
    ++cell.n;
    cell.clamped += r.scores->clamped;
    for (std::size_t i = 0; i < kQuestionnaireItems; ++i) cols[i].push_back(r.scores->scores[i]);
  }
  for (auto& [m, row] : report.cells) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (auto& [p, cell] : row) {
      if (cell.n == 0) continue;
      auto& cols = scores[m][p];
      double item_sum = 0.0;
      for (std::size_t i = 0; i < kQuestionnaireItems; ++i) {
        // Sorting makes the sum independent of record order.
        std::sort(cols[i].begin(), cols[i].end());
        cell.item_means[i] = summarize(cols[i]).mean;
        item_sum += cell.item_means[i];
      }
      cell.profile_mean = item_sum / static_cast<double>(kQuestionnaireItems);
      sum += cell.profile_mean;
      ++counted;
    }
    if (counted) report.method_means[m] = sum / static_cast<double>(counted);
  }
}

nlohmann::json reference_cells(std::string_view block, std::string_view dataset) {
  static const auto doc = nlohmann::json::parse(embedded_asset("reference/published_tables.json"));
  const auto b = doc.find(std::string(block));
  if (b == doc.end()) return nullptr;
  const auto& cells = b->at("cells");
  const auto d = cells.find(std::string(dataset));
  if (d == cells.end()) return nullptr;
  return {{"instances", b->at("instances")}, {"cells", *d}, {"note", doc.at("note")}};
}

}  // namespace pxai
