#include <algorithm>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/eval.hpp"

namespace pxai {

namespace {

constexpr Method kDisplayOrder[] = {Method::kAnchor, Method::kLime, Method::kShap};

std::string title(Method m) {
  switch (m) {
    case Method::kShap: return "SHAP";
    case Method::kLime: return "LIME";
    case Method::kAnchor: return "Anchor";
  }
  return "?";
}

std::string short_profile(ProfileKind p) {
  switch (p) {
    case ProfileKind::kMlEngineer: return "ML";
    case ProfileKind::kDomainExpert: return "Domain";
    case ProfileKind::kNonTechnical: return "Non";
  }
  return "?";
}

std::string pm(double mean, double std, const char* spec = "{:.4g}") {
  return fmt::format(fmt::runtime(std::string(spec) + " ± " + spec), mean, std);
}

std::string pad(const std::string& s, std::size_t width) {
  // Display width: count UTF-8 lead bytes only.
  std::size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w >= width ? s : s + std::string(width - w, ' ');
}

std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  auto measure = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) {
      std::size_t w = 0;
      for (unsigned char c : r[i])
        if ((c & 0xC0) != 0x80) ++w;
      width[i] = std::max(width[i], w);
    }
  };
  measure(header);
  for (const auto& r : rows) measure(r);
  auto line = [&](const std::vector<std::string>& r) {
    std::string out;
    for (std::size_t i = 0; i < width.size(); ++i) {
      out += i ? " | " : "";
      out += pad(i < r.size() ? r[i] : "", width[i]);
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::string rule;
  for (std::size_t i = 0; i < width.size(); ++i) rule += (i ? "-+-" : "") + std::string(width[i], '-');
  out += rule + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

nlohmann::json skip_json(std::size_t skipped, const std::vector<std::string>& log) {
  return {{"count", skipped}, {"log", log}};
}

template <class Map>
std::vector<Method> present(const Map& cells) {
  std::vector<Method> out;
  for (auto m : kDisplayOrder)
    if (cells.count(m)) out.push_back(m);
  return out;
}

}  // namespace

ReportFormat parse_report_format(std::string_view name) {
  if (name == "text") return ReportFormat::kText;
  if (name == "json") return ReportFormat::kJson;
  fail(ErrorKind::kValidation, fmt::format("unknown report format '{}' (text or json)", name));
}

// --- metric block ---------------------------------------------------------

nlohmann::json MetricBlockReport::to_json() const {
  nlohmann::json c = nlohmann::json::object();
  for (const auto& [m, row] : cells) {
    auto& jr = c[std::string(to_string(m))];
    for (const auto& [metric, s] : row)
      jr[metric] = s ? s->to_json() : nlohmann::json(std::string(kNotApplicable));
  }
  nlohmann::json ch = nlohmann::json::object();
  for (const auto& [m, k] : chosen) ch[std::string(to_string(m))] = k;
  return {{"kind", "metric_block"}, {"version", 1},      {"dataset", dataset},
          {"pool", pool},           {"requested", requested}, {"seed", seed},
          {"skipped", skip_json(skipped, skip_log)},
          {"configs", configs},     {"cells", c},        {"chosen", ch},
          {"reference", reference}};
}

MetricBlockReport MetricBlockReport::from_json(const nlohmann::json& j) {
  MetricBlockReport r;
  try {
    if (j.at("kind") != "metric_block") fail(ErrorKind::kFormat, "not a metric block report");
    r.dataset = j.at("dataset").get<std::string>();
    r.pool = j.at("pool").get<std::string>();
    r.requested = j.at("requested").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.skipped = j.at("skipped").at("count").get<std::size_t>();
    r.skip_log = j.at("skipped").at("log").get<std::vector<std::string>>();
    r.configs = j.at("configs");
    for (const auto& [m, row] : j.at("cells").items())
      for (const auto& [metric, s] : row.items())
        r.cells[parse_method(m)][metric] =
            s.is_string() ? std::nullopt : std::optional<Summary>(Summary::from_json(s));
    for (const auto& [m, k] : j.at("chosen").items()) r.chosen[parse_method(m)] = k.get<std::size_t>();
    r.reference = j.at("reference");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("malformed metric report: {}", e.what()));
  }
  return r;
}

std::string render_report(const MetricBlockReport& r, ReportFormat f) {
  if (f == ReportFormat::kJson) return r.to_json().dump(2) + "\n";
  std::string out = fmt::format("XAI metrics, mean ± std | dataset {} | pool {} | n {} | seed {} | skipped {}\n",
                                r.dataset, r.pool, r.requested, r.seed, r.skipped);
  std::vector<std::vector<std::string>> rows;
  for (auto m : present(r.cells)) {
    std::vector<std::string> row{title(m)};
    for (const char* metric : kMetricNames) {
      const auto& cells = r.cells.at(m);
      const auto it = cells.find(metric);
      if (it == cells.end() || !it->second) row.push_back(std::string(kNotApplicable));
      else row.push_back(pm(it->second->mean, it->second->std));
    }
    const auto c = r.chosen.find(m);
    row.push_back(c == r.chosen.end() ? "" : std::to_string(c->second));
    rows.push_back(std::move(row));
  }
  out += table({"Method", "Infidelity", "Lipschitz", "EffComp", "Chosen"}, rows);
  if (!rows.empty() && r.reference.is_object()) {
    std::vector<std::vector<std::string>> ref;
    for (auto m : kDisplayOrder) {
      const auto key = std::string(to_string(m));
      if (!r.reference["cells"].contains(key)) continue;
      std::vector<std::string> row{title(m)};
      for (const char* metric : kMetricNames) {
        const auto& v = r.reference["cells"][key][metric];
        row.push_back(v.is_array() ? pm(v[0].get<double>(), v[1].get<double>(), "{:.2f}")
                                   : std::string(kNotApplicable));
      }
      ref.push_back(std::move(row));
    }
    out += fmt::format("\nPublished reference (n {}, different models and seeds):\n",
                       r.reference["instances"].get<int>());
    out += table({"Method", "Infidelity", "Lipschitz", "EffComp"}, ref);
  }
  return out;
}

// --- token block ----------------------------------------------------------

nlohmann::json TokenBlockReport::to_json() const {
  nlohmann::json c = nlohmann::json::object();
  for (const auto& [m, row] : cells)
    for (const auto& [p, cell] : row)
      c[std::string(to_string(m))][std::string(to_string(p))] = {
          {"total", cell.total.to_json()}, {"input", cell.input.to_json()},
          {"output", cell.output.to_json()}, {"cv", cell.cv},
          {"estimated", cell.estimated},     {"partial", cell.partial}};
  return {{"kind", "token_block"}, {"version", 1},          {"dataset", dataset},
          {"pool", pool},          {"requested", requested}, {"seed", seed},
          {"model", model},        {"skipped", skip_json(skipped, skip_log)},
          {"cells", c},            {"reference", reference}};
}

TokenBlockReport TokenBlockReport::from_json(const nlohmann::json& j) {
  TokenBlockReport r;
  try {
    if (j.at("kind") != "token_block") fail(ErrorKind::kFormat, "not a token block report");
    r.dataset = j.at("dataset").get<std::string>();
    r.pool = j.at("pool").get<std::string>();
    r.requested = j.at("requested").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.model = j.at("model").get<std::string>();
    r.skipped = j.at("skipped").at("count").get<std::size_t>();
    r.skip_log = j.at("skipped").at("log").get<std::vector<std::string>>();
    for (const auto& [m, row] : j.at("cells").items())
      for (const auto& [p, c] : row.items()) {
        TokenCell cell;
        cell.total = Summary::from_json(c.at("total"));
        cell.input = Summary::from_json(c.at("input"));
        cell.output = Summary::from_json(c.at("output"));
        cell.cv = c.at("cv").get<double>();
        cell.estimated = c.at("estimated").get<std::size_t>();
        cell.partial = c.at("partial").get<bool>();
        r.cells[parse_method(m)][parse_profile(p)] = cell;
      }
    r.reference = j.at("reference");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("malformed token report: {}", e.what()));
  }
  return r;
}

std::string render_report(const TokenBlockReport& r, ReportFormat f) {
  if (f == ReportFormat::kJson) return r.to_json().dump(2) + "\n";
  std::string out = fmt::format(
      "Total tokens per explanation, mean ± std (cv) | dataset {} | pool {} | n {} | seed {} | model {}\n",
      r.dataset, r.pool, r.requested, r.seed, r.model);
  std::vector<std::vector<std::string>> rows;
  for (auto m : present(r.cells)) {
    std::vector<std::string> row{title(m)};
    for (auto p : kAllProfiles) {
      const auto& cells = r.cells.at(m);
      const auto it = cells.find(p);
      if (it == cells.end()) {
        row.push_back("");
        continue;
      }
      const auto& c = it->second;
      row.push_back(fmt::format("{} ({:.3f}){}{}", pm(c.total.mean, c.total.std, "{:.0f}"), c.cv,
                                c.partial ? fmt::format(" partial n={}", c.total.n) : "",
                                c.total.low_n ? " low-n" : ""));
    }
    rows.push_back(std::move(row));
  }
  out += table({"Method", "ML", "Domain", "Non"}, rows);
  if (!rows.empty() && r.reference.is_object()) {
    std::vector<std::vector<std::string>> ref;
    for (auto m : kDisplayOrder) {
      const auto key = std::string(to_string(m));
      if (!r.reference["cells"].contains(key)) continue;
      std::vector<std::string> row{title(m)};
      for (auto p : kAllProfiles) {
        const auto& v = r.reference["cells"][key][std::string(to_string(p))];
        row.push_back(pm(v[0].get<double>(), v[1].get<double>(), "{:.0f}"));
      }
      ref.push_back(std::move(row));
    }
    out += fmt::format("\nPublished reference (n {}, provider-dependent):\n",
                       r.reference["instances"].get<int>());
    out += table({"Method", "ML", "Domain", "Non"}, ref);
  }
  return out;
}

// --- satisfaction block ---------------------------------------------------

nlohmann::json SatisfactionReport::to_json() const {
  nlohmann::json c = nlohmann::json::object();
  for (const auto& [m, row] : cells)
    for (const auto& [p, cell] : row)
      c[std::string(to_string(m))][std::string(to_string(p))] = {
          {"items", cell.item_means}, {"profile_mean", cell.profile_mean}, {"n", cell.n},
          {"missing", cell.missing},  {"clamped", cell.clamped}};
  nlohmann::json mm = nlohmann::json::object();
  for (const auto& [m, v] : method_means) mm[std::string(to_string(m))] = v;
  nlohmann::json it = nlohmann::json::array();
  for (const auto& q : items) it.push_back({{"number", q.number}, {"name", q.name}, {"statement", q.statement}});
  return {{"kind", "satisfaction_block"}, {"version", 1},
          {"dataset", dataset},           {"pool", pool},
          {"requested", requested},       {"seed", seed},
          {"judge_model", judge_model},   {"skipped", skip_json(skipped, skip_log)},
          {"items", it},                  {"cells", c},
          {"method_means", mm},           {"reference", reference}};
}

SatisfactionReport SatisfactionReport::from_json(const nlohmann::json& j) {
  SatisfactionReport r;
  try {
    if (j.at("kind") != "satisfaction_block") fail(ErrorKind::kFormat, "not a satisfaction report");
    r.dataset = j.at("dataset").get<std::string>();
    r.pool = j.at("pool").get<std::string>();
    r.requested = j.at("requested").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.judge_model = j.at("judge_model").get<std::string>();
    r.skipped = j.at("skipped").at("count").get<std::size_t>();
    r.skip_log = j.at("skipped").at("log").get<std::vector<std::string>>();
    for (const auto& q : j.at("items"))
      r.items.push_back({q.at("number").get<int>(), q.at("name").get<std::string>(),
                         q.at("statement").get<std::string>()});
    for (const auto& [m, row] : j.at("cells").items())
      for (const auto& [p, c] : row.items()) {
        SatisfactionCell cell;
        cell.item_means = c.at("items").get<std::array<double, kQuestionnaireItems>>();
        cell.profile_mean = c.at("profile_mean").get<double>();
        cell.n = c.at("n").get<std::size_t>();
        cell.missing = c.at("missing").get<std::size_t>();
        cell.clamped = c.at("clamped").get<std::size_t>();
        r.cells[parse_method(m)][parse_profile(p)] = cell;
      }
    for (const auto& [m, v] : j.at("method_means").items()) r.method_means[parse_method(m)] = v.get<double>();
    r.reference = j.at("reference");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("malformed satisfaction report: {}", e.what()));
  }
  return r;
}

std::string render_report(const SatisfactionReport& r, ReportFormat f) {
  if (f == ReportFormat::kJson) return r.to_json().dump(2) + "\n";
  std::string out = fmt::format(
      "Satisfaction (1-5) | dataset {} | pool {} | n {} | seed {} | judge {} | skipped {}\n", r.dataset,
      r.pool, r.requested, r.seed, r.judge_model, r.skipped);
  std::vector<std::string> header{"Method", "Profile"};
  for (std::size_t i = 1; i <= kQuestionnaireItems; ++i) header.push_back(std::to_string(i));
  header.insert(header.end(), {"x̄_prof", "x̄_meth", "n", "missing", "clamped"});
  std::vector<std::vector<std::string>> rows;
  for (auto m : present(r.cells)) {
    bool first = true;
    for (auto p : kAllProfiles) {
      const auto& row = r.cells.at(m);
      const auto it = row.find(p);
      if (it == row.end()) continue;
      const auto& c = it->second;
      std::vector<std::string> line{first ? title(m) : "", short_profile(p)};
      for (double v : c.item_means) line.push_back(c.n ? fmt::format("{:.2f}", v) : "");
      line.push_back(c.n ? fmt::format("{:.2f}", c.profile_mean) : "");
      const auto mm = r.method_means.find(m);
      line.push_back(first && mm != r.method_means.end() ? fmt::format("{:.2f}", mm->second) : "");
      line.push_back(std::to_string(c.n));
      line.push_back(std::to_string(c.missing));
      line.push_back(std::to_string(c.clamped));
      rows.push_back(std::move(line));
      first = false;
    }
  }
  out += table(header, rows);
  if (!rows.empty() && r.reference.is_object()) {
    std::vector<std::vector<std::string>> ref;
    for (auto m : kDisplayOrder) {
      const auto key = std::string(to_string(m));
      if (!r.reference["cells"].contains(key)) continue;
      bool first = true;
      for (auto p : kAllProfiles) {
        const auto& c = r.reference["cells"][key][std::string(to_string(p))];
        std::vector<std::string> line{first ? title(m) : "", short_profile(p)};
        for (const auto& v : c["items"]) line.push_back(fmt::format("{:.1f}", v.get<double>()));
        line.push_back(fmt::format("{:.1f}", c["profile_mean"].get<double>()));
        line.push_back(first ? fmt::format("{:.1f}", r.reference["cells"][key]["method_mean"].get<double>()) : "");
        ref.push_back(std::move(line));
        first = false;
      }
    }
    auto ref_header = header;
    ref_header.resize(header.size() - 3);
    out += fmt::format("\nPublished reference (n {}, judge-dependent):\n",
                       r.reference["instances"].get<int>());
    out += table(ref_header, ref);
  }
  return out;
}

}  // namespace pxai
