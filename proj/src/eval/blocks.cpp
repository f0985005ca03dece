#include <algorithm>
#include <future>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/eval.hpp"
#include "pxai/seeding.hpp"

namespace pxai {

namespace {

template <class Fn>
void for_each_index(std::size_t n, std::size_t concurrency, Fn&& fn) {
  if (concurrency <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  for (std::size_t start = 0; start < n; start += concurrency) {
    std::vector<std::future<void>> wave;
    for (std::size_t i = start; i < std::min(n, start + concurrency); ++i)
      wave.push_back(std::async(std::launch::async, [&fn, i] { fn(i); }));
    for (auto& f : wave) f.get();
  }
}

void check_target(const EvalTarget& t) {
  if (!t.predictor || !t.context || !t.test || !t.full)
    fail(ErrorKind::kConfig, "evaluation target is incomplete");
}

struct Seeded {
  ExplainerConfig explainer;
  MetricConfig metrics;
};

Seeded seeded(const EvalOptions& opt) {
  Seeded s{opt.explainer, opt.metrics};
  s.explainer.seed = opt.seed;
  s.metrics.seed = opt.seed;
  s.metrics.infidelity.seed = opt.seed;
  s.metrics.lipschitz.seed = opt.seed;
  s.explainer.validate();
  s.metrics.validate();
  return s;
}

std::string describe(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e))
    return fmt::format("{}: {}", to_string(err->kind()), err->what());
  return e.what();
}

std::vector<Hit> retrieve(const EvalTarget& t, const Explanation& e) {
  if (!t.store || t.store->size() == 0 || t.retrieval_k == 0) return {};
  return t.store->query(retrieval_query(e, t.glossary), t.retrieval_k);
}

}  // namespace

MetricBlockReport run_metric_block(const EvalTarget& target, std::size_t n, const EvalOptions& opt) {
  check_target(target);
  const auto cfg = seeded(opt);
  const auto pool = sample_instances(*target.test, *target.full, n, opt.seed);

  MetricBlockReport r;
  r.dataset = target.dataset_id;
  r.pool = pool.source;
  r.requested = n;
  r.seed = opt.seed;
  r.configs = {{"explainer", cfg.explainer.to_json()},
               {"metrics", cfg.metrics.to_json()},
               {"weights", opt.weights.to_json()},
               {"rows", pool.rows}};
  r.reference = reference_cells("metrics", target.dataset_id);

  std::vector<std::optional<InstanceEvaluation>> results(pool.instances.size());
  std::vector<std::string> errors(pool.instances.size());
  for_each_index(pool.instances.size(), opt.concurrency, [&](std::size_t i) {
    try {
      results[i] = evaluate_instance(*target.predictor, pool.instances[i], *target.context,
                                     cfg.explainer, cfg.metrics, opt.weights, opt.methods);
    } catch (const std::exception& e) {
      errors[i] = describe(e);
    }
  });

  std::map<Method, std::map<std::string, std::vector<double>>> values;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i]) {
      ++r.skipped;
      r.skip_log.push_back(fmt::format("row {}: {}", pool.rows[i], errors[i]));
      continue;
    }
    for (const auto& b : results[i]->bundles) {
      auto& v = values[b.method];
      if (b.infidelity) v["infidelity"].push_back(*b.infidelity);
      if (b.lipschitz) v["lipschitz"].push_back(*b.lipschitz);
      if (b.effective_complexity)
        v["effective_complexity"].push_back(static_cast<double>(*b.effective_complexity));
    }
    if (results[i]->selection) ++r.chosen[results[i]->selection->chosen];
  }
  for (auto m : opt.methods) {
    auto& row = r.cells[m];
    for (const char* metric : kMetricNames) {
      const auto& v = values[m][metric];
      if (v.empty() && m == Method::kAnchor && std::string(metric) == "infidelity")
        row[metric] = std::nullopt;
      else
        row[metric] = summarize(v);
    }
    r.chosen.try_emplace(m, 0);
  }
  return r;
}

TokenBlockReport run_token_block(const EvalTarget& target, std::size_t n, const EvalOptions& opt,
                                 const LlmClient& client) {
  check_target(target);
  const auto cfg = seeded(opt);
  const auto pool = sample_instances(*target.test, *target.full, n, opt.seed);

  TokenBlockReport r;
  r.dataset = target.dataset_id;
  r.pool = pool.source;
  r.requested = n;
  r.seed = opt.seed;
  r.model = client.model_id();
  r.reference = reference_cells("tokens", target.dataset_id);

  std::vector<Profile> profiles;
  for (auto k : opt.profiles) profiles.push_back(Profile::builtin(k, target.glossary));

  struct Sample {
    Method method;
    ProfileKind profile;
    std::optional<TokenUsage> usage;
    std::string error;
  };
  std::vector<std::vector<Sample>> per_instance(pool.instances.size());
  for_each_index(pool.instances.size(), opt.concurrency, [&](std::size_t i) {
    const auto& x = pool.instances[i];
    const auto proba = target.predictor->predict_proba(x.values());
    for (auto m : opt.methods) {
      std::optional<Explanation> e;
      std::string err;
      try {
        e = explain(*target.predictor, x, m, *target.context, cfg.explainer);
      } catch (const std::exception& ex) {
        err = describe(ex);
      }
      for (const auto& prof : profiles) {
        Sample s{m, prof.kind, std::nullopt, err};
        if (e) {
          try {
            const auto prompt = build_prompt(prof, x, proba, std::nullopt, *e, retrieve(target, *e));
            s.usage = generate_narrative(client, prompt).usage;
          } catch (const std::exception& ex) {
            s.error = describe(ex);
          }
        }
        per_instance[i].push_back(std::move(s));
      }
    }
  });

  std::map<Method, std::map<ProfileKind, std::array<std::vector<double>, 3>>> values;
  std::map<Method, std::map<ProfileKind, std::size_t>> estimated;
  for (std::size_t i = 0; i < per_instance.size(); ++i) {
    bool any_failed = false;
    for (const auto& s : per_instance[i]) {
      if (!s.usage) {
        any_failed = true;
        r.skip_log.push_back(fmt::format("row {} {}/{}: {}", pool.rows[i], to_string(s.method),
                                         to_string(s.profile), s.error));
        continue;
      }
      auto& v = values[s.method][s.profile];
      v[0].push_back(static_cast<double>(s.usage->total()));
      v[1].push_back(static_cast<double>(s.usage->input));
      v[2].push_back(static_cast<double>(s.usage->output));
      if (s.usage->source == UsageSource::kEstimated) ++estimated[s.method][s.profile];
    }
    if (any_failed) ++r.skipped;
  }
  for (auto m : opt.methods)
    for (auto p : opt.profiles) {
      auto& v = values[m][p];
      TokenCell c;
      c.total = summarize(v[0]);
      c.input = summarize(v[1]);
      c.output = summarize(v[2]);
      c.cv = c.total.mean > 0.0 ? c.total.std / c.total.mean : 0.0;
      c.estimated = estimated[m][p];
      c.partial = c.total.n < n;
      r.cells[m][p] = c;
    }
  return r;
}

SatisfactionReport run_satisfaction_block(const EvalTarget& target, std::size_t n,
                                          const EvalOptions& opt, const LlmClient& narrator,
                                          const LlmClient& judge) {
  check_target(target);
  const auto cfg = seeded(opt);
  const auto pool = sample_instances(*target.test, *target.full, n, opt.seed);

  SatisfactionReport r;
  r.dataset = target.dataset_id;
  r.pool = pool.source;
  r.requested = n;
  r.seed = opt.seed;
  r.judge_model = judge.model_id();
  r.items = builtin_questionnaire();
  r.reference = reference_cells("satisfaction", target.dataset_id);

  std::vector<Profile> profiles;
  for (auto k : opt.profiles) profiles.push_back(Profile::builtin(k, target.glossary));

  std::vector<std::vector<JudgeRecord>> records(pool.instances.size());
  std::vector<std::vector<std::string>> logs(pool.instances.size());
  for_each_index(pool.instances.size(), opt.concurrency, [&](std::size_t i) {
    const auto& x = pool.instances[i];
    const auto proba = target.predictor->predict_proba(x.values());
    for (auto m : opt.methods) {
      std::optional<Explanation> e;
      try {
        e = explain(*target.predictor, x, m, *target.context, cfg.explainer);
      } catch (const std::exception& ex) {
        logs[i].push_back(fmt::format("row {} {}: {}", pool.rows[i], to_string(m), describe(ex)));
        continue;
      }
      for (const auto& prof : profiles) {
        Narrative nar;
        try {
          const auto prompt = build_prompt(prof, x, proba, std::nullopt, *e, retrieve(target, *e));
          nar = generate_narrative(narrator, prompt);
        } catch (const std::exception& ex) {
          logs[i].push_back(fmt::format("row {} {}/{}: narrator: {}", pool.rows[i], to_string(m),
                                        to_string(prof.kind), describe(ex)));
          continue;
        }
        JudgeRecord rec{m, prof.kind, std::nullopt};
        const auto msgs = judge_messages(nar.text, r.items);
        for (int attempt = 0; attempt < 2 && !rec.scores; ++attempt) {
          try {
            rec.scores = parse_judge_reply(judge.complete(msgs).content);
          } catch (const std::exception& ex) {
            logs[i].push_back(fmt::format("row {} {}/{}: judge: {}", pool.rows[i], to_string(m),
                                          to_string(prof.kind), describe(ex)));
          }
        }
        records[i].push_back(rec);
      }
    }
  });

  std::vector<JudgeRecord> all;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!logs[i].empty()) ++r.skipped;
    r.skip_log.insert(r.skip_log.end(), logs[i].begin(), logs[i].end());
    all.insert(all.end(), records[i].begin(), records[i].end());
  }
  aggregate_satisfaction(all, r);
  return r;
}

}  // namespace pxai
