#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "pxai/metrics.hpp"
#include "support.hpp"

using namespace pxai;
using testing::error_kind;

namespace {

AttributionExplanation attribution(std::vector<double> w, int target = 1) {
  AttributionExplanation e;
  e.method = Method::kLime;
  e.target_class = target;
  e.weights = std::move(w);
  for (std::size_t j = 0; j < e.weights.size(); ++j) {
    e.feature_names.push_back("x" + std::to_string(j));
    e.feature_values.push_back("0");
  }
  return e;
}

Instance at(const Dataset& d, std::vector<double> v) {
  return Instance(d.schema_ptr(), Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
}

MetricBundle bundle(Method m, std::optional<double> inf, double lip, std::size_t ec) {
  MetricBundle b;
  b.method = m;
  b.infidelity = inf;
  b.lipschitz = lip;
  b.effective_complexity = ec;
  return b;
}

// Direct scan: for each k build the masked row on its own and query the model.
std::size_t k_scan(const Predictor& p, const Vector& x, const Vector& ref,
                   const std::vector<std::size_t>& ranking, double tol) {
  const int c = p.predict(x);
  const double px = p.predict_proba(x)[c];
  for (std::size_t k = 0; k <= ranking.size(); ++k) {
    Vector z = ref;
    for (std::size_t r = 0; r < k; ++r) z[static_cast<Eigen::Index>(ranking[r])] = x[static_cast<Eigen::Index>(ranking[r])];
    if (p.predict(z) == c && std::abs(p.predict_proba(z)[c] - px) <= tol) return k;
  }
  return ranking.size();
}

}  // namespace

TEST_SUITE("infidelity") {
  TEST_CASE("exact standardized gradient of an affine predictor has zero infidelity") {
    const auto data = testing::uniform_dataset(3, 200, 1, -1.0, 3.0);
    const Vector scale = data.scale();
    const Vector a = (Vector(3) << 0.02, -0.01, 0.03).finished();
    const auto p = FunctionPredictor::binary(3, [a](const Vector& x) { return 0.5 + a.dot(x); });
    const Vector g = a.cwiseProduct(scale);
    const auto e = attribution({g[0], g[1], g[2]});
    for (double s : {0.1, 0.5, 2.0})
      for (std::size_t n : {1, 10, 1000}) {
        const double v = infidelity(e, *p, at(data, {0.2, 0.4, -0.3}), scale, InfidelityConfig{s, n, 3});
        CHECK(v <= 1e-10);
      }
  }

  TEST_CASE("zero weights reduce to the mean squared output change") {
    const auto data = testing::uniform_dataset(2, 100, 2);
    const Vector scale = data.scale();
    const auto p = FunctionPredictor::binary(2, [](const Vector& x) { return 1.0 / (1.0 + std::exp(-4.0 * x[0])); });
    const auto x = at(data, {0.1, 0.1});
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 0.5);
    Matrix pert(200, 2);
    for (auto& v : pert.reshaped()) v = g(rng);
    const double v = infidelity(attribution({0.0, 0.0}), *p, x, scale, pert);
    double expect = 0.0;
    for (Eigen::Index k = 0; k < pert.rows(); ++k) {
      const Vector z = x.values() - pert.row(k).transpose().cwiseProduct(scale);
      const double d = p->predict_proba(x.values())[1] - p->predict_proba(z)[1];
      expect += d * d;
    }
    expect /= 200.0;
    CHECK(v > 0.0);
    CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("four fixed perturbations match the hand-computed average") {
    // f = x0 * x1 on unit scale; x = (1, 2); weights (1, 1).
    const auto data = testing::uniform_dataset(2, 10, 3);
    const auto p = std::make_shared<FunctionPredictor>(2, 2, [](const Vector& x) {
      Vector out(2);
      out << 1.0 - x[0] * x[1], x[0] * x[1];
      return out;
    });
    Matrix pert(4, 2);
    pert << 1, 0, 0, 1, 1, 1, -1, 2;
    // f(x) = 2. f(x - I): (0,2)->0, (1,1)->1, (0,1)->0, (2,0)->0.
    // residuals I.w - (2 - f): 1-2=-1, 1-1=0, 2-2=0, 1-2=-1 -> mean of squares 0.5
    const double v = infidelity(attribution({1.0, 1.0}), *p, at(data, {1.0, 2.0}), Vector::Ones(2), pert);
    CHECK(v == 0.5);
  }

  TEST_CASE("order of samples does not matter") {
    const auto& h = testing::heart_mlp();
    const auto x = h.test.instance(0);
    const auto e = lime_tabular(*h.model, x, h.train.stats(), {}, 1);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 0.5);
    Matrix pert(300, 13);
    for (auto& v : pert.reshaped()) v = g(rng);
    const double a = infidelity(e, *h.model, x, h.train.scale(), pert);
    std::vector<Eigen::Index> perm(300);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(300, 13);
    for (Eigen::Index i = 0; i < 300; ++i) shuffled.row(i) = pert.row(perm[static_cast<std::size_t>(i)]);
    CHECK(infidelity(e, *h.model, x, h.train.scale(), shuffled) == a);
  }

  TEST_CASE("rules have no infidelity") {
    const auto& h = testing::heart_mlp();
    const auto disc = fit_discretizer(h.train);
    const Explanation r = anchor_explain(*h.model, h.test.instance(0), disc, h.train, {});
    CHECK_FALSE(infidelity(r, *h.model, h.test.instance(0), h.train.scale(), {}).has_value());
  }
}

TEST_SUITE("lipschitz") {
  TEST_CASE("constant explainer scores 0") {
    const auto data = testing::uniform_dataset(3, 20, 1);
    const ExplainFn phi = [](const Instance&) { return Vector::Ones(3).eval(); };
    CHECK(local_lipschitz(phi, data.instance(0), data.scale(), {}) == 0.0);
  }

  TEST_CASE("linear explainer along axes gives the largest column norm") {
    const auto data = testing::uniform_dataset(3, 20, 1);
    Matrix a(2, 3);
    a << 1, 0, 3, 2, -1, 4;
    const ExplainFn phi = [a](const Instance& x) { return (a * x.values()).eval(); };
    LipschitzConfig cfg;
    cfg.axes = true;
    cfg.samples = 6;
    const double v = local_lipschitz(phi, data.instance(0), Vector::Ones(3), cfg);
    CHECK(v == doctest::Approx(5.0).epsilon(1e-9));  // column 3: (3, 4)
  }

  TEST_CASE("nested sampling is monotone in the sample count") {
    const auto& h = testing::heart_mlp();
    const ExplainFn phi = [&](const Instance& x) { return h.model->predict_proba(x.values()); };
    double prev = 0.0;
    for (std::size_t n : {1, 2, 5, 10, 20, 40}) {
      LipschitzConfig cfg;
      cfg.samples = n;
      cfg.seed = 4;
      const double v = local_lipschitz(phi, h.test.instance(3), h.train.scale(), cfg);
      CHECK(v >= prev);
      prev = v;
    }
  }

  TEST_CASE("all-categorical inputs cannot be perturbed") {
    auto schema = std::make_shared<const FeatureSchema>(
        std::vector<FeatureSpec>{{"c", FeatureKind::kCategorical, {"a", "b"}}}, "y",
        std::vector<std::string>{"0", "1"});
    Matrix rows(2, 1);
    rows << 0, 1;
    const Dataset d(schema, rows, {0, 1});
    const ExplainFn phi = [](const Instance& x) { return x.values(); };
    CHECK(error_kind([&] { local_lipschitz(phi, d.instance(0), d.scale(), {}); }) ==
          ErrorKind::kNumericDegeneracy);
  }
}

TEST_SUITE("effective complexity") {
  TEST_CASE("constant predictor needs no features") {
    const auto data = testing::uniform_dataset(4, 50, 2);
    const auto p = FunctionPredictor::binary(4, [](const Vector&) { return 0.9; });
    CHECK(effective_complexity(*p, data.instance(0), data.reference_point(), {0, 1, 2, 3}, 0.1) == 0);
  }

  TEST_CASE("single relevant feature ranked first gives 1") {
    const auto data = testing::uniform_dataset(4, 50, 2);
    const auto p = FunctionPredictor::binary(4, [](const Vector& x) { return 1.0 / (1.0 + std::exp(-10.0 * x[2])); });
    const auto x = at(data, {0.3, -0.5, 0.8, 0.1});
    const Vector ref = Vector::Zero(4);
    CHECK(effective_complexity(*p, x, ref, {2, 0, 1, 3}, 0.1) == 1);
    CHECK(k_scan(*p, x.values(), ref, {2, 0, 1, 3}, 0.1) == 1);
    CHECK(effective_complexity(*p, x, ref, {0, 1, 3, 2}, 0.1) == 4);
  }

  TEST_CASE("matches the brute-force k-scan on random cases") {
    std::mt19937_64 rng(12);
    for (std::size_t m = 1; m <= 8; ++m)
      for (int trial = 0; trial < 10; ++trial) {
        const auto data = testing::uniform_dataset(m, 30, rng());
        std::normal_distribution<double> g(0.0, 2.0);
        Vector a(static_cast<Eigen::Index>(m));
        for (auto& v : a) v = g(rng);
        const auto p = FunctionPredictor::binary(m, [a](const Vector& x) { return 1.0 / (1.0 + std::exp(-a.dot(x))); });
        std::vector<std::size_t> ranking(m);
        std::iota(ranking.begin(), ranking.end(), 0);
        std::shuffle(ranking.begin(), ranking.end(), rng);
        const auto x = data.instance(0);
        const Vector ref = data.reference_point();
        const double tol = trial % 2 ? 0.05 : 0.1;
        CHECK(effective_complexity(*p, x, ref, ranking, tol) == k_scan(*p, x.values(), ref, ranking, tol));
      }
  }

  TEST_CASE("ranking: |weight| for attributions, rule first then association for anchors") {
    const Explanation a = attribution({0.1, -0.5, 0.0, 0.3});
    CHECK(complexity_ranking(a, {}) == std::vector<std::size_t>{1, 3, 0, 2});
    RuleExplanation r;
    r.feature_names = {"a", "b", "c", "d"};
    r.feature_values = {"", "", "", ""};
    r.predicates = {{2, 0, "c"}, {0, 1, "a"}};
    CHECK(complexity_ranking(Explanation(r), {0.5, 0.1, 0.9, 0.3}) == std::vector<std::size_t>{2, 0, 3, 1});
  }
}

TEST_SUITE("selector") {
  TEST_CASE("a dominating method wins") {
    const auto s = select_explainer({bundle(Method::kShap, 0.5, 2.0, 8), bundle(Method::kLime, 0.1, 0.5, 4),
                                     bundle(Method::kAnchor, std::nullopt, 1.0, 5)},
                                    {});
    CHECK(s.chosen == Method::kLime);
  }

  TEST_CASE("hand-worked rank table with fidelity-only weights") {
    // Ranks -> infidelity: shap 1, lime 2; lipschitz: lime 1, anchor 2, shap 3;
    // complexity: anchor 1, lime 2, shap 3.
    // Weights (1,0,0): lime 2, shap 1, anchor has only zero-weight metrics ->
    // equal weights over lipschitz and complexity = (2 + 1) / 2 = 1.5.
    const std::vector<MetricBundle> b{bundle(Method::kLime, 0.3, 0.5, 5), bundle(Method::kShap, 0.2, 1.8, 8),
                                      bundle(Method::kAnchor, std::nullopt, 0.9, 3)};
    const auto s = select_explainer(b, {1.0, 0.0, 0.0});
    CHECK(s.scores.at(Method::kLime) == 2.0);
    CHECK(s.scores.at(Method::kShap) == 1.0);
    CHECK(s.scores.at(Method::kAnchor) == 1.5);
    CHECK(s.chosen == Method::kShap);

    // Default weights: lime (0.4*2 + 0.3*1 + 0.3*2) = 1.7; shap 0.4 + 0.9 + 0.9 = 2.2;
    // anchor (0.3*2 + 0.3*1) / 0.6 = 1.5.
    const auto d = select_explainer(b, {});
    CHECK(d.scores.at(Method::kLime) == doctest::Approx(1.7));
    CHECK(d.scores.at(Method::kShap) == doctest::Approx(2.2));
    CHECK(d.scores.at(Method::kAnchor) == doctest::Approx(1.5));
    CHECK(d.chosen == Method::kAnchor);
  }

  TEST_CASE("identical bundles fall back to the fixed order") {
    const auto s = select_explainer({bundle(Method::kShap, 0.2, 1.0, 4), bundle(Method::kLime, 0.2, 1.0, 4)}, {});
    CHECK(s.chosen == Method::kLime);
    // Equal composites, lower infidelity first.
    const auto t = select_explainer({bundle(Method::kLime, 0.3, 1.0, 4), bundle(Method::kShap, 0.2, 2.0, 3)},
                                    {0.0, 1.0, 1.0});
    CHECK(t.scores.at(Method::kLime) == t.scores.at(Method::kShap));
    CHECK(t.chosen == Method::kShap);
  }

  TEST_CASE("argmin is invariant to a monotone transform of one column") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<MetricBundle> b{bundle(Method::kLime, u(rng), u(rng), rng() % 13),
                                  bundle(Method::kShap, u(rng), u(rng), rng() % 13),
                                  bundle(Method::kAnchor, std::nullopt, u(rng), rng() % 13)};
      const auto base = select_explainer(b, {}).chosen;
      for (auto& x : b) x.lipschitz = std::exp(3.0 * *x.lipschitz) - 7.0;
      CHECK(select_explainer(b, {}).chosen == base);
    }
  }

  TEST_CASE("errors") {
    MetricBundle empty_a, empty_b;
    empty_b.method = Method::kShap;
    CHECK(error_kind([&] { select_explainer({empty_a, empty_b}, {}); }) == ErrorKind::kSelection);
    CHECK(error_kind([&] { select_explainer({bundle(Method::kLime, 0.1, 1, 1)}, {}); }) == ErrorKind::kValidation);
    CHECK(error_kind([&] {
            select_explainer({bundle(Method::kLime, 0.1, 1, 1), bundle(Method::kShap, 0.1, 1, 1)}, {0, 0, 0});
          }) == ErrorKind::kValidation);
  }

  TEST_CASE("not-applicable serializes as null with a reason") {
    const auto j = bundle(Method::kAnchor, std::nullopt, 0.5, 3).to_json();
    CHECK(j.at("infidelity").is_null());
    CHECK(j.at("not_applicable").contains("infidelity"));
    CHECK(MetricBundle::from_json(j).to_json() == j);
  }
}

TEST_CASE("evaluate_instance produces consistent bundles and a selection") {
  const auto& h = testing::heart_mlp();
  ExplainerConfig ecfg;
  ecfg.lime.samples = 1000;
  ecfg.shap.coalition_samples = 256;
  MetricConfig mcfg;
  mcfg.lipschitz.samples = 3;
  mcfg.infidelity.samples = 200;
  const auto ctx = ExplainContext::build(std::make_shared<Dataset>(h.train), ecfg);
  const auto ev = evaluate_instance(*h.model, h.test.instance(4), ctx, ecfg, mcfg, {});
  REQUIRE(ev.bundles.size() == 3);
  for (const auto& b : ev.bundles) {
    CHECK(b.infidelity.has_value() == (b.method != Method::kAnchor));
    CHECK(*b.lipschitz >= 0.0);
    CHECK(*b.effective_complexity <= 13);
  }
  REQUIRE(ev.selection);
  const auto best = std::min_element(ev.selection->scores.begin(), ev.selection->scores.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
  CHECK(ev.selection->scores.at(ev.selection->chosen) == best->second);
  const auto again = evaluate_instance(*h.model, h.test.instance(4), ctx, ecfg, mcfg, {});
  CHECK(again.selection->to_json() == ev.selection->to_json());
}
