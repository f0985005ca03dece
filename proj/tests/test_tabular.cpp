#include <random>
#include <sstream>

#include "doctest.h"
#include "pxai/errors.hpp"
#include "support.hpp"

using namespace pxai;

namespace {

FeatureSchema tiny_schema() {
  return FeatureSchema({{"num", FeatureKind::kContinuous, {}}, {"cat", FeatureKind::kCategorical, {}}},
                       "label", {});
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected pxai::Error");
  return ErrorKind::kValidation;
}

}  // namespace

TEST_CASE("heart disease csv loads with 13 features and 2 classes") {
  const auto ds = testing::heart();
  CHECK(ds.feature_count() == 13);
  CHECK(ds.schema().class_count() == 2);
  CHECK(ds.size() == 301);
  for (const auto& st : ds.stats()) {
    CHECK(st.std >= 0.0);
    for (std::size_t k = 1; k < st.deciles.size(); ++k) CHECK(st.deciles[k] >= st.deciles[k - 1]);
  }
}

TEST_CASE("thyroid csv discovers undeclared categories in order of first appearance") {
  const auto ds = testing::thyroid();
  CHECK(ds.feature_count() == 16);
  const auto j = *ds.schema().index_of("Thyroid Function");
  CHECK(ds.schema().feature(j).categories.front() == "Euthyroid");
}

TEST_CASE("empty file is an empty-dataset error") {
  std::istringstream empty("");
  CHECK(kind_of([&] { load_csv_dataset(empty, tiny_schema()); }) == ErrorKind::kEmptyDataset);
  std::istringstream header_only("num,cat,label\n");
  CHECK(kind_of([&] { load_csv_dataset(header_only, tiny_schema()); }) == ErrorKind::kEmptyDataset);
}

TEST_CASE("three-row csv: categorical codes and hand-computed stats") {
  std::istringstream in("label,cat,num\nyes,a,1\nno,b,2\nyes,a,6\n");
  const auto ds = load_csv_dataset(in, tiny_schema());
  CHECK(ds.schema().feature(1).categories == std::vector<std::string>{"a", "b"});
  CHECK(ds.rows()(0, 1) == 0.0);
  CHECK(ds.rows()(1, 1) == 1.0);
  CHECK(ds.rows()(2, 1) == 0.0);
  // mean(1,2,6) = 3, population var = (4 + 1 + 9) / 3
  CHECK(ds.stats()[0].mean == doctest::Approx(3.0));
  CHECK(ds.stats()[0].std == doctest::Approx(std::sqrt(14.0 / 3.0)));
  CHECK(ds.stats()[1].mean == doctest::Approx(1.0 / 3.0));
  CHECK(ds.stats()[1].mode == 0);
  CHECK(ds.schema().class_names() == std::vector<std::string>{"yes", "no"});
  CHECK(ds.labels() == std::vector<int>{0, 1, 0});
}

TEST_CASE("categorical encode/decode round-trips") {
  const auto ds = testing::thyroid();
  const auto& schema = ds.schema();
  for (std::size_t j = 0; j < schema.feature_count(); ++j) {
    if (!schema.feature(j).categorical()) continue;
    for (const auto& cat : schema.feature(j).categories)
      CHECK(schema.decode_category(j, *schema.encode_category(j, cat)) == cat);
  }
}

TEST_CASE("load errors carry kind and line number") {
  std::istringstream missing("num,label\n1,yes\n");
  CHECK(kind_of([&] { load_csv_dataset(missing, tiny_schema()); }) == ErrorKind::kSchemaMismatch);

  std::istringstream bad("num,cat,label\n1,a,yes\nabc,b,no\n");
  try {
    load_csv_dataset(bad, tiny_schema(), "bad.csv");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
  }

  std::istringstream blank("num,cat,label\n1,,yes\n");
  CHECK(kind_of([&] { load_csv_dataset(blank, tiny_schema()); }) == ErrorKind::kParse);
}

TEST_CASE("split is deterministic, disjoint, exhaustive and stratified") {
  const auto ds = testing::uniform_dataset(3, 100, 1);
  const auto a = split_indices(ds, 0.2, 7);
  const auto b = split_indices(ds, 0.2, 7);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 80);
  CHECK(a.test.size() == 20);
  std::vector<bool> seen(100, false);
  for (auto i : a.train) seen[i] = true;
  for (auto i : a.test) {
    CHECK_FALSE(seen[i]);
    seen[i] = true;
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool s) { return s; }));

  int positives = 0;
  for (auto i : a.test) positives += ds.labels()[i];
  CHECK(std::abs(positives - 10) <= 1);

  CHECK(kind_of([&] { split_indices(ds, 1.5, 7); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { split_indices(ds, 0.0, 7); }) == ErrorKind::kConfig);
  CHECK(split_indices(ds, 0.2, 8).test != a.test);
}

TEST_CASE("quartile edges of 1..100 sit at the 25/50/75 percentiles") {
  Matrix rows(100, 1);
  for (int i = 0; i < 100; ++i) rows(i, 0) = i + 1;
  const Dataset ds(testing::continuous_schema(1), rows, std::vector<int>(100, 0));
  const auto disc = fit_discretizer(ds, 4);
  // numpy.percentile(arange(1, 101), [25, 50, 75])
  REQUIRE(disc.bins(0).edges.size() == 3);
  CHECK(disc.bins(0).edges[0] == doctest::Approx(25.75));
  CHECK(disc.bins(0).edges[1] == doctest::Approx(50.5));
  CHECK(disc.bins(0).edges[2] == doctest::Approx(75.25));
  CHECK_FALSE(disc.bins(0).degenerate);
}

TEST_CASE("constant feature collapses to one degenerate bin; categoricals pass through") {
  std::istringstream in("num,cat,label\n5,a,y\n5,b,n\n5,c,y\n5,a,n\n");
  const auto ds = load_csv_dataset(in, tiny_schema());
  const auto disc = fit_discretizer(ds, 4);
  CHECK(disc.bins(0).bin_count() == 1);
  CHECK(disc.bins(0).degenerate);
  CHECK(disc.bins(1).categorical);
  CHECK(disc.bins(1).bin_count() == 3);
  CHECK(disc.bin_of(1, 2.0) == 2);
  CHECK(disc.bin_of(0, -100.0) == 0);
  CHECK(disc.bin_of(0, 100.0) == 0);
  CHECK(kind_of([&] { fit_discretizer(ds, 1); }) == ErrorKind::kConfig);
}

TEST_CASE("discretize: clamp, tie rule and linear-scan oracle") {
  const auto ds = testing::heart();
  const auto disc = fit_discretizer(ds, 4);
  const auto age = *ds.schema().index_of("age");
  const auto& edges = disc.bins(age).edges;
  REQUIRE(!edges.empty());
  CHECK(disc.bin_of(age, edges.front() - 1000.0) == 0);
  CHECK(disc.bin_of(age, edges.back() + 1000.0) == static_cast<int>(edges.size()));
  for (std::size_t k = 0; k < edges.size(); ++k) CHECK(disc.bin_of(age, edges[k]) == static_cast<int>(k));

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto row = static_cast<std::size_t>(rng() % ds.size());
    Vector v = ds.rows().row(static_cast<Eigen::Index>(row)).transpose();
    std::normal_distribution<double> jitter(0.0, 5.0);
    for (auto j : ds.schema().continuous_features()) v[static_cast<Eigen::Index>(j)] += jitter(rng);
    const auto bins = disc.discretize(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
    for (std::size_t j = 0; j < ds.feature_count(); ++j) {
      const auto& b = disc.bins(j);
      int expected = 0;
      if (b.categorical) {
        expected = static_cast<int>(v[static_cast<Eigen::Index>(j)]);
      } else {
        while (expected < static_cast<int>(b.edges.size()) &&
               v[static_cast<Eigen::Index>(j)] > b.edges[static_cast<std::size_t>(expected)])
          ++expected;
      }
      CHECK(bins[j] == expected);
    }
  }
}

TEST_CASE("every dataset row discretizes in range; edges are observed quantiles") {
  for (const auto& ds : {testing::heart(), testing::thyroid()}) {
    const auto disc = fit_discretizer(ds, 4);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto bins = disc.discretize(ds.instance(i));
      for (std::size_t j = 0; j < bins.size(); ++j) {
        CHECK(bins[j] >= 0);
        CHECK(bins[j] < disc.bins(j).bin_count());
      }
    }
    for (auto j : ds.schema().continuous_features()) {
      std::vector<double> col(ds.size());
      for (std::size_t i = 0; i < ds.size(); ++i)
        col[i] = ds.rows()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      std::sort(col.begin(), col.end());
      std::vector<double> quartiles{quantile_sorted(col, 0.25), quantile_sorted(col, 0.5),
                                    quantile_sorted(col, 0.75)};
      const auto& edges = disc.bins(j).edges;
      for (std::size_t k = 0; k < edges.size(); ++k) {
        CHECK(std::find(quartiles.begin(), quartiles.end(), edges[k]) != quartiles.end());
        if (k > 0) CHECK(edges[k] > edges[k - 1]);
      }
    }
  }
}

TEST_CASE("schema invariants are enforced") {
  CHECK(kind_of([] {
          FeatureSchema({{"a", FeatureKind::kContinuous, {}}, {"a", FeatureKind::kContinuous, {}}},
                        "y", {"0", "1"});
        }) == ErrorKind::kSchemaMismatch);
  CHECK(kind_of([] { FeatureSchema({{"", FeatureKind::kContinuous, {}}}, "y", {"0", "1"}); }) ==
        ErrorKind::kSchemaMismatch);
  const FeatureSchema one_cat({{"c", FeatureKind::kCategorical, {"only"}}}, "y", {"0", "1"});
  CHECK(kind_of([&] { one_cat.validate_complete(); }) == ErrorKind::kSchemaMismatch);
  const FeatureSchema one_class({{"c", FeatureKind::kContinuous, {}}}, "y", {"0"});
  CHECK(kind_of([&] { one_class.validate_complete(); }) == ErrorKind::kSchemaMismatch);
  const auto heart = testing::heart();
  CHECK(FeatureSchema::from_json(heart.schema().to_json()) == heart.schema());
}

TEST_CASE("instance validation rejects bad category codes and wrong length") {
  const auto ds = testing::heart();
  Vector v = ds.instance(0).values();
  v[*ds.schema().index_of("thal")] = 7.0;
  CHECK(kind_of([&] { Instance(ds.schema_ptr(), v); }) == ErrorKind::kValidation);
  CHECK(kind_of([&] { Instance(ds.schema_ptr(), Vector::Zero(3)); }) == ErrorKind::kValidation);
}

TEST_CASE("mutual-information association is nonnegative and ranks an informative feature") {
  Matrix rows(200, 2);
  std::vector<int> labels(200);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    rows(i, 0) = u(rng);
    rows(i, 1) = u(rng);
    labels[static_cast<std::size_t>(i)] = rows(i, 0) > 0.5 ? 1 : 0;
  }
  const Dataset ds(testing::continuous_schema(2), rows, labels);
  const auto mi = feature_label_association(ds, fit_discretizer(ds, 4));
  CHECK(mi[0] > mi[1]);
  CHECK(mi[1] >= 0.0);
}
