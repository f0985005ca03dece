#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/predictors.hpp"
#include "pxai/seeding.hpp"

namespace pxai {
namespace {

double gini(const std::vector<double>& counts, double total) {
  if (total <= 0.0) return 0.0;
  double s = 1.0;
  for (double c : counts) s -= (c / total) * (c / total);
  return s;
}

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, int max_depth, Rng& rng)
      : data_(data),
        max_depth_(max_depth),
        classes_(data.schema().class_count()),
        rng_(rng) {
    const auto m = data.feature_count();
    mtry_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(m)))));
  }

  DecisionTree build(std::vector<std::size_t> sample) {
    grow(std::move(sample), 0);
    return std::move(tree_);
  }

 private:
  struct Split {
    int feature = -1;
    bool categorical = false;
    double threshold = 0.0;
    double impurity = 0.0;
  };

  double value(std::size_t row, std::size_t feature) const {
    return data_.rows()(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(feature));
  }

  int grow(std::vector<std::size_t> sample, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();

    std::vector<double> counts(classes_, 0.0);
    for (auto r : sample) counts[static_cast<std::size_t>(data_.labels()[r])] += 1.0;
    tree_.nodes[static_cast<std::size_t>(id)].leaf_class =
        static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    const double total = static_cast<double>(sample.size());
    const double parent = gini(counts, total);
    if (depth >= max_depth_ || sample.size() < 2 || parent <= 0.0) return id;

    const auto split = best_split(sample, parent);
    if (split.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto r : sample) {
      const double v = value(r, static_cast<std::size_t>(split.feature));
      const bool go_left = split.categorical ? v == split.threshold : v <= split.threshold;
      (go_left ? left : right).push_back(r);
    }
    sample.clear();
    sample.shrink_to_fit();
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.categorical_split = split.categorical;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  Split best_split(const std::vector<std::size_t>& sample, double parent) {
    const auto m = data_.feature_count();
    std::vector<std::size_t> features(m);
    std::iota(features.begin(), features.end(), 0);
    for (std::size_t i = 0; i < mtry_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, m - 1);
      std::swap(features[i], features[pick(rng_)]);
    }
    Split best;
    best.impurity = parent - 1e-12;
    const double total = static_cast<double>(sample.size());
    for (std::size_t fi = 0; fi < mtry_; ++fi) {
      const auto f = features[fi];
      if (data_.schema().feature(f).categorical()) {
        const auto cats = data_.schema().feature(f).categories.size();
        std::vector<double> in(cats * classes_, 0.0), in_total(cats, 0.0), all(classes_, 0.0);
        for (auto r : sample) {
          const auto c = static_cast<std::size_t>(value(r, f));
          const auto y = static_cast<std::size_t>(data_.labels()[r]);
          in[c * classes_ + y] += 1.0;
          in_total[c] += 1.0;
          all[y] += 1.0;
        }
        for (std::size_t c = 0; c < cats; ++c) {
          if (in_total[c] == 0.0 || in_total[c] == total) continue;
          std::vector<double> left(in.begin() + static_cast<std::ptrdiff_t>(c * classes_),
                                   in.begin() + static_cast<std::ptrdiff_t>((c + 1) * classes_));
          std::vector<double> right(classes_);
          for (std::size_t y = 0; y < classes_; ++y) right[y] = all[y] - left[y];
          const double nl = in_total[c], nr = total - nl;
          const double imp = (nl * gini(left, nl) + nr * gini(right, nr)) / total;
          if (imp < best.impurity) best = {static_cast<int>(f), true, static_cast<double>(c), imp};
        }
      } else {
        std::vector<std::pair<double, int>> vals;
        vals.reserve(sample.size());
        for (auto r : sample) vals.emplace_back(value(r, f), data_.labels()[r]);
        std::sort(vals.begin(), vals.end());
        std::vector<double> left(classes_, 0.0), right(classes_, 0.0);
        for (const auto& [v, y] : vals) right[static_cast<std::size_t>(y)] += 1.0;
        for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
          const auto y = static_cast<std::size_t>(vals[i].second);
          left[y] += 1.0;
          right[y] -= 1.0;
          if (vals[i].first == vals[i + 1].first) continue;
          const double nl = static_cast<double>(i + 1), nr = total - nl;
          const double imp = (nl * gini(left, nl) + nr * gini(right, nr)) / total;
          if (imp < best.impurity)
            best = {static_cast<int>(f), false, 0.5 * (vals[i].first + vals[i + 1].first), imp};
        }
      }
    }
    return best;
  }

  const Dataset& data_;
  int max_depth_;
  std::size_t classes_;
  std::size_t mtry_ = 1;
  Rng& rng_;
  DecisionTree tree_;
};

}  // namespace

int DecisionTree::predict(const double* row) const {
  int id = 0;
  for (;;) {
    const auto& node = nodes[static_cast<std::size_t>(id)];
    if (node.feature < 0) return node.leaf_class;
    const double v = row[node.feature];
    const bool go_left = node.categorical_split ? std::lround(v) == std::lround(node.threshold)
                                                : v <= node.threshold;
    id = go_left ? node.left : node.right;
  }
}

RandomForestPredictor::RandomForestPredictor(std::vector<DecisionTree> trees,
                                             std::vector<bool> categorical, std::size_t classes)
    : trees_(std::move(trees)), categorical_(std::move(categorical)), classes_(classes) {
  if (trees_.empty()) fail(ErrorKind::kFormat, "forest has no trees");
  for (const auto& t : trees_) {
    if (t.nodes.empty()) fail(ErrorKind::kFormat, "empty tree");
    for (const auto& n : t.nodes) {
      const bool leaf = n.feature < 0;
      if (!leaf && (n.feature >= static_cast<int>(categorical_.size()) || n.left <= 0 ||
                    n.right <= 0 || n.left >= static_cast<int>(t.nodes.size()) ||
                    n.right >= static_cast<int>(t.nodes.size())))
        fail(ErrorKind::kFormat, "malformed tree node");
      if (n.leaf_class < 0 || n.leaf_class >= static_cast<int>(classes_))
        fail(ErrorKind::kFormat, "leaf class out of range");
    }
  }
}

Matrix RandomForestPredictor::predict_proba(const Matrix& rows) const {
  Matrix out = Matrix::Zero(rows.rows(), static_cast<Eigen::Index>(classes_));
  const double share = 1.0 / static_cast<double>(trees_.size());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double* row = rows.row(i).data();
    std::vector<int> votes(classes_, 0);
    for (const auto& t : trees_) ++votes[static_cast<std::size_t>(t.predict(row))];
    for (std::size_t c = 0; c < classes_; ++c)
      out(i, static_cast<Eigen::Index>(c)) = votes[c] * share;
  }
  return out;
}

nlohmann::json RandomForestPredictor::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({n.feature, n.categorical_split, n.threshold, n.left, n.right, n.leaf_class});
    trees.push_back(std::move(nodes));
  }
  return {{"classes", classes_}, {"categorical", categorical_}, {"trees", trees}};
}

std::shared_ptr<const RandomForestPredictor> RandomForestPredictor::from_json(
    const nlohmann::json& j) {
  std::vector<DecisionTree> trees;
  for (const auto& jt : j.at("trees")) {
    DecisionTree t;
    for (const auto& jn : jt) {
      TreeNode n;
      n.feature = jn.at(0).get<int>();
      n.categorical_split = jn.at(1).get<bool>();
      n.threshold = jn.at(2).get<double>();
      n.left = jn.at(3).get<int>();
      n.right = jn.at(4).get<int>();
      n.leaf_class = jn.at(5).get<int>();
      t.nodes.push_back(n);
    }
    trees.push_back(std::move(t));
  }
  return std::make_shared<const RandomForestPredictor>(
      std::move(trees), j.at("categorical").get<std::vector<bool>>(),
      j.at("classes").get<std::size_t>());
}

std::pair<PredictorPtr, TrainReport> train_random_forest(const Dataset& train,
                                                         const ForestParams& params,
                                                         const Dataset* holdout) {
  if (train.size() == 0) fail(ErrorKind::kEmptyDataset, "cannot train on an empty dataset");
  if (params.trees < 1) fail(ErrorKind::kConfig, "trees must be >= 1");
  if (params.max_depth < 1) fail(ErrorKind::kConfig, "max_depth must be >= 1");

  std::vector<DecisionTree> trees;
  trees.reserve(static_cast<std::size_t>(params.trees));
  for (int t = 0; t < params.trees; ++t) {
    Rng rng(derive_seed(params.seed, "forest.tree", static_cast<std::uint64_t>(t)));
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    std::vector<std::size_t> bootstrap(train.size());
    for (auto& r : bootstrap) r = pick(rng);
    trees.push_back(TreeBuilder(train, params.max_depth, rng).build(std::move(bootstrap)));
  }
  std::vector<bool> categorical;
  for (const auto& f : train.schema().features()) categorical.push_back(f.categorical());
  auto model = std::make_shared<const RandomForestPredictor>(std::move(trees), std::move(categorical),
                                                             train.schema().class_count());
  TrainReport report;
  report.seed = params.seed;
  report.train_accuracy = accuracy(*model, train);
  if (holdout) report.holdout_accuracy = accuracy(*model, *holdout);
  report.hyperparameters = {{"model", "random_forest"},
                            {"trees", std::to_string(params.trees)},
                            {"max_depth", std::to_string(params.max_depth)},
                            {"split_criterion", "gini"},
                            {"features_per_split", "sqrt"}};
  return {model, report};
}

}  // namespace pxai
