#include <algorithm>
#include <cmath>
#include <random>
#include <numeric>
#include <optional>
#include <set>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/explainers.hpp"
#include "pxai/seeding.hpp"

#include "explainer_util.hpp"

namespace pxai {

double kl_bernoulli(double p, double q) {
  constexpr double eps = 1e-15;
  p = std::clamp(p, eps, 1.0 - eps);
  q = std::clamp(q, eps, 1.0 - eps);
  return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

double kl_upper_bound(double p, double level) {
  double lo = p, hi = std::min(1.0, p + std::sqrt(level / 2.0));
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (kl_bernoulli(p, mid) > level ? hi : lo) = mid;
  }
  return hi;
}

double kl_lower_bound(double p, double level) {
  double hi = p, lo = std::max(0.0, p - std::sqrt(level / 2.0));
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (kl_bernoulli(p, mid) > level ? lo : hi) = mid;
  }
  return lo;
}

namespace {

struct Candidate {
  std::vector<std::size_t> features;  // rule order
  double hits = 0.0;
  double n = 0.0;
  bool accepted = false;

  double mean() const { return n > 0.0 ? hits / n : 0.0; }
};

class AnchorSearch {
 public:
  AnchorSearch(const Predictor& p, const Instance& x, const Discretizer& disc, const Dataset& train,
               const AnchorConfig& cfg, std::uint64_t seed)
      : p_(p), x_(x), disc_(disc), cfg_(cfg), rng_(derive_seed(seed, "anchor.samples")) {
    target_ = p.predict(x.values());
    x_bins_ = disc.discretize(x);
    const auto m = x.size();
    columns_.resize(m);
    in_bin_.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < train.size(); ++i) {
        const double v = train.rows()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        columns_[j].push_back(v);
        if (disc.bin_of(j, v) == x_bins_[j]) in_bin_[j].push_back(v);
      }
      if (in_bin_[j].empty()) in_bin_[j].push_back(x[j]);
      const auto& b = disc.bins(j);
      if (b.categorical ? b.category_count > 1 : !b.degenerate) usable_.push_back(j);
    }
    build_coverage_sample(seed);
  }

  int target() const { return target_; }
  std::size_t samples_used() const { return used_; }

  RuleExplanation run() {
    RuleExplanation out;
    Candidate empty;
    verify(empty, round_budget());
    if (empty.accepted) return finish(empty, false);
    Candidate best = empty;

    std::vector<Candidate> beam{empty};
    for (std::size_t size = 1; size <= cfg_.max_rule_size; ++size) {
      auto cands = expand(beam);
      if (cands.empty()) break;
      const std::size_t budget_end = used_ + cfg_.sample_budget;
      auto chosen = best_candidates(cands, budget_end);
      std::optional<Candidate> winner;
      for (auto& c : chosen) {
        verify(c, budget_end);
        if (better_fallback(c, best)) best = c;
        if (c.accepted && (!winner || coverage(c) > coverage(*winner))) winner = c;
      }
      if (winner) return finish(*winner, false);
      beam = std::move(chosen);
    }
    return finish(best, true);
  }

 private:
  std::size_t round_budget() const { return used_ + cfg_.sample_budget; }

  // Fixed features resample within x's bin; free features from the training marginal.
  void sample(Candidate& c, std::size_t count) {
    const auto m = static_cast<Eigen::Index>(x_.size());
    std::vector<bool> fixed(x_.size(), false);
    for (auto f : c.features) fixed[f] = true;
    Matrix rows(static_cast<Eigen::Index>(count), m);
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto& pool = fixed[static_cast<std::size_t>(j)] ? in_bin_[static_cast<std::size_t>(j)]
                                                              : columns_[static_cast<std::size_t>(j)];
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        rows(i, j) = pool[pick(rng_)];
      }
    const Matrix proba = p_.predict_proba(rows);
    for (Eigen::Index i = 0; i < proba.rows(); ++i) {
      Eigen::Index best = 0;
      proba.row(i).maxCoeff(&best);
      if (best == target_) c.hits += 1.0;
    }
    c.n += static_cast<double>(count);
    used_ += count;
  }

  double lower(const Candidate& c) const {
    return c.n > 0.0 ? kl_lower_bound(c.mean(), std::log(1.0 / cfg_.delta) / c.n) : 0.0;
  }
  double upper(const Candidate& c) const {
    return c.n > 0.0 ? kl_upper_bound(c.mean(), std::log(1.0 / cfg_.delta) / c.n) : 1.0;
  }

  // Sample until the lower bound clears tau, the upper bound falls below it, or
  // the round budget runs out.
  void verify(Candidate& c, std::size_t budget_end) {
    if (c.n == 0.0) sample(c, cfg_.batch_size);
    for (;;) {
      if (lower(c) >= cfg_.precision_threshold) {
        c.accepted = true;
        return;
      }
      if (upper(c) < cfg_.precision_threshold || used_ >= budget_end) return;
      sample(c, cfg_.batch_size);
    }
  }

  std::vector<Candidate> expand(const std::vector<Candidate>& beam) const {
    std::vector<Candidate> out;
    std::set<std::vector<std::size_t>> seen;
    for (const auto& b : beam)
      for (auto f : usable_) {
        if (std::find(b.features.begin(), b.features.end(), f) != b.features.end()) continue;
        Candidate c;
        c.features = b.features;
        c.features.push_back(f);
        auto key = c.features;
        std::sort(key.begin(), key.end());
        if (seen.insert(key).second) out.push_back(std::move(c));
      }
    return out;
  }

  // KL-LUCB identification of the beam_width candidates with highest precision.
  std::vector<Candidate> best_candidates(std::vector<Candidate>& cands, std::size_t budget_end) {
    for (auto& c : cands) sample(c, cfg_.batch_size);
    const std::size_t width = std::min(cfg_.beam_width, cands.size());
    std::vector<std::size_t> order(cands.size());
    auto rank = [&] {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cands[a].mean() > cands[b].mean();
      });
    };
    rank();
    if (width < cands.size()) {
      const double k = static_cast<double>(cands.size());
      for (double t = 1.0; used_ < budget_end; t += 1.0) {
        const double temp = std::log(405.5 * k * std::pow(t, 1.1) / cfg_.delta);
        const double beta = temp + std::log(temp);
        std::size_t ut = order[width], lt = order[0];
        double ub = -1.0, lb = 2.0;
        for (std::size_t r = 0; r < order.size(); ++r) {
          const auto& c = cands[order[r]];
          if (r < width) {
            const double v = kl_lower_bound(c.mean(), beta / c.n);
            if (v < lb) lb = v, lt = order[r];
          } else {
            const double v = kl_upper_bound(c.mean(), beta / c.n);
            if (v > ub) ub = v, ut = order[r];
          }
        }
        if (ub - lb <= cfg_.epsilon) break;
        sample(cands[ut], cfg_.batch_size);
        sample(cands[lt], cfg_.batch_size);
        rank();
      }
    }
    std::vector<Candidate> out;
    for (std::size_t r = 0; r < width; ++r) out.push_back(cands[order[r]]);
    return out;
  }

  bool better_fallback(const Candidate& c, const Candidate& best) const {
    const double a = lower(c), b = lower(best);
    if (a != b) return a > b;
    return c.mean() > best.mean();
  }

  void build_coverage_sample(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "anchor.coverage"));
    const auto m = x_.size();
    cover_match_.assign(cfg_.coverage_samples, std::vector<bool>(m));
    for (auto& row : cover_match_)
      for (std::size_t j = 0; j < m; ++j) {
        std::uniform_int_distribution<std::size_t> pick(0, columns_[j].size() - 1);
        row[j] = disc_.bin_of(j, columns_[j][pick(rng)]) == x_bins_[j];
      }
  }

  double coverage(const Candidate& c) const {
    std::size_t hits = 0;
    for (const auto& row : cover_match_) {
      bool all = true;
      for (auto f : c.features) all = all && row[f];
      if (all) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(cover_match_.size());
  }

  RuleExplanation finish(const Candidate& c, bool below) {
    RuleExplanation out;
    for (auto f : c.features) out.predicates.push_back({f, x_bins_[f], disc_.describe(f, x_bins_[f])});
    out.precision_estimate = c.mean();
    out.precision_lower_bound = std::min(lower(c), out.precision_estimate);
    out.coverage_estimate = coverage(c);
    out.below_threshold = below;
    return out;
  }

  const Predictor& p_;
  const Instance& x_;
  const Discretizer& disc_;
  const AnchorConfig& cfg_;
  Rng rng_;
  int target_ = 0;
  std::vector<int> x_bins_;
  std::vector<std::vector<double>> columns_;
  std::vector<std::vector<double>> in_bin_;
  std::vector<std::size_t> usable_;
  std::vector<std::vector<bool>> cover_match_;
  std::size_t used_ = 0;
};

}  // namespace

RuleExplanation anchor_explain(const Predictor& p, const Instance& x, const Discretizer& disc,
                               const Dataset& train, const ExplainerConfig& cfg) {
  if (train.size() == 0) fail(ErrorKind::kEmptyDataset, "anchor needs training data");
  if (disc.feature_count() != x.size() || train.feature_count() != x.size())
    fail(ErrorKind::kValidation, "discretizer or training data does not match the instance");
  cfg.validate();
  AnchorSearch search(p, x, disc, train, cfg.anchor, cfg.seed);
  auto out = search.run();
  detail::fill_base(out, p, x, search.target(), cfg);
  out.samples_used = search.samples_used();
  if (out.below_threshold) out.flags.push_back("below_threshold");
  return out;
}

}  // namespace pxai
