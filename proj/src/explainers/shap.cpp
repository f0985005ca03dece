#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/explainers.hpp"
#include "pxai/seeding.hpp"

#include "explainer_util.hpp"

namespace pxai {
namespace {

// v(S) for each coalition row of `masks` (1 = feature taken from x).
Vector coalition_values(const Predictor& p, const Instance& x, const Dataset& background,
                        const Matrix& masks, int target) {
  const auto m = masks.cols();
  const auto b = static_cast<Eigen::Index>(background.size());
  const Eigen::Index chunk = std::max<Eigen::Index>(1, 8192 / b);
  Vector v(masks.rows());
  for (Eigen::Index start = 0; start < masks.rows(); start += chunk) {
    const auto count = std::min(chunk, masks.rows() - start);
    Matrix batch(count * b, m);
    for (Eigen::Index k = 0; k < count; ++k)
      for (Eigen::Index r = 0; r < b; ++r)
        for (Eigen::Index j = 0; j < m; ++j)
          batch(k * b + r, j) = masks(start + k, j) != 0.0 ? x.values()[j] : background.rows()(r, j);
    const Matrix proba = p.predict_proba(batch);
    for (Eigen::Index k = 0; k < count; ++k)
      v[start + k] = proba.col(target).segment(k * b, b).mean();
  }
  return v;
}

void exact_shapley(const Predictor& p, const Instance& x, const Dataset& background, int target,
                   AttributionExplanation& out) {
  const auto m = static_cast<int>(x.size());
  const std::size_t n = std::size_t{1} << m;
  Matrix masks = Matrix::Zero(static_cast<Eigen::Index>(n), m);
  for (std::size_t s = 0; s < n; ++s)
    for (int j = 0; j < m; ++j)
      if (s >> j & 1U) masks(static_cast<Eigen::Index>(s), j) = 1.0;
  const Vector v = coalition_values(p, x, background, masks, target);

  // Shapley kernel |S|! (M - |S| - 1)! / M!, via lgamma.
  std::vector<double> w(static_cast<std::size_t>(m));
  for (int s = 0; s < m; ++s)
    w[static_cast<std::size_t>(s)] =
        std::exp(std::lgamma(s + 1.0) + std::lgamma(m - s) - std::lgamma(m + 1.0));

  out.weights.assign(static_cast<std::size_t>(m), 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const int size = std::popcount(s);
    for (int i = 0; i < m; ++i) {
      if (s >> i & 1U) continue;
      const auto with = s | (std::size_t{1} << i);
      out.weights[static_cast<std::size_t>(i)] +=
          w[static_cast<std::size_t>(size)] * (v[static_cast<Eigen::Index>(with)] - v[static_cast<Eigen::Index>(s)]);
    }
  }
  out.base_value = v[0];
  out.sample_count = n;
}

void sampled_shapley(const Predictor& p, const Instance& x, const Dataset& background, int target,
                     const ExplainerConfig& cfg, AttributionExplanation& out) {
  const auto m = static_cast<Eigen::Index>(x.size());
  Rng rng(derive_seed(cfg.seed, "shap.coalitions"));

  std::vector<double> size_weight;
  for (Eigen::Index s = 1; s < m; ++s)
    size_weight.push_back(static_cast<double>(m - 1) / static_cast<double>(s * (m - s)));
  std::discrete_distribution<int> pick_size(size_weight.begin(), size_weight.end());

  const auto pairs = static_cast<Eigen::Index>((cfg.shap.coalition_samples + 1) / 2);
  Matrix masks = Matrix::Zero(2 * pairs, m);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < pairs; ++k) {
    const int size = pick_size(rng) + 1;
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), order.size() - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[pick(rng)]);
    }
    masks.row(2 * k + 1).setOnes();
    for (int i = 0; i < size; ++i) {
      masks(2 * k, order[static_cast<std::size_t>(i)]) = 1.0;
      masks(2 * k + 1, order[static_cast<std::size_t>(i)]) = 0.0;
    }
  }

  Matrix ends(2, m);
  ends.row(0).setZero();
  ends.row(1).setOnes();
  const Vector v_ends = coalition_values(p, x, background, ends, target);
  const double v0 = v_ends[0];
  const double delta = v_ends[1] - v0;
  const Vector v = coalition_values(p, x, background, masks, target);

  // Eliminate the last weight through the sum constraint.
  const Eigen::Index last = m - 1;
  Matrix a(masks.rows(), last);
  Vector t(masks.rows());
  for (Eigen::Index k = 0; k < masks.rows(); ++k) {
    for (Eigen::Index i = 0; i < last; ++i) a(k, i) = masks(k, i) - masks(k, last);
    t[k] = v[k] - v0 - masks(k, last) * delta;
  }
  Matrix normal = a.transpose() * a;
  const Vector rhs = a.transpose() * t;
  normal.diagonal().array() += cfg.shap.ridge;
  Vector phi;
  Eigen::FullPivLU<Matrix> lu(normal);
  if (lu.rank() == normal.rows()) {
    phi = lu.solve(rhs);
  } else {
    normal.diagonal().array() += std::max(cfg.shap.ridge, 1e-6);
    phi = normal.ldlt().solve(rhs);
    out.flags.push_back("ridge_fallback");
  }
  out.weights.assign(static_cast<std::size_t>(m), 0.0);
  for (Eigen::Index i = 0; i < last; ++i) out.weights[static_cast<std::size_t>(i)] = phi[i];
  out.weights[static_cast<std::size_t>(last)] = delta - phi.sum();
  out.base_value = v0;
  out.sample_count = static_cast<std::size_t>(masks.rows());
}

}  // namespace

AttributionExplanation kernel_shap(const Predictor& p, const Instance& x, const Dataset& background,
                                   const ExplainerConfig& cfg, int target_class) {
  if (background.size() == 0) fail(ErrorKind::kEmptyDataset, "SHAP background is empty");
  if (background.feature_count() != x.size())
    fail(ErrorKind::kValidation, "background width does not match the instance");
  AttributionExplanation out;
  out.method = Method::kShap;
  detail::fill_base(out, p, x, target_class, cfg);
  if (x.size() <= cfg.shap.enumerate_threshold && x.size() < 31) {
    exact_shapley(p, x, background, target_class, out);
    out.flags.push_back("exact");
  } else if (x.size() == 1) {
    out.base_value = coalition_values(p, x, background, Matrix::Zero(1, 1), target_class)[0];
    out.weights = {out.prediction - out.base_value};
  } else {
    sampled_shapley(p, x, background, target_class, cfg, out);
  }
  return out;
}

}  // namespace pxai
