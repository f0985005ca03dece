#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <random>

#include "fmt/format.h"
#include "pxai/errors.hpp"
#include "pxai/seeding.hpp"
#include "pxai/tabular.hpp"

namespace pxai {
namespace {

// RFC 4180-ish: quoted fields with doubled quotes; no embedded newlines.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<FeatureStats> compute_stats(const FeatureSchema& schema, const Matrix& rows) {
  std::vector<FeatureStats> stats(schema.feature_count());
  const auto n = rows.rows();
  for (std::size_t j = 0; j < schema.feature_count(); ++j) {
    auto& st = stats[j];
    std::vector<double> col(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = rows(i, static_cast<Eigen::Index>(j));
    if (col.empty()) continue;
    st.mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : col) ss += (v - st.mean) * (v - st.mean);
    st.std = std::sqrt(ss / static_cast<double>(n));
    std::sort(col.begin(), col.end());
    st.min = col.front();
    st.max = col.back();
    for (int q = 0; q <= 10; ++q) st.deciles.push_back(quantile_sorted(col, q / 10.0));
    const auto& spec = schema.feature(j);
    if (spec.categorical()) {
      std::vector<double> counts(spec.categories.size(), 0.0);
      for (double v : col) counts[static_cast<std::size_t>(v)] += 1.0;
      st.mode = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      for (double& c : counts) c /= static_cast<double>(n);
      st.frequencies = std::move(counts);
    }
  }
  return stats;
}

}  // namespace

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorKind::kValidation, "quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

Dataset::Dataset(SchemaPtr schema, Matrix rows, std::vector<int> labels)
    : schema_(std::move(schema)), rows_(std::move(rows)), labels_(std::move(labels)) {
  if (!schema_) fail(ErrorKind::kValidation, "dataset without schema");
  schema_->validate_complete();
  if (static_cast<std::size_t>(rows_.cols()) != schema_->feature_count())
    fail(ErrorKind::kSchemaMismatch,
         fmt::format("rows have {} columns, schema has {} features", rows_.cols(),
                     schema_->feature_count()));
  if (static_cast<std::size_t>(rows_.rows()) != labels_.size())
    fail(ErrorKind::kValidation, "row and label counts differ");
  const int classes = static_cast<int>(schema_->class_count());
  for (int y : labels_)
    if (y < 0 || y >= classes) fail(ErrorKind::kValidation, fmt::format("label {} out of range", y));
  stats_ = compute_stats(*schema_, rows_);
}

Instance Dataset::instance(std::size_t row) const {
  return Instance(schema_, rows_.row(static_cast<Eigen::Index>(row)).transpose());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Matrix rows(static_cast<Eigen::Index>(indices.size()), rows_.cols());
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    rows.row(static_cast<Eigen::Index>(k)) = rows_.row(static_cast<Eigen::Index>(indices[k]));
    labels.push_back(labels_.at(indices[k]));
  }
  return Dataset(schema_, std::move(rows), std::move(labels));
}

Vector Dataset::scale() const {
  Vector s(static_cast<Eigen::Index>(stats_.size()));
  for (std::size_t j = 0; j < stats_.size(); ++j)
    s[static_cast<Eigen::Index>(j)] = stats_[j].std > 0.0 ? stats_[j].std : 1.0;
  return s;
}

Vector Dataset::reference_point() const {
  Vector r(static_cast<Eigen::Index>(stats_.size()));
  for (std::size_t j = 0; j < stats_.size(); ++j)
    r[static_cast<Eigen::Index>(j)] = schema_->feature(j).categorical()
                                          ? static_cast<double>(stats_[j].mode)
                                          : stats_[j].mean;
  return r;
}

Dataset load_csv_dataset(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kParse, fmt::format("cannot open dataset file '{}'", path.string()));
  return load_csv_dataset(in, schema, path.string());
}

Dataset load_csv_dataset(std::istream& in, const FeatureSchema& schema,
                         std::string_view source_name) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
      if (!trim(line).empty()) return true;
    }
    return false;
  };
  if (!next_line()) fail(ErrorKind::kEmptyDataset, fmt::format("{}: empty file", source_name));

  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t, std::less<>> column_of;
  for (std::size_t c = 0; c < header.size(); ++c) column_of[std::string(trim(header[c]))] = c;

  const std::size_t m = schema.feature_count();
  std::vector<std::size_t> feature_col(m);
  for (std::size_t j = 0; j < m; ++j) {
    auto it = column_of.find(schema.feature(j).name);
    if (it == column_of.end())
      fail(ErrorKind::kSchemaMismatch,
           fmt::format("{}: missing column '{}'", source_name, schema.feature(j).name));
    feature_col[j] = it->second;
  }
  auto target_it = column_of.find(schema.target());
  if (target_it == column_of.end())
    fail(ErrorKind::kSchemaMismatch,
         fmt::format("{}: missing target column '{}'", source_name, schema.target()));
  const std::size_t target_col = target_it->second;

  // Undeclared categories and classes are discovered in order of first appearance.
  std::vector<FeatureSpec> specs = schema.features();
  std::vector<bool> open_categories(m);
  for (std::size_t j = 0; j < m; ++j)
    open_categories[j] = specs[j].categorical() && specs[j].categories.empty();
  std::vector<std::string> classes = schema.class_names();
  const bool open_classes = classes.empty();

  std::vector<std::vector<double>> values;
  std::vector<int> labels;
  while (next_line()) {
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      fail(ErrorKind::kParse, fmt::format("{}:{}: expected {} cells, found {}", source_name,
                                          line_no, header.size(), cells.size()));
    std::vector<double> row(m);
    for (std::size_t j = 0; j < m; ++j) {
      const auto cell = trim(cells[feature_col[j]]);
      auto& spec = specs[j];
      if (cell.empty())
        fail(ErrorKind::kParse,
             fmt::format("{}:{}: missing value for '{}'", source_name, line_no, spec.name));
      if (spec.categorical()) {
        auto it = std::find(spec.categories.begin(), spec.categories.end(), cell);
        if (it == spec.categories.end()) {
          if (!open_categories[j])
            fail(ErrorKind::kParse, fmt::format("{}:{}: unknown category '{}' for '{}'",
                                                source_name, line_no, cell, spec.name));
          spec.categories.emplace_back(cell);
          it = spec.categories.end() - 1;
        }
        row[j] = static_cast<double>(it - spec.categories.begin());
      } else {
        auto v = parse_number(cell);
        if (!v)
          fail(ErrorKind::kParse, fmt::format("{}:{}: cannot parse '{}' for '{}'", source_name,
                                              line_no, cell, spec.name));
        row[j] = *v;
      }
    }
    const auto label = trim(cells[target_col]);
    if (label.empty())
      fail(ErrorKind::kParse, fmt::format("{}:{}: missing label", source_name, line_no));
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) {
      if (!open_classes)
        fail(ErrorKind::kParse,
             fmt::format("{}:{}: unknown class '{}'", source_name, line_no, label));
      classes.emplace_back(label);
      it = classes.end() - 1;
    }
    labels.push_back(static_cast<int>(it - classes.begin()));
    values.push_back(std::move(row));
  }
  if (values.empty()) fail(ErrorKind::kEmptyDataset, fmt::format("{}: no data rows", source_name));

  Matrix rows(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < m; ++j)
      rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i][j];
  auto completed =
      std::make_shared<const FeatureSchema>(std::move(specs), schema.target(), std::move(classes));
  return Dataset(std::move(completed), std::move(rows), std::move(labels));
}

SplitIndices split_indices(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    fail(ErrorKind::kConfig, fmt::format("test_fraction must lie in (0, 1), got {}", test_fraction));
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.labels()[i]].push_back(i);
  SplitIndices out;
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(label)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(idx.size())));
    out.test.insert(out.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double test_fraction,
                                  std::uint64_t seed) {
  const auto idx = split_indices(dataset, test_fraction, seed);
  if (idx.train.empty() || idx.test.empty())
    fail(ErrorKind::kConfig, "split leaves an empty partition");
  return {dataset.subset(idx.train), dataset.subset(idx.test)};
}

}  // namespace pxai
