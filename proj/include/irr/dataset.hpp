#pragma once

// Corrupted-sample datasets: CSV ingestion, min-max normalization over the
// observed entries, seeded train/test splitting and summary statistics.

#include <Eigen/Dense>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "irr/errors.hpp"
#include "irr/rng.hpp"

namespace irr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One corrupted example: xt = x o z, mask z, label y.
struct CorruptedSample {
  VectorXd xt;
  VectorXd z;  // entries are exactly 0.0 or 1.0
  double y = 0.0;
};

struct Range {
  double min = 0.0;
  double max = 0.0;
};

/// Row i of X is the corrupted feature vector of example i and row i of Z its
/// mask. Masked entries of X are always zero.
struct Dataset {
  MatrixXd X;
  MatrixXd Z;
  VectorXd y;
  std::vector<Range> feature_ranges;  // filled by normalize()
  Range label_range;
  bool normalized = false;
  std::vector<std::string> warnings;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }

  CorruptedSample sample(Eigen::Index i) const { return {X.row(i).transpose(), Z.row(i).transpose(), y(i)}; }

  /// 1 - Z.
  MatrixXd missing() const { return MatrixXd::Ones(Z.rows(), Z.cols()) - Z; }

  /// Dataset with the given rows, in the given order.
  Dataset subset(const std::vector<Eigen::Index>& idx) const {
    Dataset out;
    out.X.resize(static_cast<Eigen::Index>(idx.size()), dim());
    out.Z.resize(static_cast<Eigen::Index>(idx.size()), dim());
    out.y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto i = idx[r];
      out.X.row(static_cast<Eigen::Index>(r)) = X.row(i);
      out.Z.row(static_cast<Eigen::Index>(r)) = Z.row(i);
      out.y(static_cast<Eigen::Index>(r)) = y(i);
    }
    out.feature_ranges = feature_ranges;
    out.label_range = label_range;
    out.normalized = normalized;
    return out;
  }

  /// Same data with a new mask; entries masked by `mask` are zeroed.
  Dataset with_mask(const MatrixXd& mask) const {
    require_dims(mask.rows() == rows() && mask.cols() == dim(), "mask shape does not match dataset");
    Dataset out = *this;
    out.Z = Z.cwiseProduct(mask);
    out.X = X.cwiseProduct(out.Z);
    return out;
  }
};

/// Builds a Dataset from raw features and mask, zeroing masked entries.
inline Dataset make_dataset(MatrixXd X, MatrixXd Z, VectorXd y) {
  require_dims(X.rows() == Z.rows() && X.cols() == Z.cols(), "X and Z must have the same shape");
  require_dims(X.rows() == y.size(), "label count must equal row count");
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index k = 0; k < Z.cols(); ++k)
      require(Z(i, k) == 0.0 || Z(i, k) == 1.0, "mask entries must be 0 or 1");
  Dataset ds;
  ds.X = X.cwiseProduct(Z);
  ds.Z = std::move(Z);
  ds.y = std::move(y);
  return ds;
}

inline Dataset fully_observed(MatrixXd X, VectorXd y) {
  MatrixXd Z = MatrixXd::Ones(X.rows(), X.cols());
  return make_dataset(std::move(X), std::move(Z), std::move(y));
}

// ---------------------------------------------------------------------------
// CSV ingestion

/// A column chosen by zero-based index or by header name.
using ColumnRef = std::variant<std::size_t, std::string>;

struct CsvOptions {
  ColumnRef label_column = std::size_t{0};
  bool has_header = false;
  std::vector<ColumnRef> skip_columns;  // dropped before parsing (e.g. categorical)
  char delimiter = ',';
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, delim)) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

inline bool is_missing_token(const std::string& cell) { return cell.empty() || cell == "?"; }

inline std::optional<double> parse_real(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || errno == ERANGE) return std::nullopt;
  return v;
}

inline std::size_t resolve_column(const ColumnRef& ref, const std::vector<std::string>& header, std::size_t arity) {
  if (const auto* idx = std::get_if<std::size_t>(&ref)) {
    if (*idx >= arity) throw PreconditionError("column index " + std::to_string(*idx) + " out of range");
    return *idx;
  }
  const auto& name = std::get<std::string>(ref);
  if (header.empty()) throw PreconditionError("column '" + name + "' referenced by name but the file has no header");
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw PreconditionError("no column named '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace detail

/// Reads a numeric CSV. Cells holding "?" or nothing are treated as missing
/// features (z = 0). The label column must always parse as a real number.
inline Dataset load_csv(const std::string& path, const CsvOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");

  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t arity = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_line(line, opt.delimiter);
    if (opt.has_header && header.empty() && rows.empty()) {
      header = std::move(cells);
      arity = header.size();
      continue;
    }
    if (arity == 0) arity = cells.size();
    if (cells.size() != arity)
      throw ParseError("ragged row: expected " + std::to_string(arity) + " cells, found " + std::to_string(cells.size()),
                       rows.size() + 1, cells.size());
    rows.push_back(std::move(cells));
  }
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  if (rows.empty()) throw PreconditionError("'" + path + "' contains no data rows");

  const std::size_t label = detail::resolve_column(opt.label_column, header, arity);
  std::vector<bool> keep(arity, true);
  keep[label] = false;
  for (const auto& s : opt.skip_columns) keep[detail::resolve_column(s, header, arity)] = false;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < arity; ++c)
    if (keep[c]) feature_cols.push_back(c);

  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(feature_cols.size());
  MatrixXd X = MatrixXd::Zero(m, d);
  MatrixXd Z = MatrixXd::Ones(m, d);
  VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& cells = rows[static_cast<std::size_t>(i)];
    // Row numbers in messages are 1-based data rows (header excluded).
    const std::size_t row_no = static_cast<std::size_t>(i) + 1;
    const auto yv = detail::parse_real(cells[label]);
    if (!yv) throw ParseError("label '" + cells[label] + "' is not a real number", row_no, label);
    y(i) = *yv;
    for (Eigen::Index k = 0; k < d; ++k) {
      const std::size_t c = feature_cols[static_cast<std::size_t>(k)];
      if (detail::is_missing_token(cells[c])) {
        Z(i, k) = 0.0;
        continue;
      }
      const auto v = detail::parse_real(cells[c]);
      if (!v) throw ParseError("cell '" + cells[c] + "' is neither a real number nor a missing token", row_no, c);
      X(i, k) = *v;
    }
  }
  return make_dataset(std::move(X), std::move(Z), std::move(y));
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizeOptions {
  bool labels = true;  // false keeps labels as-is (e.g. +-1 targets)
};

/// Min-max scales every feature into [0, 1] using only its observed entries,
/// and the labels likewise. Masked entries stay zero. A feature whose observed
/// values are all equal maps to 0 and records a warning.
inline Dataset normalize(const Dataset& ds, const NormalizeOptions& opt = {}) {
  Dataset out = ds;
  const auto m = ds.rows();
  const auto d = ds.dim();
  out.feature_ranges.assign(static_cast<std::size_t>(d), Range{});
  for (Eigen::Index k = 0; k < d; ++k) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (ds.Z(i, k) == 0.0) continue;
      lo = std::min(lo, ds.X(i, k));
      hi = std::max(hi, ds.X(i, k));
    }
    if (lo > hi) {
      out.warnings.push_back("feature " + std::to_string(k) + " is never observed");
      out.feature_ranges[static_cast<std::size_t>(k)] = {0.0, 0.0};
      continue;
    }
    out.feature_ranges[static_cast<std::size_t>(k)] = {lo, hi};
    const double span = hi - lo;
    if (span == 0.0) out.warnings.push_back("feature " + std::to_string(k) + " is constant; mapped to 0");
    for (Eigen::Index i = 0; i < m; ++i) {
      if (ds.Z(i, k) == 0.0) continue;
      out.X(i, k) = span == 0.0 ? 0.0 : (ds.X(i, k) - lo) / span;
    }
  }
  if (opt.labels && m > 0) {
    const double lo = ds.y.minCoeff();
    const double hi = ds.y.maxCoeff();
    out.label_range = {lo, hi};
    if (hi == lo) {
      out.warnings.push_back("labels are constant; mapped to 0");
      out.y.setZero();
    } else {
      out.y = (ds.y.array() - lo) / (hi - lo);
    }
  }
  out.normalized = true;
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and statistics

/// Seeded shuffle; the first `train_size` rows form the training set.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t train_size, std::uint64_t seed) {
  const auto m = static_cast<std::size_t>(ds.rows());
  if (train_size > m)
    throw PreconditionError("train_size " + std::to_string(train_size) + " exceeds row count " + std::to_string(m));
  std::vector<Eigen::Index> idx(m);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<Eigen::Index> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_size));
  std::vector<Eigen::Index> test(idx.begin() + static_cast<std::ptrdiff_t>(train_size), idx.end());
  return {ds.subset(train), ds.subset(test)};
}

struct DatasetStats {
  std::size_t n = 0;
  std::size_t d = 0;
  double fraction_remaining = 1.0;
};

inline DatasetStats stats(const Dataset& ds) {
  DatasetStats s;
  s.n = static_cast<std::size_t>(ds.rows());
  s.d = static_cast<std::size_t>(ds.dim());
  const double cells = static_cast<double>(ds.Z.size());
  s.fraction_remaining = cells > 0 ? ds.Z.sum() / cells : 1.0;
  return s;
}

}  // namespace irr
