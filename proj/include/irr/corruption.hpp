#pragma once

// Artificial feature-deletion processes producing observation masks Z.
//
// Per-feature parameters (deletion probabilities, thresholds, signs) come from
// stream 0 below the seed; row i draws its Bernoulli trials from stream i + 1.
// A mask is therefore a pure function of (seed, shape) for the independent
// process, and of (seed, X) for the data-dependent one.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "irr/errors.hpp"
#include "irr/rng.hpp"

namespace irr {

using Eigen::MatrixXd;

enum class CorruptionKind { Independent, Dependent, ColumnBlock };

/// How feature indices group into deletable blocks.
enum class BlockLayout {
  /// Block b is image column b of a row-major image with `block_size` rows:
  /// features {b, b + w, b + 2w, ...} where w = d / block_size.
  ImageColumn,
  /// Block b is the contiguous range [b * block_size, (b + 1) * block_size).
  Contiguous,
};

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::Independent;
  double beta = 0.0;  // unused for ColumnBlock
  std::size_t block_size = 8;
  std::vector<std::size_t> eligible_blocks;
  BlockLayout layout = BlockLayout::ImageColumn;
  std::uint64_t seed = 0;
};

/// Per-run draws, exposed for inspection.
struct CorruptionRecord {
  std::vector<double> deletion_prob;    // Independent: p_k
  std::vector<double> threshold;        // Dependent: tau_k
  std::vector<int> sign;                // Dependent: sigma_k
  std::vector<std::size_t> chosen_block;  // ColumnBlock: block removed from each row
};

inline const char* to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::Independent: return "independent";
    case CorruptionKind::Dependent: return "dependent";
    case CorruptionKind::ColumnBlock: return "column";
  }
  return "?";
}

inline CorruptionKind corruption_kind_from_string(const std::string& s) {
  if (s == "independent") return CorruptionKind::Independent;
  if (s == "dependent") return CorruptionKind::Dependent;
  if (s == "column" || s == "column_block") return CorruptionKind::ColumnBlock;
  throw PreconditionError("unknown corruption kind '" + s + "'");
}

namespace detail {
inline void check_beta(double beta) { require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]"); }
}  // namespace detail

/// Each feature k gets a deletion probability p_k ~ U[0, beta]; every entry of
/// that column is then deleted independently with probability p_k.
inline MatrixXd corrupt_independent(Eigen::Index rows, Eigen::Index cols, double beta, std::uint64_t seed,
                                    CorruptionRecord* record = nullptr) {
  detail::check_beta(beta);
  Rng feature_rng(derive_seed(seed, 0));
  std::vector<double> p(static_cast<std::size_t>(cols));
  for (auto& pk : p) pk = beta * feature_rng.uniform();
  MatrixXd Z = MatrixXd::Ones(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Rng row_rng(derive_seed(seed, static_cast<std::uint64_t>(i) + 1));
    for (Eigen::Index k = 0; k < cols; ++k)
      if (row_rng.uniform() < p[static_cast<std::size_t>(k)]) Z(i, k) = 0.0;
  }
  if (record) record->deletion_prob = std::move(p);
  return Z;
}

inline MatrixXd corrupt_independent(const MatrixXd& X, double beta, std::uint64_t seed,
                                    CorruptionRecord* record = nullptr) {
  return corrupt_independent(X.rows(), X.cols(), beta, seed, record);
}

/// Data-dependent deletion with caller-supplied thresholds and signs: entry
/// (i, k) is deleted with probability beta iff sign_k * (X(i, k) - tau_k) > 0.
inline MatrixXd corrupt_dependent_with(const MatrixXd& X, double beta, const std::vector<double>& threshold,
                                       const std::vector<int>& sign, std::uint64_t seed) {
  detail::check_beta(beta);
  require_dims(threshold.size() == static_cast<std::size_t>(X.cols()) && sign.size() == threshold.size(),
               "one threshold and sign per feature required");
  MatrixXd Z = MatrixXd::Ones(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Rng row_rng(derive_seed(seed, static_cast<std::uint64_t>(i) + 1));
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
      const double u = row_rng.uniform();
      const auto kk = static_cast<std::size_t>(k);
      if (sign[kk] * (X(i, k) - threshold[kk]) > 0.0 && u < beta) Z(i, k) = 0.0;
    }
  }
  return Z;
}

/// Draws tau_k ~ U[0, 1] and sigma_k uniform in {-1, +1} per feature, then
/// applies corrupt_dependent_with. X must be scaled into [0, 1].
inline MatrixXd corrupt_dependent(const MatrixXd& X, double beta, std::uint64_t seed,
                                  CorruptionRecord* record = nullptr) {
  detail::check_beta(beta);
  if (X.size() > 0 && (X.minCoeff() < 0.0 || X.maxCoeff() > 1.0))
    throw PreconditionError("data-dependent corruption needs features in [0, 1]; normalize first");
  Rng feature_rng(derive_seed(seed, 0));
  std::vector<double> tau(static_cast<std::size_t>(X.cols()));
  std::vector<int> sigma(tau.size());
  for (std::size_t k = 0; k < tau.size(); ++k) {
    tau[k] = feature_rng.uniform();
    sigma[k] = feature_rng.sign();
  }
  MatrixXd Z = corrupt_dependent_with(X, beta, tau, sigma, seed);
  if (record) {
    record->threshold = std::move(tau);
    record->sign = std::move(sigma);
  }
  return Z;
}

/// Feature indices that make up block `b`.
inline std::vector<Eigen::Index> block_members(Eigen::Index d, std::size_t block_size, std::size_t b,
                                               BlockLayout layout) {
  const auto bs = static_cast<Eigen::Index>(block_size);
  const Eigen::Index blocks = d / bs;
  std::vector<Eigen::Index> out;
  out.reserve(block_size);
  for (Eigen::Index r = 0; r < bs; ++r)
    out.push_back(layout == BlockLayout::ImageColumn ? static_cast<Eigen::Index>(b) + r * blocks
                                                     : static_cast<Eigen::Index>(b) * bs + r);
  return out;
}

/// Removes one uniformly chosen eligible block from every row.
inline MatrixXd corrupt_column_block(Eigen::Index rows, Eigen::Index d, std::size_t block_size,
                                     const std::vector<std::size_t>& eligible, std::uint64_t seed,
                                     BlockLayout layout = BlockLayout::ImageColumn,
                                     CorruptionRecord* record = nullptr) {
  require(block_size > 0 && d % static_cast<Eigen::Index>(block_size) == 0,
          "feature count must be divisible by block_size");
  require(!eligible.empty(), "eligible block set is empty");
  const auto blocks = static_cast<std::size_t>(d) / block_size;
  for (auto b : eligible) require(b < blocks, "eligible block index out of range");

  std::vector<std::vector<Eigen::Index>> members;
  for (auto b : eligible) members.push_back(block_members(d, block_size, b, layout));

  MatrixXd Z = MatrixXd::Ones(rows, d);
  std::vector<std::size_t> chosen(static_cast<std::size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i) {
    Rng row_rng(derive_seed(seed, static_cast<std::uint64_t>(i) + 1));
    const auto pick = static_cast<std::size_t>(row_rng.below(eligible.size()));
    chosen[static_cast<std::size_t>(i)] = eligible[pick];
    for (auto k : members[pick]) Z(i, k) = 0.0;
  }
  if (record) record->chosen_block = std::move(chosen);
  return Z;
}

/// Dispatches on spec.kind.
inline MatrixXd corrupt(const MatrixXd& X, const CorruptionSpec& spec, CorruptionRecord* record = nullptr) {
  switch (spec.kind) {
    case CorruptionKind::Independent: return corrupt_independent(X, spec.beta, spec.seed, record);
    case CorruptionKind::Dependent: return corrupt_dependent(X, spec.beta, spec.seed, record);
    case CorruptionKind::ColumnBlock:
      return corrupt_column_block(X.rows(), X.cols(), spec.block_size, spec.eligible_blocks, spec.seed, spec.layout,
                                  record);
  }
  throw PreconditionError("unknown corruption kind");
}

/// Fraction of ones in a mask.
inline double mask_fraction(const MatrixXd& Z) { return Z.size() ? Z.sum() / static_cast<double>(Z.size()) : 1.0; }

struct CalibrationOptions {
  double tolerance = 0.01;  // accepted |fraction - target|
  int draws = 5;            // masks averaged per evaluation
  int max_iterations = 60;
};

/// Bisection on beta until the mean fraction remaining over `draws` masks is
/// within `tolerance` of `target`. The same mask seeds are reused at every
/// beta, which makes the fraction monotone in beta.
inline double calibrate_beta(const MatrixXd& X, CorruptionKind kind, double target, std::uint64_t seed,
                             const CalibrationOptions& opt = {}) {
  require(kind == CorruptionKind::Independent || kind == CorruptionKind::Dependent,
          "calibration applies to independent and dependent corruption only");
  require(target > 0.0 && target <= 1.0, "target fraction must lie in (0, 1]");
  if (target == 1.0) return 0.0;

  const auto fraction = [&](double beta) {
    double acc = 0.0;
    for (int r = 0; r < opt.draws; ++r) {
      const auto s = derive_seed(seed, static_cast<std::uint64_t>(r));
      acc += mask_fraction(kind == CorruptionKind::Independent ? corrupt_independent(X, beta, s)
                                                               : corrupt_dependent(X, beta, s));
    }
    return acc / opt.draws;
  };

  const double floor = fraction(1.0);
  if (std::abs(floor - target) <= opt.tolerance) return 1.0;
  if (floor > target)
    throw PreconditionError("target fraction " + std::to_string(target) + " is below the reachable floor " +
                            std::to_string(floor));
  double lo = 0.0;
  double hi = 1.0;
  double mid = 0.5;
  for (int it = 0; it < opt.max_iterations; ++it) {
    mid = 0.5 * (lo + hi);
    const double f = fraction(mid);
    if (std::abs(f - target) <= opt.tolerance) return mid;
    if (f > target)
      lo = mid;
    else
      hi = mid;
  }
  return mid;
}

}  // namespace irr
