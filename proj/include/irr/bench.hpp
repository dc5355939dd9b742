#pragma once

// Benchmark protocol: repeated random train/test splits, corruption of both
// sides, a grid search per method, and per-method summaries at the grid point
// with the lowest mean test RMSE across trials.
//
// Seeds: trial t uses derive_seed(master_seed, t + 1); below that, stream 0
// shuffles the split, stream 1 corrupts the training rows and stream 2 the
// test rows. beta calibration uses derive_seed(master_seed, 0).

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "irr/corruption.hpp"
#include "irr/dataset.hpp"
#include "irr/errors.hpp"
#include "irr/imputation.hpp"
#include "irr/solver.hpp"
#include "irr/theory.hpp"

namespace irr {

enum class Method { Zero, Mean, Independent, Irr, NoCorr };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Zero: return "zero";
    case Method::Mean: return "mean";
    case Method::Independent: return "ind";
    case Method::Irr: return "irr";
    case Method::NoCorr: return "nocorr";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "zero") return Method::Zero;
  if (s == "mean") return Method::Mean;
  if (s == "ind" || s == "independent") return Method::Independent;
  if (s == "irr") return Method::Irr;
  if (s == "nocorr") return Method::NoCorr;
  throw PreconditionError("unknown method '" + s + "'");
}

inline std::vector<int> default_grid() {
  std::vector<int> g;
  for (int e = -12; e <= 10; ++e) g.push_back(e);
  return g;
}

struct ExperimentSpec {
  std::string dataset_path;
  CsvOptions csv;
  /// nullopt means the data's own missing entries are used ("native").
  std::optional<CorruptionSpec> corruption = CorruptionSpec{};
  std::optional<double> target_fraction;
  std::size_t train_size = 1000;
  std::size_t trials = 5;
  std::vector<Method> methods{Method::Zero, Method::Mean, Method::Independent, Method::Irr, Method::NoCorr};
  std::vector<int> lambda_grid = default_grid();  // log2 exponents
  std::vector<int> gamma_grid = default_grid();   // log2 exponents
  bool full_grid = false;
  int coarse_stride = 3;
  std::uint64_t master_seed = 0;
  SolverConfig solver;
  bool normalize_labels = true;
  bool report_bounds = false;
  bool verbose = false;
};

inline void validate(const ExperimentSpec& spec) {
  require(spec.trials >= 1, "trials must be at least 1");
  require(!spec.methods.empty(), "method list is empty");
  require(!spec.lambda_grid.empty() && !spec.gamma_grid.empty(), "grid is empty");
  require(spec.train_size >= 1, "train_size must be at least 1");
  require(spec.coarse_stride >= 1, "coarse_stride must be at least 1");
  if (spec.target_fraction)
    require(*spec.target_fraction > 0.0 && *spec.target_fraction <= 1.0, "target fraction must lie in (0, 1]");
  validate(spec.solver);
}

struct GridCell {
  int lambda_exp = 0;
  std::optional<int> gamma_exp;
  std::vector<double> trial_rmse;  // NaN where the fit failed
  int failed = 0;
  int nonconverged = 0;

  double mean() const {
    double s = 0.0;
    for (double r : trial_rmse) s += r;
    return trial_rmse.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(trial_rmse.size());
  }
};

struct MethodResult {
  Method method = Method::Zero;
  double rmse_mean = std::numeric_limits<double>::quiet_NaN();
  double rmse_std = std::numeric_limits<double>::quiet_NaN();
  double best_lambda = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> best_gamma;
  std::vector<double> trial_rmse;
  std::size_t cells_scored = 0;
  std::size_t cells_failed = 0;
  std::size_t cells_nonconverged = 0;
  std::vector<GridCell> grid;  // every evaluated cell
};

struct BoundReport {
  BoundInputs inputs;
  double rademacher = 0.0;
  double generalization_gap = 0.0;  // delta = 0.05
};

struct ExperimentReport {
  std::vector<MethodResult> methods;
  double beta = 0.0;
  double fraction_mean = 1.0;
  double fraction_std = 0.0;
  std::vector<double> trial_fraction;
  std::optional<BoundReport> bounds;
  std::vector<std::string> warnings;
  double runtime_seconds = 0.0;

  const MethodResult* find(Method m) const {
    for (const auto& r : methods)
      if (r.method == m) return &r;
    return nullptr;
  }
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct Trial {
  Dataset train;
  Dataset test;
  Dataset clean_train;
  Dataset clean_test;
  double fraction = 1.0;
};

inline std::vector<Trial> make_trials(const Dataset& data, const ExperimentSpec& spec, double beta) {
  require(spec.train_size < static_cast<std::size_t>(data.rows()),
          "train_size must leave at least one test row (have " + std::to_string(data.rows()) + " rows)");
  std::vector<Trial> trials;
  for (std::size_t t = 0; t < spec.trials; ++t) {
    const auto ts = derive_seed(spec.master_seed, t + 1);
    auto [train, test] = split(data, spec.train_size, derive_seed(ts, 0));
    Trial tr;
    tr.clean_train = train;
    tr.clean_test = test;
    if (spec.corruption) {
      CorruptionSpec cs = *spec.corruption;
      cs.beta = beta;
      cs.seed = derive_seed(ts, 1);
      tr.train = train.with_mask(corrupt(train.X, cs));
      cs.seed = derive_seed(ts, 2);
      tr.test = test.with_mask(corrupt(test.X, cs));
    } else {
      tr.train = std::move(train);
      tr.test = std::move(test);
    }
    tr.fraction = stats(tr.train).fraction_remaining;
    trials.push_back(std::move(tr));
  }
  return trials;
}

inline BaselineImputer fit_imputer(Method m, const Dataset& train) {
  switch (m) {
    case Method::Zero:
    case Method::NoCorr: return zero_imputer();
    case Method::Mean: return fit_mean(train);
    case Method::Independent: return fit_independent(train);
    default: break;
  }
  throw PreconditionError("method has no baseline imputer");
}

inline void log_line(const ExperimentSpec& spec, const std::string& msg) {
  if (spec.verbose) std::clog << msg << '\n';
}

/// Scores one IRR grid cell on every trial.
inline GridCell score_irr_cell(const std::vector<Trial>& trials, int le, int ge, const ExperimentSpec& spec) {
  GridCell cell;
  cell.lambda_exp = le;
  cell.gamma_exp = ge;
  const Hyperparams hp{std::ldexp(1.0, le), std::ldexp(1.0, ge)};
  for (std::size_t t = 0; t < trials.size(); ++t) {
    try {
      const auto sol = solve_irr(trials[t].train, hp, spec.solver);
      if (!sol.diagnostics.converged) ++cell.nonconverged;
      cell.trial_rmse.push_back(rmse(sol, trials[t].test));
    } catch (const Error& e) {
      ++cell.failed;
      cell.trial_rmse.push_back(std::numeric_limits<double>::quiet_NaN());
      log_line(spec, std::string("irr cell failed: ") + e.what());
    }
  }
  log_line(spec, "irr lambda=2^" + std::to_string(le) + " gamma=2^" + std::to_string(ge) +
                     " mean_rmse=" + std::to_string(cell.mean()));
  return cell;
}

inline bool better(const GridCell& a, const GridCell* b) {
  const double ma = a.mean();
  if (std::isnan(ma)) return false;
  return b == nullptr || ma < b->mean();
}

inline MethodResult summarize(Method m, std::vector<GridCell> cells) {
  MethodResult r;
  r.method = m;
  const GridCell* best = nullptr;
  for (const auto& c : cells) {
    ++r.cells_scored;
    r.cells_failed += static_cast<std::size_t>(c.failed);
    r.cells_nonconverged += static_cast<std::size_t>(c.nonconverged);
    if (better(c, best)) best = &c;
  }
  if (best != nullptr) {
    r.trial_rmse = best->trial_rmse;
    r.rmse_mean = mean_of(r.trial_rmse);
    r.rmse_std = std_of(r.trial_rmse);
    r.best_lambda = std::ldexp(1.0, best->lambda_exp);
    if (best->gamma_exp) r.best_gamma = std::ldexp(1.0, *best->gamma_exp);
  }
  r.grid = std::move(cells);
  return r;
}

inline std::vector<int> coarse(const std::vector<int>& grid, int stride) {
  std::vector<int> out;
  for (std::size_t i = 0; i < grid.size(); i += static_cast<std::size_t>(stride)) out.push_back(grid[i]);
  return out;
}

/// Grid neighbours within one position of `e`, including `e`.
inline std::vector<int> neighbours(const std::vector<int>& grid, int e) {
  std::vector<int> out;
  const auto it = std::find(grid.begin(), grid.end(), e);
  if (it == grid.end()) return {e};
  const auto i = static_cast<std::ptrdiff_t>(it - grid.begin());
  for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - 1);
       j <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(grid.size()) - 1, i + 1); ++j)
    out.push_back(grid[static_cast<std::size_t>(j)]);
  return out;
}

inline MethodResult run_irr(const std::vector<Trial>& trials, const ExperimentSpec& spec) {
  std::map<std::pair<int, int>, GridCell> done;
  const auto eval = [&](int le, int ge) {
    const auto key = std::make_pair(le, ge);
    if (!done.count(key)) done.emplace(key, score_irr_cell(trials, le, ge, spec));
  };
  if (spec.full_grid) {
    for (int le : spec.lambda_grid)
      for (int ge : spec.gamma_grid) eval(le, ge);
  } else {
    for (int le : coarse(spec.lambda_grid, spec.coarse_stride))
      for (int ge : coarse(spec.gamma_grid, spec.coarse_stride)) eval(le, ge);
    const GridCell* best = nullptr;
    for (const auto& [k, c] : done)
      if (better(c, best)) best = &c;
    if (best != nullptr) {
      const int ble = best->lambda_exp;
      const int bge = *best->gamma_exp;
      for (int le : neighbours(spec.lambda_grid, ble))
        for (int ge : neighbours(spec.gamma_grid, bge)) eval(le, ge);
    }
  }
  std::vector<GridCell> cells;
  for (auto& [k, c] : done) cells.push_back(std::move(c));
  return summarize(Method::Irr, std::move(cells));
}

inline MethodResult run_baseline(Method m, const std::vector<Trial>& trials, const ExperimentSpec& spec) {
  std::vector<GridCell> cells;
  for (int le : spec.lambda_grid) {
    GridCell c;
    c.lambda_exp = le;
    cells.push_back(std::move(c));
  }
  for (const auto& tr : trials) {
    const Dataset& train = m == Method::NoCorr ? tr.clean_train : tr.train;
    const Dataset& test = m == Method::NoCorr ? tr.clean_test : tr.test;
    const BaselineImputer imp = fit_imputer(m, train);
    const MatrixXd phi = apply_baseline(imp, train);
    const MatrixXd K = phi * phi.transpose();
    const MatrixXd phi_test = apply_baseline(imp, test);
    for (auto& c : cells) {
      try {
        const VectorXd alpha = ridge_alpha(K, train.y, std::ldexp(1.0, c.lambda_exp));
        c.trial_rmse.push_back(rmse(VectorXd(phi_test * (phi.transpose() * alpha)), test.y));
      } catch (const Error& e) {
        ++c.failed;
        c.trial_rmse.push_back(std::numeric_limits<double>::quiet_NaN());
        log_line(spec, std::string(to_string(m)) + " cell failed: " + e.what());
      }
    }
  }
  return summarize(m, std::move(cells));
}

}  // namespace detail

/// Runs the protocol on an in-memory dataset (already normalized as desired).
inline ExperimentReport run_experiment(const Dataset& data, const ExperimentSpec& spec) {
  validate(spec);
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.warnings = data.warnings;

  if (spec.corruption) {
    const auto kind = spec.corruption->kind;
    if (spec.target_fraction && kind != CorruptionKind::ColumnBlock)
      report.beta = calibrate_beta(data.X, kind, *spec.target_fraction, derive_seed(spec.master_seed, 0));
    else
      report.beta = spec.corruption->beta;
  }
  const auto trials = detail::make_trials(data, spec, report.beta);
  for (const auto& tr : trials) report.trial_fraction.push_back(tr.fraction);
  report.fraction_mean = detail::mean_of(report.trial_fraction);
  report.fraction_std = detail::std_of(report.trial_fraction);

  for (Method m : spec.methods) {
    if (m == Method::NoCorr && !spec.corruption) {
      report.warnings.push_back("nocorr skipped: data carries native missingness and no clean copy exists");
      continue;
    }
    detail::log_line(spec, std::string("method ") + to_string(m));
    report.methods.push_back(m == Method::Irr ? detail::run_irr(trials, spec) : detail::run_baseline(m, trials, spec));
  }

  if (spec.report_bounds) {
    const auto* irr = report.find(Method::Irr);
    if (irr != nullptr && irr->best_gamma) {
      BoundReport b;
      b.inputs = measure_bounds(trials.front().train, Hyperparams{irr->best_lambda, *irr->best_gamma});
      b.rademacher = rademacher_bound(b.inputs);
      b.generalization_gap = generalization_gap(b.inputs, 0.05);
      report.bounds = b;
    } else {
      report.warnings.push_back("bounds requested but no IRR result is available");
    }
  }
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Loads spec.dataset_path, min-max normalizes it and runs the protocol.
inline ExperimentReport run_experiment(const ExperimentSpec& spec) {
  validate(spec);
  const Dataset raw = load_csv(spec.dataset_path, spec.csv);
  return run_experiment(normalize(raw, NormalizeOptions{spec.normalize_labels}), spec);
}

struct SweepRow {
  double fraction = 1.0;
  Method method = Method::Zero;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
};

/// One experiment per target fraction; beta is recalibrated each time.
inline std::vector<SweepRow> sweep_fraction(const Dataset& data, ExperimentSpec spec,
                                            const std::vector<double>& fractions) {
  require(!fractions.empty(), "fraction list is empty");
  require(spec.corruption.has_value() && spec.corruption->kind != CorruptionKind::ColumnBlock,
          "sweeps need independent or dependent corruption");
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    require(f > 0.0 && f <= 1.0, "fractions must lie in (0, 1]");
    spec.target_fraction = f;
    const auto rep = run_experiment(data, spec);
    for (const auto& r : rep.methods) rows.push_back({f, r.method, r.rmse_mean, r.rmse_std});
  }
  return rows;
}

inline std::vector<SweepRow> sweep_fraction(const ExperimentSpec& spec, const std::vector<double>& fractions) {
  const Dataset raw = load_csv(spec.dataset_path, spec.csv);
  return sweep_fraction(normalize(raw, NormalizeOptions{spec.normalize_labels}), spec, fractions);
}

/// Features min-max normalized, labels replaced by +1 (digit) / -1 (other).
inline Dataset one_vs_all_dataset(const Dataset& raw, int digit) {
  require(digit >= 0 && digit <= 9, "digit must be in 0..9");
  require(raw.dim() == 64, "one-vs-all expects 64 pixel features");
  Dataset ds = normalize(raw, NormalizeOptions{false});
  bool any = false;
  for (Eigen::Index i = 0; i < ds.rows(); ++i) {
    const bool hit = raw.y(i) == static_cast<double>(digit);
    any = any || hit;
    ds.y(i) = hit ? 1.0 : -1.0;
  }
  require(any, "digit " + std::to_string(digit) + " does not occur; labels would all be -1");
  return ds;
}

/// The three central image columns, one removed per row.
inline CorruptionSpec central_column_corruption() {
  CorruptionSpec cs;
  cs.kind = CorruptionKind::ColumnBlock;
  cs.block_size = 8;
  cs.eligible_blocks = {2, 3, 4};
  cs.layout = BlockLayout::ImageColumn;
  return cs;
}

inline ExperimentReport run_onevsall(const Dataset& raw, ExperimentSpec spec, int digit) {
  spec.corruption = central_column_corruption();
  spec.target_fraction.reset();
  spec.normalize_labels = false;
  return run_experiment(one_vs_all_dataset(raw, digit), spec);
}

inline ExperimentReport run_onevsall(const ExperimentSpec& spec, int digit) {
  return run_onevsall(load_csv(spec.dataset_path, spec.csv), spec, digit);
}

}  // namespace irr
