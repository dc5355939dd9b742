#pragma once

// JSON (de)serialization of configs, models and reports, and TSV tables.

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "irr/bench.hpp"
#include "irr/corruption.hpp"
#include "irr/dataset.hpp"
#include "irr/errors.hpp"
#include "irr/imputation.hpp"
#include "irr/kernel.hpp"
#include "irr/solver.hpp"

namespace irr {

using json = nlohmann::json;

namespace detail {

inline json matrix_to_json(const MatrixXd& A) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < A.cols(); ++j) r.push_back(A(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw PreconditionError("matrix must be a JSON array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.front().size()) : 0;
  MatrixXd A(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols) throw DimensionError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) A(i, c) = r[static_cast<std::size_t>(c)].get<double>();
  }
  return A;
}

inline json vector_to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// NaN and infinities become null.
inline json real(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline double real_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configs

inline void to_json(json& j, const SolverConfig& c) {
  j = json{{"tol", c.tol},
           {"max_outer", c.max_outer},
           {"inner_steps", c.inner_steps},
           {"eps_psd", c.eps_psd},
           {"master", c.master == MasterRule::Bundle ? "bundle" : "subgradient"},
           {"step_rule", c.step_rule == StepRule::Raw ? "raw" : "normalized"}};
}

/// Missing keys keep their defaults.
inline void from_json(const json& j, SolverConfig& c) {
  c = SolverConfig{};
  if (j.contains("tol")) c.tol = j.at("tol").get<double>();
  if (j.contains("max_outer")) c.max_outer = j.at("max_outer").get<int>();
  if (j.contains("inner_steps")) c.inner_steps = j.at("inner_steps").get<int>();
  if (j.contains("eps_psd")) c.eps_psd = j.at("eps_psd").get<double>();
  if (j.contains("master")) {
    const auto s = j.at("master").get<std::string>();
    if (s == "bundle")
      c.master = MasterRule::Bundle;
    else if (s == "subgradient")
      c.master = MasterRule::Subgradient;
    else
      throw PreconditionError("unknown master '" + s + "'");
  }
  if (j.contains("step_rule")) {
    const auto s = j.at("step_rule").get<std::string>();
    if (s == "raw")
      c.step_rule = StepRule::Raw;
    else if (s == "normalized")
      c.step_rule = StepRule::Normalized;
    else
      throw PreconditionError("unknown step_rule '" + s + "'");
  }
  validate(c);
}

inline void to_json(json& j, const CorruptionSpec& c) {
  j = json{{"kind", to_string(c.kind)},
           {"beta", c.beta},
           {"block_size", c.block_size},
           {"eligible_blocks", c.eligible_blocks},
           {"layout", c.layout == BlockLayout::ImageColumn ? "image_column" : "contiguous"},
           {"seed", c.seed}};
}

inline void from_json(const json& j, CorruptionSpec& c) {
  c = CorruptionSpec{};
  c.kind = corruption_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("beta")) c.beta = j.at("beta").get<double>();
  if (j.contains("block_size")) c.block_size = j.at("block_size").get<std::size_t>();
  if (j.contains("eligible_blocks")) c.eligible_blocks = j.at("eligible_blocks").get<std::vector<std::size_t>>();
  if (j.contains("layout")) {
    const auto s = j.at("layout").get<std::string>();
    if (s == "image_column")
      c.layout = BlockLayout::ImageColumn;
    else if (s == "contiguous")
      c.layout = BlockLayout::Contiguous;
    else
      throw PreconditionError("unknown block layout '" + s + "'");
  }
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

// ---------------------------------------------------------------------------
// Models

inline void to_json(json& j, const ImputationModel& m) { j = json{{"gamma", m.gamma}, {"M", detail::matrix_to_json(m.M)}}; }

inline void from_json(const json& j, ImputationModel& m) {
  m.gamma = j.at("gamma").get<double>();
  m.M = detail::matrix_from_json(j.at("M"));
}

inline void to_json(json& j, const BaselineImputer& b) {
  j = json{{"kind", to_string(b.kind)}, {"warnings", b.warnings}};
  if (b.kind == BaselineKind::Mean) j["means"] = detail::vector_to_json(b.means);
  if (b.kind == BaselineKind::Independent) j["M"] = detail::matrix_to_json(b.M_ind);
}

inline void from_json(const json& j, BaselineImputer& b) {
  b = BaselineImputer{};
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "zero") {
    b.kind = BaselineKind::Zero;
  } else if (kind == "mean") {
    b.kind = BaselineKind::Mean;
    b.means = detail::vector_from_json(j.at("means"));
  } else if (kind == "independent") {
    b.kind = BaselineKind::Independent;
    b.M_ind = detail::matrix_from_json(j.at("M"));
  } else {
    throw PreconditionError("unknown imputer kind '" + kind + "'");
  }
  if (j.contains("warnings")) b.warnings = j.at("warnings").get<std::vector<std::string>>();
}

inline void to_json(json& j, const SolverDiagnostics& d) {
  j = json{{"iterations", d.iterations},         {"gap", detail::real(d.gap)},
           {"cuts", d.cuts},                     {"planes", d.planes},
           {"objective", detail::real(d.objective)}, {"lower_bound", detail::real(d.lower_bound)},
           {"min_eigenvalue", d.min_eigenvalue}, {"converged", d.converged}};
}

inline void from_json(const json& j, SolverDiagnostics& d) {
  d.iterations = j.at("iterations").get<int>();
  d.gap = detail::real_from(j.at("gap"));
  d.cuts = j.at("cuts").get<int>();
  d.planes = j.value("planes", 0);
  d.objective = detail::real_from(j.at("objective"));
  d.lower_bound = j.contains("lower_bound") ? detail::real_from(j.at("lower_bound")) : 0.0;
  d.min_eigenvalue = j.value("min_eigenvalue", 0.0);
  d.converged = j.at("converged").get<bool>();
}

/// The model file carries the training rows, which the dual predictor needs.
inline void to_json(json& j, const IrrSolution& s) {
  require(s.train != nullptr, "solution has no training data");
  json N = json::array();
  for (const auto& slice : s.N.slices) N.push_back(detail::matrix_to_json(slice));
  j = json{{"alpha", detail::vector_to_json(s.alpha)},
           {"M", detail::matrix_to_json(s.M)},
           {"N", std::move(N)},
           {"hp", {{"lambda", s.hp.lambda}, {"gamma", s.hp.gamma}}},
           {"diagnostics", s.diagnostics},
           {"train",
            {{"X", detail::matrix_to_json(s.train->X)},
             {"Z", detail::matrix_to_json(s.train->Z)},
             {"y", detail::vector_to_json(s.train->y)}}}};
}

inline void from_json(const json& j, IrrSolution& s) {
  s.alpha = detail::vector_from_json(j.at("alpha"));
  s.M = detail::matrix_from_json(j.at("M"));
  s.N.slices.clear();
  for (const auto& slice : j.at("N")) s.N.slices.push_back(detail::matrix_from_json(slice));
  s.hp.lambda = j.at("hp").at("lambda").get<double>();
  s.hp.gamma = j.at("hp").at("gamma").get<double>();
  s.N.gamma2 = s.hp.gamma * s.hp.gamma;
  s.diagnostics = j.at("diagnostics").get<SolverDiagnostics>();
  const auto& t = j.at("train");
  s.train = std::make_shared<const Dataset>(make_dataset(detail::matrix_from_json(t.at("X")),
                                                         detail::matrix_from_json(t.at("Z")),
                                                         detail::vector_from_json(t.at("y"))));
  const auto d = s.train->dim();
  require_dims(s.alpha.size() == s.train->rows(), "alpha length does not match the training rows");
  require_dims(s.M.rows() == d && s.M.cols() == d && s.N.dim() == d, "model dimensions disagree");
}

// ---------------------------------------------------------------------------
// Reports

inline void to_json(json& j, const GridCell& c) {
  json r = json::array();
  for (double x : c.trial_rmse) r.push_back(detail::real(x));
  j = json{{"lambda_exp", c.lambda_exp}, {"trial_rmse", std::move(r)}, {"failed", c.failed},
           {"nonconverged", c.nonconverged}};
  j["gamma_exp"] = c.gamma_exp ? json(*c.gamma_exp) : json(nullptr);
}

inline void to_json(json& j, const MethodResult& r) {
  json trials = json::array();
  for (double x : r.trial_rmse) trials.push_back(detail::real(x));
  j = json{{"method", to_string(r.method)},
           {"rmse_mean", detail::real(r.rmse_mean)},
           {"rmse_std", detail::real(r.rmse_std)},
           {"best_lambda", detail::real(r.best_lambda)},
           {"best_gamma", r.best_gamma ? json(*r.best_gamma) : json(nullptr)},
           {"trial_rmse", std::move(trials)},
           {"cells_scored", r.cells_scored},
           {"cells_failed", r.cells_failed},
           {"cells_nonconverged", r.cells_nonconverged},
           {"grid", r.grid}};
}

inline void to_json(json& j, const ExperimentReport& r) {
  j = json{{"methods", r.methods},
           {"beta", r.beta},
           {"fraction_remaining", {{"mean", r.fraction_mean}, {"std", r.fraction_std}, {"trials", r.trial_fraction}}},
           {"warnings", r.warnings},
           {"runtime_seconds", r.runtime_seconds}};
  if (r.bounds) {
    const auto& b = *r.bounds;
    j["bounds"] = {{"B", b.inputs.B},         {"R", b.inputs.R},
                   {"gamma", b.inputs.gamma}, {"lambda", b.inputs.lambda},
                   {"d", b.inputs.d},         {"m", b.inputs.m},
                   {"rademacher_bound", b.rademacher},
                   {"generalization_gap_delta_0.05", b.generalization_gap}};
  }
}

template <class T>
void write_json_file(const std::string& path, const T& value) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << json(value).dump(2) << '\n';
  if (!out) throw IoError("write failure on '" + path + "'");
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("invalid JSON in '" + path + "': " + e.what());
  }
}

/// One row per method: mean +- std, chosen hyperparameters, then the mean
/// fraction of features remaining.
inline void write_report_tsv(std::ostream& out, const ExperimentReport& r) {
  out << "method\trmse_mean\trmse_std\tbest_lambda\tbest_gamma\tfraction_remaining\n";
  out << std::setprecision(6);
  for (const auto& m : r.methods) {
    out << to_string(m.method) << '\t' << m.rmse_mean << '\t' << m.rmse_std << '\t' << m.best_lambda << '\t';
    if (m.best_gamma)
      out << *m.best_gamma;
    else
      out << '-';
    out << '\t' << (m.method == Method::NoCorr ? 1.0 : r.fraction_mean) << '\n';
  }
}

inline void write_sweep_tsv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "fraction\tmethod\trmse_mean\trmse_std\n";
  out << std::setprecision(6);
  for (const auto& row : rows)
    out << row.fraction << '\t' << to_string(row.method) << '\t' << row.rmse_mean << '\t' << row.rmse_std << '\n';
}

template <class Writer, class T>
void write_text_file(const std::string& path, Writer writer, const T& value) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  writer(out, value);
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace irr
