#pragma once

// Linear imputation phi_M(xt, z) = xt + diag(1 - z) M^T xt and the zero, mean
// and independent-regression baselines.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "irr/dataset.hpp"
#include "irr/errors.hpp"

namespace irr {

/// Column i of M holds the weights that predict feature i from the others.
struct ImputationModel {
  MatrixXd M;
  double gamma = 0.0;  // Frobenius budget ||M||_F <= gamma
};

/// Radially scales M onto the ball ||M||_F <= gamma.
inline MatrixXd project_frobenius(const MatrixXd& M, double gamma) {
  const double n = M.norm();
  return n > gamma && n > 0.0 ? MatrixXd(M * (gamma / n)) : M;
}

inline VectorXd impute_linear(const MatrixXd& M, const VectorXd& xt, const VectorXd& z) {
  require_dims(M.rows() == xt.size() && M.cols() == xt.size() && z.size() == xt.size(),
               "imputation operands disagree in dimension");
  VectorXd out = xt;
  const VectorXd filled = M.transpose() * xt;
  for (Eigen::Index k = 0; k < xt.size(); ++k)
    if (z(k) == 0.0) out(k) += filled(k);
  return out;
}

inline VectorXd impute_linear(const ImputationModel& model, const CorruptedSample& s) {
  return impute_linear(model.M, s.xt, s.z);
}

/// Row-wise imputation of a whole dataset: X + (1 - Z) o (X M).
inline MatrixXd impute_linear(const MatrixXd& M, const Dataset& ds) {
  require_dims(M.rows() == ds.dim() && M.cols() == ds.dim(), "imputation matrix must be d x d");
  return ds.X + ds.missing().cwiseProduct(ds.X * M);
}

enum class BaselineKind { Zero, Mean, Independent };

inline const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::Zero: return "zero";
    case BaselineKind::Mean: return "mean";
    case BaselineKind::Independent: return "independent";
  }
  return "?";
}

struct BaselineImputer {
  BaselineKind kind = BaselineKind::Zero;
  VectorXd means;   // Mean only
  MatrixXd M_ind;   // Independent only; zero diagonal
  std::vector<std::string> warnings;
};

inline BaselineImputer zero_imputer() { return {}; }

/// Per-feature average over observed training entries.
inline BaselineImputer fit_mean(const Dataset& train) {
  BaselineImputer imp;
  imp.kind = BaselineKind::Mean;
  const VectorXd counts = train.Z.colwise().sum().transpose();
  const VectorXd sums = train.X.cwiseProduct(train.Z).colwise().sum().transpose();
  imp.means = VectorXd::Zero(train.dim());
  for (Eigen::Index k = 0; k < train.dim(); ++k) {
    if (counts(k) > 0.0)
      imp.means(k) = sums(k) / counts(k);
    else
      imp.warnings.push_back("feature " + std::to_string(k) + " never observed; mean set to 0");
  }
  return imp;
}

/// Column i of M_ind is the ridge-stabilized least-squares predictor of feature
/// i from the other (zero-filled) features, fit on rows where i is observed.
inline BaselineImputer fit_independent(const Dataset& train, double ridge_eps = 1e-8) {
  require(train.rows() > 0, "training set is empty");
  require(ridge_eps > 0.0, "ridge_eps must be positive");
  BaselineImputer imp;
  imp.kind = BaselineKind::Independent;
  const auto d = train.dim();
  imp.M_ind = MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index r = 0; r < train.rows(); ++r)
      if (train.Z(r, i) == 1.0) rows.push_back(r);
    if (rows.empty()) {
      imp.warnings.push_back("feature " + std::to_string(i) + " never observed; imputation column set to 0");
      continue;
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    MatrixXd A(n, d - 1);
    VectorXd b(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto src = rows[static_cast<std::size_t>(r)];
      b(r) = train.X(src, i);
      Eigen::Index c = 0;
      for (Eigen::Index j = 0; j < d; ++j)
        if (j != i) A(r, c++) = train.X(src, j);
    }
    MatrixXd normal = A.transpose() * A;
    normal.diagonal().array() += ridge_eps;
    const VectorXd v = normal.llt().solve(A.transpose() * b);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < d; ++j)
      if (j != i) imp.M_ind(j, i) = v(c++);
  }
  return imp;
}

inline VectorXd apply_baseline(const BaselineImputer& imp, const CorruptedSample& s) {
  require_dims(s.z.size() == s.xt.size(), "sample mask and features disagree in dimension");
  switch (imp.kind) {
    case BaselineKind::Zero: return s.xt;
    case BaselineKind::Mean: {
      require_dims(imp.means.size() == s.xt.size(), "imputer and sample disagree in dimension");
      VectorXd out = s.xt;
      for (Eigen::Index k = 0; k < out.size(); ++k)
        if (s.z(k) == 0.0) out(k) = imp.means(k);
      return out;
    }
    case BaselineKind::Independent: return impute_linear(imp.M_ind, s.xt, s.z);
  }
  throw PreconditionError("unknown imputer kind");
}

/// Imputes every row of a dataset.
inline MatrixXd apply_baseline(const BaselineImputer& imp, const Dataset& ds) {
  switch (imp.kind) {
    case BaselineKind::Zero: return ds.X;
    case BaselineKind::Mean: {
      require_dims(imp.means.size() == ds.dim(), "imputer and dataset disagree in dimension");
      return ds.X + ds.missing() * imp.means.asDiagonal();
    }
    case BaselineKind::Independent: return impute_linear(imp.M_ind, ds);
  }
  throw PreconditionError("unknown imputer kind");
}

}  // namespace irr
