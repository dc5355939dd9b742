#pragma once

// Rademacher-complexity bound for the imputed ridge class, the resulting
// generalization gap, and a Monte-Carlo lower estimate of the empirical
// Rademacher complexity.
//
// The class contains h(x0, z0) = sum_i alpha_i k_MN((x_i, z_i), (x0, z0)) with
// ||alpha|| <= B / (lambda sqrt(m)), ||M||_F <= gamma, ||N||_F <= gamma^2.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

#include "irr/dataset.hpp"
#include "irr/errors.hpp"
#include "irr/kernel.hpp"
#include "irr/rng.hpp"
#include "irr/solver.hpp"

namespace irr {

struct BoundInputs {
  double B = 1.0;       // max |y|
  double R = 1.0;       // max ||x~||
  double gamma = 0.0;
  double lambda = 1.0;
  std::size_t d = 1;
  std::size_t m = 1;
};

inline void validate(const BoundInputs& b) {
  require(b.B >= 0.0 && b.R >= 0.0 && b.gamma >= 0.0, "B, R and gamma must be non-negative");
  require(b.lambda > 0.0, "lambda must be positive");
  require(b.d >= 1 && b.m >= 1, "d and m must be at least 1");
}

/// B and R measured from a sample.
inline BoundInputs measure_bounds(const Dataset& ds, const Hyperparams& hp) {
  require(ds.rows() > 0, "sample is empty");
  BoundInputs b;
  b.B = ds.y.cwiseAbs().maxCoeff();
  b.R = ds.X.rowwise().norm().maxCoeff();
  b.gamma = hp.gamma;
  b.lambda = hp.lambda;
  b.d = static_cast<std::size_t>(ds.dim());
  b.m = static_cast<std::size_t>(ds.rows());
  return b;
}

/// (1 + gamma + (gamma + gamma^2) sqrt(d)) B R^2 / (lambda sqrt(m)).
inline double rademacher_bound(const BoundInputs& b) {
  validate(b);
  const double g = b.gamma;
  const double d = static_cast<double>(b.d);
  const double m = static_cast<double>(b.m);
  return (1.0 + g + (g + g * g) * std::sqrt(d)) * b.B * b.R * b.R / (b.lambda * std::sqrt(m));
}

/// C (C sqrt(d/m) + sqrt(8 ln(2/delta) / m)) with C = B R^2 (1 + gamma)^2 / lambda.
inline double generalization_gap(const BoundInputs& b, double delta) {
  validate(b);
  require(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
  const double c = b.B * b.R * b.R * (1.0 + b.gamma) * (1.0 + b.gamma) / b.lambda;
  const double d = static_cast<double>(b.d);
  const double m = static_cast<double>(b.m);
  return c * (c * std::sqrt(d / m) + std::sqrt(8.0 * std::log(2.0 / delta) / m));
}

namespace detail {

inline MatrixXd random_on_sphere(Eigen::Index rows, Eigen::Index cols, double radius, Rng& rng) {
  MatrixXd A(rows, cols);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
  const double n = A.norm();
  return n > 0.0 ? MatrixXd(A * (radius / n)) : MatrixXd(MatrixXd::Zero(rows, cols));
}

}  // namespace detail

/// Average over `n_sigma` sign vectors of the largest |sigma^T h| / m found
/// among `n_hyp` random (M, N) on their sphere boundaries. For fixed (M, N)
/// the supremum over alpha on its sphere is attained in closed form,
/// alpha = r K sigma / ||K sigma||, giving r ||K_MN sigma|| / m.
inline double empirical_rademacher(const Dataset& sample, const Hyperparams& hp, double B, std::size_t n_sigma,
                                   std::size_t n_hyp, std::uint64_t seed) {
  validate(hp);
  require(sample.rows() > 0, "sample is empty");
  require(n_sigma >= 1 && n_hyp >= 1, "need at least one sign draw and one hypothesis");
  const auto m = sample.rows();
  const auto d = sample.dim();
  const double r = B / (hp.lambda * std::sqrt(static_cast<double>(m)));

  std::vector<MatrixXd> kernels;
  kernels.reserve(n_hyp);
  Rng hyp_rng(derive_seed(seed, 0));
  for (std::size_t h = 0; h < n_hyp; ++h) {
    const MatrixXd M = detail::random_on_sphere(d, d, hp.gamma, hyp_rng);
    LiftedTensor N = LiftedTensor::zero(d, hp.gamma * hp.gamma);
    for (Eigen::Index k = 0; k < d; ++k) N[k] = detail::random_on_sphere(d, d, 1.0, hyp_rng);
    const double nn = N.norm();
    if (nn > 0.0) N *= hp.gamma * hp.gamma / nn;
    kernels.push_back(build_kmn(sample, M, N).K);
  }

  double total = 0.0;
  for (std::size_t s = 0; s < n_sigma; ++s) {
    Rng sign_rng(derive_seed(seed, s + 1));
    VectorXd sigma(m);
    for (Eigen::Index i = 0; i < m; ++i) sigma(i) = sign_rng.sign();
    double best = 0.0;
    for (const auto& K : kernels) best = std::max(best, r * (K * sigma).norm());
    total += best / static_cast<double>(m);
  }
  return total / static_cast<double>(n_sigma);
}

}  // namespace irr
