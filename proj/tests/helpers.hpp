#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "irr/dataset.hpp"
#include "irr/rng.hpp"

namespace irr::fixtures {

/// Features uniform in [0, 1], each entry observed with probability `keep`,
/// labels a noisy linear function of the clean features.
inline Dataset random_dataset(Eigen::Index m, Eigen::Index d, double keep, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd X(m, d);
  MatrixXd Z(m, d);
  VectorXd w(d);
  for (Eigen::Index k = 0; k < d; ++k) w(k) = rng.normal();
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index k = 0; k < d; ++k) {
      X(i, k) = rng.uniform();
      Z(i, k) = rng.uniform() < keep ? 1.0 : 0.0;
    }
  VectorXd y = X * w;
  for (Eigen::Index i = 0; i < m; ++i) y(i) += 0.1 * rng.normal();
  return make_dataset(std::move(X), std::move(Z), std::move(y));
}

inline MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  MatrixXd A(r, c);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
  return A;
}

/// Uniformly random direction scaled to Frobenius norm `radius * u^(1/n)`,
/// i.e. a uniform draw from the ball.
inline MatrixXd random_in_ball(Eigen::Index r, Eigen::Index c, double radius, Rng& rng) {
  MatrixXd A = random_matrix(r, c, rng);
  const double n = static_cast<double>(A.size());
  return A * (radius * std::pow(rng.uniform(), 1.0 / n) / A.norm());
}

/// Integer-formula instance used for frozen reference values (m = 10, d = 3).
inline Dataset formula_instance() {
  const Eigen::Index m = 10;
  const Eigen::Index d = 3;
  MatrixXd X(m, d);
  MatrixXd Z(m, d);
  VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      X(i, j) = static_cast<double>((i * 7 + j * 3) % 11) / 10.0;
      Z(i, j) = (i + 2 * j) % 4 != 0 ? 1.0 : 0.0;
    }
    y(i) = static_cast<double>((i * 5) % 9) / 8.0;
  }
  return make_dataset(std::move(X), std::move(Z), std::move(y));
}

}  // namespace irr::fixtures
