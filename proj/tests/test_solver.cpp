#include <gtest/gtest.h>

#include <vector>

#include "helpers.hpp"
#include "irr/solver.hpp"

using namespace irr;

namespace {

/// Gaussian elimination with partial pivoting.
VectorXd gauss_solve(MatrixXd A, VectorXd b) {
  const auto n = A.rows();
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index p = c;
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (std::abs(A(r, c)) > std::abs(A(p, c))) p = r;
    A.row(c).swap(A.row(p));
    std::swap(b(c), b(p));
    for (Eigen::Index r = c + 1; r < n; ++r) {
      const double f = A(r, c) / A(c, c);
      A.row(r) -= f * A.row(c);
      b(r) -= f * b(c);
    }
  }
  VectorXd x(n);
  for (Eigen::Index r = n - 1; r >= 0; --r) {
    double s = b(r);
    for (Eigen::Index c = r + 1; c < n; ++c) s -= A(r, c) * x(c);
    x(r) = s / A(r, r);
  }
  return x;
}

double exact_objective(const Dataset& ds, const MatrixXd& M, double lambda) {
  const double m = static_cast<double>(ds.rows());
  MatrixXd A = build_km(ds, M).K;
  A.diagonal().array() += m * lambda;
  return ds.y.dot(A.llt().solve(ds.y));
}

}  // namespace

TEST(RidgeAlpha, ScalarAndZeroKernel) {
  MatrixXd K(1, 1);
  K << 1.0;
  VectorXd y(1);
  y << 2.0;
  EXPECT_NEAR(ridge_alpha(K, y, 1.0)(0), 1.0, 1e-15);
  VectorXd y2(2);
  y2 << 0.3, -0.7;
  EXPECT_LE((ridge_alpha(MatrixXd::Zero(2, 2), y2, 0.5) - y2).norm(), 1e-15);
}

TEST(RidgeAlpha, MatchesGaussianElimination) {
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index m = 3 + static_cast<Eigen::Index>(rng.below(20));
    const MatrixXd B = fixtures::random_matrix(m, m, rng);
    const MatrixXd K = B * B.transpose();
    const VectorXd y = fixtures::random_matrix(m, 1, rng).col(0);
    const double lambda = 0.01 + rng.uniform();
    MatrixXd A = K;
    A.diagonal().array() += static_cast<double>(m) * lambda;
    const VectorXd expect = gauss_solve(A, y);
    EXPECT_LE((ridge_alpha(K, y, lambda) - expect).norm(), 1e-10 * std::max(1.0, expect.norm()));
  }
}

TEST(RidgeAlpha, Errors) {
  MatrixXd K = -10.0 * MatrixXd::Identity(2, 2);
  EXPECT_THROW(ridge_alpha(K, VectorXd::Ones(2), 1.0), FactorizationError);
  EXPECT_THROW(ridge_alpha(MatrixXd::Identity(2, 2), VectorXd::Ones(3), 1.0), DimensionError);
  EXPECT_THROW(ridge_alpha(MatrixXd::Identity(2, 2), VectorXd::Ones(2), 0.0), PreconditionError);
}

TEST(PrimalObjective, ZeroWeights) {
  const auto ds = fixtures::random_dataset(10, 3, 0.6, 2);
  const double expect = ds.y.squaredNorm() / 10.0;
  EXPECT_NEAR(primal_objective({VectorXd::Zero(3), MatrixXd::Identity(3, 3)}, ds, 0.3), expect, 1e-14);
}

TEST(PrimalObjective, ImputationIrrelevantWithoutCorruption) {
  Rng rng(3);
  const auto ds = fixtures::random_dataset(10, 3, 1.0, 3);
  const VectorXd w = fixtures::random_matrix(3, 1, rng).col(0);
  const double a = primal_objective({w, MatrixXd::Zero(3, 3)}, ds, 0.2);
  const double b = primal_objective({w, fixtures::random_matrix(3, 3, rng)}, ds, 0.2);
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(PrimalObjective, ElementwiseOracle) {
  Rng rng(4);
  const auto ds = fixtures::random_dataset(6, 3, 0.5, 4);
  const VectorXd w = fixtures::random_matrix(3, 1, rng).col(0);
  const MatrixXd M = fixtures::random_matrix(3, 3, rng);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < 6; ++i) {
    double pred = 0.0;
    for (Eigen::Index k = 0; k < 3; ++k) {
      double phi = ds.X(i, k);
      if (ds.Z(i, k) == 0.0)
        for (Eigen::Index j = 0; j < 3; ++j) phi += M(j, k) * ds.X(i, j);
      pred += w(k) * phi;
    }
    loss += (ds.y(i) - pred) * (ds.y(i) - pred);
  }
  const double expect = 0.5 * 0.7 * w.squaredNorm() + loss / 6.0;
  EXPECT_NEAR(primal_objective({w, M}, ds, 0.7), expect, 1e-12);
  EXPECT_THROW(primal_objective({VectorXd::Zero(2), M}, ds, 0.7), DimensionError);
}

TEST(SolveIrr, NoCorruptionEqualsKernelRidge) {
  const auto ds = fixtures::random_dataset(15, 3, 1.0, 5);
  const double lambda = 0.05;
  const auto sol = solve_irr(ds, {lambda, 2.0});
  const VectorXd alpha = ridge_alpha(MatrixXd(ds.X * ds.X.transpose()), ds.y, lambda);
  EXPECT_NEAR(sol.diagnostics.objective, ds.y.dot(alpha), 1e-10);
  const auto test = fixtures::random_dataset(10, 3, 0.7, 6);
  const VectorXd ridge_pred = test.X * (ds.X.transpose() * alpha);
  EXPECT_LE((IrrPredictor(sol).predict(test) - ridge_pred).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SolveIrr, ZeroGammaEqualsZeroImputation) {
  const auto ds = fixtures::random_dataset(15, 3, 0.6, 7);
  const auto sol = solve_irr(ds, {0.1, 0.0});
  EXPECT_EQ(sol.M.norm(), 0.0);
  EXPECT_EQ(sol.N.norm(), 0.0);
  const auto zero = fit_baseline_ridge(ds, zero_imputer(), 0.1);
  const auto test = fixtures::random_dataset(10, 3, 0.6, 8);
  EXPECT_LE((IrrPredictor(sol).predict(test) - zero.predict(test)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SolveIrr, FrozenReferenceValues) {
  // Optima of the relaxed problem for the integer-formula instance, computed
  // offline with an interior-point SDP solver.
  const auto ds = fixtures::formula_instance();
  struct Case {
    double lambda, gamma, optimum;
  };
  for (const Case c : {Case{0.0625, 1.0, 1.4019054267862177}, Case{0.015625, 2.0, 3.8259643730906157}}) {
    SolverConfig cfg;
    cfg.tol = 1e-5;
    const auto sol = solve_irr(ds, {c.lambda, c.gamma}, cfg);
    EXPECT_GE(sol.diagnostics.objective, c.optimum * (1.0 - 1e-6));
    EXPECT_LE(sol.diagnostics.objective, c.optimum * (1.0 + 2e-3));
    EXPECT_LE(sol.diagnostics.lower_bound, c.optimum * (1.0 + 1e-6));
  }
}

TEST(SolveIrr, SubgradientMasterKeepsBoundsValid) {
  const auto ds = fixtures::formula_instance();
  SolverConfig cfg;
  cfg.master = MasterRule::Subgradient;
  cfg.max_outer = 60;
  const auto sol = solve_irr(ds, {0.015625, 2.0}, cfg);
  const double optimum = 3.8259643730906157;
  EXPECT_GE(sol.diagnostics.objective, optimum * (1.0 - 1e-6));
  EXPECT_LE(sol.diagnostics.lower_bound, optimum * (1.0 + 1e-6));
  EXPECT_LT(sol.diagnostics.objective, 4.676364070448469);
}

TEST(SolveIrr, RelaxationIsSound) {
  Rng rng(9);
  SolverConfig cfg;
  cfg.tol = 1e-8;
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = static_cast<Eigen::Index>(3 + rng.below(10));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto ds = fixtures::random_dataset(m, d, 0.6, rng.next());
    const Hyperparams hp{std::ldexp(1.0, -static_cast<int>(rng.below(8))), 0.25 + 2.0 * rng.uniform()};
    const auto sol = solve_irr(ds, hp, cfg);
    for (int t = 0; t < 200; ++t) {
      const MatrixXd M = fixtures::random_in_ball(d, d, hp.gamma, rng);
      EXPECT_GE(exact_objective(ds, M, hp.lambda) - sol.diagnostics.objective, -1e-6);
    }
  }
}

TEST(SolveIrr, SolutionInvariants) {
  Rng rng(10);
  for (int rep = 0; rep < 10; ++rep) {
    const auto ds = fixtures::random_dataset(20, 3, 0.6, rng.next());
    const Hyperparams hp{std::ldexp(1.0, -static_cast<int>(rng.below(6))), 0.5 + 3.0 * rng.uniform()};
    const SolverConfig cfg;
    const auto sol = solve_irr(ds, hp, cfg);
    EXPECT_LE(sol.M.norm(), hp.gamma + 1e-9);
    EXPECT_LE(sol.N.squared_norm(), std::pow(hp.gamma, 4) + 1e-9);
    EXPECT_GE(sol.diagnostics.min_eigenvalue, -cfg.eps_psd);
    const double B = ds.y.cwiseAbs().maxCoeff();
    EXPECT_LE(sol.alpha.norm(), B / (hp.lambda * std::sqrt(20.0)) + 1e-6);
    const auto& ub = sol.diagnostics.upper_bounds;
    for (std::size_t t = 1; t < ub.size(); ++t) EXPECT_LE(ub[t], ub[t - 1]);
    EXPECT_NEAR(sol.diagnostics.objective, ds.y.dot(sol.alpha), 1e-9 * std::abs(sol.diagnostics.objective));
  }
}

TEST(SolveIrr, Deterministic) {
  const auto ds = fixtures::random_dataset(25, 4, 0.6, 11);
  const auto a = solve_irr(ds, {0.05, 1.5});
  const auto b = solve_irr(ds, {0.05, 1.5});
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.M, b.M);
  EXPECT_EQ(a.diagnostics.iterations, b.diagnostics.iterations);
}

TEST(SolveIrr, ImprovesOnZeroImputation) {
  const auto ds = fixtures::formula_instance();
  const auto sol = solve_irr(ds, {0.015625, 2.0});
  // y^T (X X^T + m lambda I)^{-1} y for the same instance.
  EXPECT_LT(sol.diagnostics.objective, 4.676364070448469);
}

TEST(SolveIrr, Preconditions) {
  const auto ds = fixtures::random_dataset(5, 2, 0.5, 1);
  EXPECT_THROW(solve_irr(ds, {0.0, 1.0}), PreconditionError);
  EXPECT_THROW(solve_irr(ds, {1.0, -1.0}), PreconditionError);
  SolverConfig bad;
  bad.max_outer = 0;
  EXPECT_THROW(solve_irr(ds, {1.0, 1.0}, bad), PreconditionError);
}

TEST(Predict, TrainingPointsReproduceKernelRows) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = fixtures::random_dataset(12, 3, 0.5, 20 + seed);
    const auto sol = solve_irr(ds, {0.05, 1.0});
    const VectorXd Ka = build_kmn(ds, sol.M, sol.N).K * sol.alpha;
    const IrrPredictor fast(sol);
    const VectorXd batch = fast.predict(ds);
    for (Eigen::Index j = 0; j < ds.rows(); ++j) {
      EXPECT_NEAR(predict(sol, ds.sample(j)), Ka(j), 1e-10);
      EXPECT_NEAR(fast(ds.sample(j)), Ka(j), 1e-10);
      EXPECT_NEAR(batch(j), Ka(j), 1e-10);
    }
  }
}

TEST(Predict, LinearKernelWhenNoImputation) {
  const auto ds = fixtures::random_dataset(10, 3, 0.5, 30);
  IrrSolution sol;
  sol.train = std::make_shared<const Dataset>(ds);
  sol.alpha = VectorXd::LinSpaced(10, -1.0, 1.0);
  sol.M = MatrixXd::Zero(3, 3);
  sol.N = LiftedTensor::zero(3);
  const auto s = fixtures::random_dataset(1, 3, 0.5, 31).sample(0);
  EXPECT_NEAR(predict(sol, s), sol.alpha.dot(ds.X * s.xt), 1e-12);
  CorruptedSample bad{VectorXd::Zero(2), VectorXd::Ones(2), 0.0};
  EXPECT_THROW(predict(sol, bad), DimensionError);
}

TEST(Rmse, Examples) {
  const VectorXd y = (VectorXd(4) << 0, 1, 0, 1).finished();
  EXPECT_EQ(rmse(y, y), 0.0);
  EXPECT_NEAR(rmse(VectorXd::Zero(4), y), std::sqrt(0.5), 1e-15);
  EXPECT_THROW(rmse(VectorXd(), VectorXd()), PreconditionError);
}

TEST(Schur, EpigraphPsdIffAboveQuadraticForm) {
  Rng rng(40);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(rng.below(6));
    const MatrixXd B = fixtures::random_matrix(m, m, rng);
    const MatrixXd K = B * B.transpose();
    const VectorXd y = fixtures::random_matrix(m, 1, rng).col(0);
    const double lambda = 0.1;
    MatrixXd A = K;
    A.diagonal().array() += static_cast<double>(m) * lambda;
    const double thr = y.dot(A.llt().solve(y));
    const double t = thr * (rep % 2 == 0 ? 1.0 + 1e-3 : 1.0 - 1e-3);
    MatrixXd S(m + 1, m + 1);
    S.topLeftCorner(m, m) = A;
    S.topRightCorner(m, 1) = y;
    S.bottomLeftCorner(1, m) = y.transpose();
    S(m, m) = t;
    const double lmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(S).eigenvalues()(0);
    EXPECT_EQ(lmin >= -1e-8, t >= thr);
  }
}

TEST(Evaluator, ReducedMatchesFullKernel) {
  Rng rng(21);
  const auto ds = fixtures::random_dataset(40, 3, 0.6, 22);
  const double lambda = 0.03;
  const detail::Evaluator ev(ds, lambda, EigenOptions{});
  ASSERT_TRUE(ev.reduced());
  for (int rep = 0; rep < 3; ++rep) {
    const MatrixXd M = fixtures::random_in_ball(3, 3, 0.5, rng);
    const auto N = lift(M);
    const auto p = ev.at(M, N);
    const MatrixXd K = build_kmn(ds, M, N).K;
    const VectorXd alpha = ridge_alpha(K, ds.y, lambda);
    ASSERT_TRUE(p.factorized);
    EXPECT_LE((p.alpha - alpha).norm(), 1e-9 * alpha.norm());
    EXPECT_NEAR(p.objective, ds.y.dot(alpha), 1e-10 * std::abs(p.objective));
    const double lmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(K).eigenvalues()(0);
    EXPECT_NEAR(p.min_eig.value, std::min(lmin, 0.0), 1e-9 * K.norm());
  }
}

TEST(SolveIrr, ReducedPathInvariants) {
  const auto ds = fixtures::random_dataset(40, 3, 0.6, 23);
  const Hyperparams hp{0.05, 1.5};
  const auto sol = solve_irr(ds, hp);
  EXPECT_LE(sol.M.norm(), hp.gamma + 1e-9);
  const MatrixXd K = build_kmn(ds, sol.M, sol.N).K;
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(K).eigenvalues()(0), -SolverConfig{}.eps_psd);
  const VectorXd alpha = ridge_alpha(K, ds.y, hp.lambda);
  EXPECT_LE((sol.alpha - alpha).norm(), 1e-8 * alpha.norm());
  EXPECT_LE(sol.diagnostics.lower_bound, sol.diagnostics.objective * (1 + 1e-12));
  EXPECT_LT(sol.diagnostics.objective, solve_irr(ds, {hp.lambda, 0.0}).diagnostics.objective);
}
