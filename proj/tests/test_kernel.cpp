#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "helpers.hpp"
#include "irr/imputation.hpp"
#include "irr/kernel.hpp"

using namespace irr;

namespace {

LiftedTensor random_tensor(Eigen::Index d, Rng& rng, double scale = 1.0) {
  LiftedTensor N = LiftedTensor::zero(d);
  for (Eigen::Index k = 0; k < d; ++k) N[k] = scale * fixtures::random_matrix(d, d, rng);
  return N;
}

double max_abs(const MatrixXd& A) { return A.cwiseAbs().maxCoeff(); }

LiftedTensor symmetric_tensor(Eigen::Index d, Rng& rng) {
  LiftedTensor N = random_tensor(d, rng);
  for (auto& s : N.slices) s = 0.5 * (s + s.transpose()).eval();
  return N;
}

}  // namespace

TEST(BuildKm, SingleSampleHandExpansion) {
  MatrixXd M = MatrixXd::Zero(2, 2);
  M(0, 1) = 0.5;
  MatrixXd e0 = MatrixXd::Zero(1, 2);
  e0(0, 0) = 1.0;
  const auto ds = make_dataset(e0, e0, VectorXd::Zero(1));
  EXPECT_DOUBLE_EQ(build_km(ds, M).K(0, 0), 1.25);
  EXPECT_NEAR(build_kmn(ds, M, lift(M)).K(0, 0), 1.25, 1e-12);
}

TEST(BuildKm, CollapsesWithoutCorruptionOrImputation) {
  Rng rng(1);
  const auto full = fixtures::random_dataset(8, 3, 1.0, 1);
  const MatrixXd M = fixtures::random_matrix(3, 3, rng);
  const MatrixXd XXt = full.X * full.X.transpose();
  EXPECT_LE(max_abs(build_km(full, M).K - XXt), 1e-12);
  EXPECT_LE(max_abs(build_kmn(full, M, random_tensor(3, rng)).K - XXt), 1e-12);
  const auto part = fixtures::random_dataset(8, 3, 0.5, 2);
  const MatrixXd Xp = part.X * part.X.transpose();
  EXPECT_LE(max_abs(build_km(part, MatrixXd::Zero(3, 3)).K - Xp), 1e-12);
  EXPECT_LE(max_abs(build_kmn(part, MatrixXd::Zero(3, 3), LiftedTensor::zero(3)).K - Xp), 1e-12);
}

TEST(BuildKm, EqualsGramOfImputedRows) {
  Rng rng(2);
  const auto ds = fixtures::random_dataset(9, 4, 0.6, 3);
  const MatrixXd M = fixtures::random_matrix(4, 4, rng);
  const auto K = build_km(ds, M);
  EXPECT_EQ(K.provenance, KernelProvenance::Exact);
  for (Eigen::Index i = 0; i < 9; ++i)
    for (Eigen::Index j = 0; j < 9; ++j) {
      const double oracle = impute_linear(M, ds.sample(i).xt, ds.sample(i).z).dot(
          impute_linear(M, ds.sample(j).xt, ds.sample(j).z));
      EXPECT_NEAR(K.K(i, j), oracle, 1e-12);
    }
}

TEST(BuildKmn, ElementwiseOracle) {
  Rng rng(3);
  const auto ds = fixtures::random_dataset(6, 3, 0.5, 4);
  const MatrixXd M = fixtures::random_matrix(3, 3, rng);
  const LiftedTensor N = random_tensor(3, rng);
  const auto K = build_kmn(ds, M, N);
  EXPECT_EQ(K.provenance, KernelProvenance::Relaxed);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) {
      const VectorXd xi = ds.X.row(i).transpose();
      const VectorXd xj = ds.X.row(j).transpose();
      const VectorXd zbi = VectorXd::Ones(3) - ds.Z.row(i).transpose();
      const VectorXd zbj = VectorXd::Ones(3) - ds.Z.row(j).transpose();
      double k = xi.dot(xj) + xi.dot(M * zbi.asDiagonal() * xj) + xi.dot(zbj.asDiagonal() * M.transpose() * xj);
      for (Eigen::Index c = 0; c < 3; ++c) k += zbi(c) * zbj(c) * xi.dot(N[c] * xj);
      EXPECT_NEAR(K.K(i, j), k, 1e-12);
    }
}

TEST(BuildKmn, LiftConsistencyProperty) {
  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    const auto m = static_cast<Eigen::Index>(1 + rng.below(20));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto ds = fixtures::random_dataset(m, d, rng.uniform(), rng.next());
    const MatrixXd M = fixtures::random_in_ball(d, d, 10.0, rng);
    EXPECT_LE(max_abs(build_kmn(ds, M, lift(M)).K - build_km(ds, M).K), 1e-9);
  }
}

TEST(BuildKmn, AffineInMN) {
  Rng rng(5);
  const auto ds = fixtures::random_dataset(7, 3, 0.5, 6);
  const MatrixXd M1 = fixtures::random_matrix(3, 3, rng);
  const MatrixXd M2 = fixtures::random_matrix(3, 3, rng);
  const LiftedTensor N1 = random_tensor(3, rng);
  const LiftedTensor N2 = random_tensor(3, rng);
  LiftedTensor N12 = N1;
  for (Eigen::Index k = 0; k < 3; ++k) N12[k] += N2[k];
  const MatrixXd lhs = build_kmn(ds, M1 + M2, N12).K + build_kmn(ds, MatrixXd::Zero(3, 3), LiftedTensor::zero(3)).K;
  const MatrixXd rhs = build_kmn(ds, M1, N1).K + build_kmn(ds, M2, N2).K;
  EXPECT_LE(max_abs(lhs - rhs), 1e-10);
}

TEST(BuildKmn, SymmetricAndExactIsPsd) {
  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    const auto ds = fixtures::random_dataset(12, 4, 0.5, rng.next());
    const MatrixXd M = fixtures::random_matrix(4, 4, rng);
    const MatrixXd K = build_km(ds, M).K;
    EXPECT_LE(max_abs(K - K.transpose()), 1e-9);
    EXPECT_GE(min_eigpair(K).value, -1e-8);
    // Symmetric slices keep K_MN symmetric.
    LiftedTensor N = random_tensor(4, rng);
    for (auto& s : N.slices) s = 0.5 * (s + s.transpose()).eval();
    const MatrixXd Kr = build_kmn(ds, M, N).K;
    EXPECT_LE(max_abs(Kr - Kr.transpose()), 1e-9);
  }
}

TEST(BuildKmn, DimensionErrors) {
  const auto ds = fixtures::random_dataset(4, 3, 0.5, 1);
  EXPECT_THROW(build_km(ds, MatrixXd::Zero(2, 2)), DimensionError);
  EXPECT_THROW(build_kmn(ds, MatrixXd::Zero(3, 3), LiftedTensor::zero(2)), DimensionError);
}

TEST(Lift, Examples) {
  const auto Z = lift(MatrixXd::Zero(3, 3));
  EXPECT_EQ(Z.squared_norm(), 0.0);
  const auto I = lift(MatrixXd::Identity(2, 2));
  EXPECT_EQ(I[0], (MatrixXd(2, 2) << 1, 0, 0, 0).finished());
  EXPECT_EQ(I[1], (MatrixXd(2, 2) << 0, 0, 0, 1).finished());
}

TEST(Lift, NormBudgetMonteCarlo) {
  // sum_k ||m_k m_k^T||_F^2 = sum_k ||m_k||^4 <= (sum_k ||m_k||^2)^2 = gamma^4.
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(6));
    const double gamma = 0.1 + 3.0 * rng.uniform();
    MatrixXd M = fixtures::random_matrix(d, d, rng);
    M *= gamma / M.norm();
    const auto N = lift(M);
    EXPECT_LE(N.squared_norm(), std::pow(gamma, 4) + 1e-9);
    EXPECT_NEAR(N.gamma2, gamma * gamma, 1e-9);
  }
}

TEST(LiftedTensor, ProjectionAndDot) {
  Rng rng(8);
  LiftedTensor N = random_tensor(3, rng, 5.0);
  const auto P = project_frobenius(N, 2.0);
  EXPECT_NEAR(P.norm(), 2.0, 1e-12);
  EXPECT_NEAR(N.dot(N), N.squared_norm(), 1e-9);
}

TEST(MinEig, SmallExamples) {
  const auto id = min_eigpair(MatrixXd::Identity(3, 3));
  EXPECT_NEAR(id.value, 1.0, 1e-12);
  EXPECT_NEAR(id.vector.norm(), 1.0, 1e-12);
  MatrixXd D = MatrixXd::Zero(2, 2);
  D(0, 0) = 2.0;
  D(1, 1) = -1.0;
  const auto p = min_eigpair(D);
  EXPECT_NEAR(p.value, -1.0, 1e-12);
  EXPECT_NEAR(std::abs(p.vector(1)), 1.0, 1e-12);
}

TEST(MinEig, LanczosMatchesDenseSolver) {
  Rng rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index m = 150 + static_cast<Eigen::Index>(rng.below(100));
    // Low-rank PSD part plus a small indefinite perturbation, the shape seen in K_MN.
    const MatrixXd X = fixtures::random_matrix(m, 6, rng);
    const MatrixXd E = fixtures::random_matrix(m, 2, rng);
    MatrixXd K = X * X.transpose() - 0.05 * E * E.transpose();
    if (rep % 2 == 0) K = X * X.transpose();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(K);
    const auto p = min_eigpair(K);
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    EXPECT_NEAR(p.value, es.eigenvalues()(0), 1e-8 * scale);
    EXPECT_NEAR(p.vector.norm(), 1.0, 1e-10);
    EXPECT_LE((K * p.vector - p.value * p.vector).norm(), 1e-7 * scale);
  }
}

TEST(KernelGradient, ZeroCases) {
  const auto ds = fixtures::random_dataset(5, 3, 0.5, 1);
  const auto g = kernel_gradient_contraction(ds, VectorXd::Zero(5));
  EXPECT_EQ(max_abs(g.G_M), 0.0);
  EXPECT_EQ(g.G_N.squared_norm(), 0.0);
  const auto full = fixtures::random_dataset(5, 3, 1.0, 2);
  const auto h = kernel_gradient_contraction(full, VectorXd::Ones(5));
  EXPECT_EQ(max_abs(h.G_M), 0.0);
  EXPECT_EQ(h.G_N.squared_norm(), 0.0);
}

TEST(KernelGradient, MatchesCentralDifferences) {
  Rng rng(10);
  for (int rep = 0; rep < 50; ++rep) {
    const auto m = static_cast<Eigen::Index>(2 + rng.below(8));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto ds = fixtures::random_dataset(m, d, 0.5, rng.next());
    const VectorXd a = fixtures::random_matrix(m, 1, rng).col(0);
    const MatrixXd M = fixtures::random_matrix(d, d, rng);
    const LiftedTensor N = random_tensor(d, rng);
    const auto g = kernel_gradient_contraction(ds, a);
    const auto q = [&](const MatrixXd& Mx, const LiftedTensor& Nx) { return a.dot(build_kmn(ds, Mx, Nx).K * a); };

    const double h = 1e-5;
    MatrixXd fd_m(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) {
        MatrixXd Mp = M;
        MatrixXd Mm = M;
        Mp(r, c) += h;
        Mm(r, c) -= h;
        fd_m(r, c) = (q(Mp, N) - q(Mm, N)) / (2 * h);
      }
    const double scale_m = std::max(1.0, g.G_M.norm());
    EXPECT_LE((fd_m - g.G_M).norm() / scale_m, 1e-5);

    double err_n = 0.0;
    for (Eigen::Index k = 0; k < d; ++k)
      for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) {
          LiftedTensor Np = N;
          LiftedTensor Nm = N;
          Np[k](r, c) += h;
          Nm[k](r, c) -= h;
          const double fd = (q(M, Np) - q(M, Nm)) / (2 * h);
          err_n += (fd - g.G_N[k](r, c)) * (fd - g.G_N[k](r, c));
        }
    EXPECT_LE(std::sqrt(err_n) / std::max(1.0, g.G_N.norm()), 1e-5);
  }
}

TEST(KernelDirection, QuadraticDecomposition) {
  Rng rng(11);
  const auto ds = fixtures::random_dataset(8, 3, 0.5, 12);
  const VectorXd a = fixtures::random_matrix(8, 1, rng).col(0);
  const MatrixXd M = fixtures::random_matrix(3, 3, rng);
  const LiftedTensor N = random_tensor(3, rng);
  const auto dir = kernel_direction(ds, a);
  EXPECT_NEAR(dir.quadratic(M, N), a.dot(build_kmn(ds, M, N).K * a), 1e-10);
  EXPECT_NEAR(dir.dot_m(M), dir.grad_m().cwiseProduct(M).sum(), 1e-10);
  EXPECT_NEAR(dir.dot_n(N), dir.grad_n().dot(N), 1e-10);
}

TEST(DumpKernel, RoundTrip) {
  Rng rng(12);
  const MatrixXd K = fixtures::random_matrix(4, 3, rng);
  const auto path = (std::filesystem::temp_directory_path() / "irr_kernel_dump.bin").string();
  dump_kernel(path, K);
  EXPECT_EQ(std::filesystem::file_size(path), 8u + 12u * sizeof(double));
  EXPECT_EQ(load_kernel(path), K);
  std::remove(path.c_str());
  EXPECT_THROW(load_kernel(path), IoError);
}

TEST(KernelFactor, ReducedFormReproducesKmn) {
  Rng rng(11);
  const auto ds = fixtures::random_dataset(40, 3, 0.6, 12);
  const auto f = factor_kernel(ds);
  ASSERT_FALSE(f.empty());
  EXPECT_LE(max_abs(f.Q.transpose() * f.Q - MatrixXd::Identity(f.Q.cols(), f.Q.cols())), 1e-12);
  for (int rep = 0; rep < 3; ++rep) {
    const MatrixXd M = fixtures::random_matrix(3, 3, rng);
    const auto N = symmetric_tensor(3, rng);
    const MatrixXd K = build_kmn(ds, M, N).K;
    const MatrixXd B = reduced_kmn(f, M, N);
    EXPECT_LE(max_abs(f.Q * B * f.Q.transpose() - K), 1e-10 * std::max(1.0, max_abs(K)));
  }
}

TEST(KernelFactor, EmptyWhenBasisIsTooWide) {
  EXPECT_TRUE(factor_kernel(fixtures::random_dataset(10, 3, 0.6, 1)).empty());
  EXPECT_TRUE(factor_kernel(fixtures::random_dataset(5, 8, 1.0, 1)).empty());
}

TEST(SmallestEigenpairs, ReducedAddsNullSpace) {
  Rng rng(13);
  const auto ds = fixtures::random_dataset(40, 3, 0.6, 14);
  const auto f = factor_kernel(ds);
  ASSERT_FALSE(f.empty());
  const MatrixXd M = fixtures::random_matrix(3, 3, rng);
  const auto N = symmetric_tensor(3, rng);
  const MatrixXd K = build_kmn(ds, M, N).K;
  const MatrixXd B = reduced_kmn(f, M, N);
  const double dense = Eigen::SelfAdjointEigenSolver<MatrixXd>(K).eigenvalues()(0);
  const auto pairs = smallest_eigenpairs(B, f.Q, ds.rows(), 3, 0.0);
  ASSERT_FALSE(pairs.empty());
  EXPECT_NEAR(pairs.front().value, std::min(dense, 0.0), 1e-9 * std::max(1.0, max_abs(K)));
  for (const auto& p : pairs) {
    EXPECT_NEAR(p.vector.norm(), 1.0, 1e-10);
    EXPECT_NEAR(p.vector.dot(K * p.vector), p.value, 1e-9 * std::max(1.0, max_abs(K)));
  }
  const auto psd = smallest_eigenpairs(f.R * f.R.transpose(), f.Q, ds.rows(), 1, 0.0);
  EXPECT_EQ(psd.front().value, 0.0);
  EXPECT_LE((f.Q.transpose() * psd.front().vector).norm(), 1e-10);
}
