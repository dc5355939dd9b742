#pragma once

// Imputed Gram matrix K_M and its relaxation K_MN.
//
// For training rows x_i (corrupted) with missing-indicator rows zb_i = 1 - z_i:
//
//   K_M[i,j]  = phi_i . phi_j,   phi_i = x_i + zb_i o (M^T x_i)
//   K_MN[i,j] = x_i.x_j + x_i^T M Zb_i x_j + x_i^T Zb_j M^T x_j
//             + sum_k zb_ik zb_jk x_i^T N_k x_j
//
// K_MN is affine in (M, N) and coincides with K_M when N_k = M_{:,k} M_{:,k}^T.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "irr/dataset.hpp"
#include "irr/errors.hpp"
#include "irr/rng.hpp"

namespace irr {

/// d slices N_k of size d x d with budget sum_k ||N_k||_F^2 <= gamma2^2.
struct LiftedTensor {
  std::vector<MatrixXd> slices;
  double gamma2 = 0.0;

  static LiftedTensor zero(Eigen::Index d, double gamma2 = 0.0) {
    return {std::vector<MatrixXd>(static_cast<std::size_t>(d), MatrixXd::Zero(d, d)), gamma2};
  }

  Eigen::Index dim() const { return static_cast<Eigen::Index>(slices.size()); }
  const MatrixXd& operator[](Eigen::Index k) const { return slices[static_cast<std::size_t>(k)]; }
  MatrixXd& operator[](Eigen::Index k) { return slices[static_cast<std::size_t>(k)]; }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& n : slices) s += n.squaredNorm();
    return s;
  }
  double norm() const { return std::sqrt(squared_norm()); }

  LiftedTensor& operator*=(double a) {
    for (auto& n : slices) n *= a;
    return *this;
  }

  /// Frobenius inner product.
  double dot(const LiftedTensor& o) const {
    double s = 0.0;
    for (std::size_t k = 0; k < slices.size(); ++k) s += slices[k].cwiseProduct(o.slices[k]).sum();
    return s;
  }
};

/// Radially scales N onto the ball ||N||_F <= radius.
inline LiftedTensor project_frobenius(LiftedTensor N, double radius) {
  const double n = N.norm();
  if (n > radius && n > 0.0) N *= radius / n;
  return N;
}

/// N_k = (column k of M)(column k of M)^T, budget ||M||_F^2.
inline LiftedTensor lift(const MatrixXd& M) {
  require_dims(M.rows() == M.cols(), "lift expects a square matrix");
  LiftedTensor N;
  N.slices.reserve(static_cast<std::size_t>(M.cols()));
  for (Eigen::Index k = 0; k < M.cols(); ++k) N.slices.emplace_back(M.col(k) * M.col(k).transpose());
  N.gamma2 = M.squaredNorm();
  return N;
}

enum class KernelProvenance { Exact, Relaxed };

struct KernelMatrix {
  MatrixXd K;
  KernelProvenance provenance = KernelProvenance::Exact;
};

namespace detail {

inline void check_model_dims(const Dataset& ds, const MatrixXd& M) {
  require_dims(M.rows() == ds.dim() && M.cols() == ds.dim(), "imputation matrix must be d x d");
}

/// Rows of the dataset in which feature k is missing.
inline std::vector<std::vector<Eigen::Index>> missing_rows(const Dataset& ds) {
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(ds.dim()));
  for (Eigen::Index i = 0; i < ds.rows(); ++i)
    for (Eigen::Index k = 0; k < ds.dim(); ++k)
      if (ds.Z(i, k) == 0.0) out[static_cast<std::size_t>(k)].push_back(i);
  return out;
}

}  // namespace detail

inline KernelMatrix build_km(const Dataset& train, const MatrixXd& M) {
  detail::check_model_dims(train, M);
  const MatrixXd phi = train.X + train.missing().cwiseProduct(train.X * M);
  return {phi * phi.transpose(), KernelProvenance::Exact};
}

inline KernelMatrix build_kmn(const Dataset& train, const MatrixXd& M, const LiftedTensor& N) {
  detail::check_model_dims(train, M);
  require_dims(N.dim() == train.dim(), "lifted tensor must have d slices");
  for (const auto& s : N.slices) require_dims(s.rows() == train.dim() && s.cols() == train.dim(), "slices must be d x d");

  const MatrixXd& X = train.X;
  // Row i of A is zb_i o (M^T x_i).
  const MatrixXd A = train.missing().cwiseProduct(X * M);
  MatrixXd K = X * X.transpose();
  K.noalias() += A * X.transpose();
  K.noalias() += X * A.transpose();

  const auto rows = detail::missing_rows(train);
  for (Eigen::Index k = 0; k < train.dim(); ++k) {
    const auto& idx = rows[static_cast<std::size_t>(k)];
    if (idx.empty() || N[k].isZero(0.0)) continue;
    const auto n = static_cast<Eigen::Index>(idx.size());
    MatrixXd Xk(n, train.dim());
    for (Eigen::Index r = 0; r < n; ++r) Xk.row(r) = X.row(idx[static_cast<std::size_t>(r)]);
    const MatrixXd block = Xk * N[k] * Xk.transpose();
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < n; ++c) K(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)]) += block(r, c);
  }
  return {std::move(K), KernelProvenance::Relaxed};
}

// ---------------------------------------------------------------------------
// Smallest eigenpair

struct EigenPair {
  double value = 0.0;
  VectorXd vector;
};

struct EigenOptions {
  double tolerance = 1e-10;         // residual ||K v - theta v|| accepted, scaled by max(1, ||K||_2)
  Eigen::Index dense_cutoff = 64;   // direct solver at or below this size
  Eigen::Index max_basis = 120;     // Lanczos basis before an explicit restart
  std::uint64_t seed = 0x5eed;
};

/// K_MN = U C(M, N) U' with U = [X, D_1 X, ..., D_B X]. Group b collects the
/// features that are missing on exactly the same rows and D_b keeps those
/// rows. The blocks of C are  C_00 = I,  C_b0 = M P_b  (P_b selects the
/// columns of group b),  C_0b = C_b0'  and  C_bb = sum_{k in b} N_k.
/// U = Q R with orthonormal Q (m x r), so Q' K_MN Q = R C R' is exact.
struct KernelFactor {
  std::vector<std::vector<Eigen::Index>> groups;
  MatrixXd Q;
  MatrixXd R;
  bool empty() const { return Q.cols() == 0; }
};

/// Empty unless r <= m / 2, where the reduced form stops paying off.
inline KernelFactor factor_kernel(const Dataset& ds) {
  const Eigen::Index m = ds.rows();
  const Eigen::Index d = ds.dim();
  KernelFactor f;
  std::vector<VectorXd> row_sets;
  const MatrixXd Zb = ds.missing();
  for (Eigen::Index k = 0; k < d; ++k) {
    const VectorXd rows = Zb.col(k);
    if (rows.sum() == 0.0) continue;
    const auto it = std::find(row_sets.begin(), row_sets.end(), rows);
    if (it == row_sets.end()) {
      row_sets.push_back(rows);
      f.groups.push_back({k});
    } else {
      f.groups[static_cast<std::size_t>(it - row_sets.begin())].push_back(k);
    }
  }
  const auto width = d * static_cast<Eigen::Index>(1 + row_sets.size());
  if (width > m) return {};
  MatrixXd U(m, width);
  U.leftCols(d) = ds.X;
  for (std::size_t b = 0; b < row_sets.size(); ++b)
    U.middleCols(d * static_cast<Eigen::Index>(b + 1), d) = row_sets[b].asDiagonal() * ds.X;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(U);
  const Eigen::Index r = qr.rank();
  if (2 * r > m) return {};
  f.Q = qr.householderQ() * MatrixXd::Identity(m, r);
  f.R = f.Q.transpose() * U;
  if ((U - f.Q * f.R).norm() > 1e-10 * std::max(U.norm(), 1.0)) return {};
  return f;
}

/// R C(M, N) R', the matrix of K_MN in the basis Q.
inline MatrixXd reduced_kmn(const KernelFactor& f, const MatrixXd& M, const LiftedTensor& N) {
  const Eigen::Index d = M.rows();
  const auto w = d * static_cast<Eigen::Index>(1 + f.groups.size());
  MatrixXd C = MatrixXd::Zero(w, w);
  C.topLeftCorner(d, d).setIdentity();
  for (std::size_t b = 0; b < f.groups.size(); ++b) {
    const Eigen::Index o = d * static_cast<Eigen::Index>(b + 1);
    for (const Eigen::Index k : f.groups[b]) {
      C.block(o, k, d, 1) = M.col(k);
      C.block(k, o, 1, d) = M.col(k).transpose();
      C.block(o, o, d, d) += N[k];
    }
  }
  MatrixXd B = f.R * C * f.R.transpose();
  return 0.5 * (B + B.transpose());
}

/// The smallest eigenpair of a symmetric m x m matrix K, followed by up to
/// `count - 1` further eigenpairs with value below `below`, in increasing
/// order. K is given through B = basis' K basis, where the basis columns are
/// orthonormal and span the range of K; its null space then contributes
/// eigenvalue 0. An empty basis means B is K itself.
inline std::vector<EigenPair> smallest_eigenpairs(const MatrixXd& B, const MatrixXd& basis, Eigen::Index m, int count,
                                                  double below) {
  const bool reduced = basis.cols() > 0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(B);
  if (es.info() != Eigen::Success) throw ConvergenceError("dense eigensolver failed");
  const Eigen::Index n = es.eigenvalues().size();
  const auto lift = [&](Eigen::Index i) -> VectorXd {
    return reduced ? VectorXd(basis * es.eigenvectors().col(i)) : VectorXd(es.eigenvectors().col(i));
  };
  std::vector<EigenPair> out;
  if (reduced && n < m && es.eigenvalues()(0) > 0.0) {
    // A unit vector orthogonal to the basis.
    VectorXd v = VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m && v.norm() < 0.5; ++i) v = VectorXd::Unit(m, i) - basis * basis.row(i).transpose();
    out.push_back({0.0, v.normalized()});
    return out;
  }
  out.push_back({es.eigenvalues()(0), lift(0)});
  for (Eigen::Index i = 1; i < std::min<Eigen::Index>(count, n) && es.eigenvalues()(i) < below; ++i)
    out.push_back({es.eigenvalues()(i), lift(i)});
  return out;
}

/// Smallest eigenvalue and a unit eigenvector of a symmetric matrix.
///
/// Lanczos with full reorthogonalization, restarted from the current Ritz
/// vector whenever the basis reaches `max_basis`. After 2 m matrix-vector
/// products without convergence, and for small matrices, a dense solver is used.
inline EigenPair min_eigpair(const MatrixXd& K, const EigenOptions& opt = {}) {
  require_dims(K.rows() == K.cols(), "min_eigpair expects a square matrix");
  const Eigen::Index m = K.rows();
  require(m > 0, "min_eigpair on an empty matrix");
  if (m <= opt.dense_cutoff) return smallest_eigenpairs(K, MatrixXd(), m, 1, 0.0).front();

  Rng rng(opt.seed);
  VectorXd start(m);
  for (Eigen::Index i = 0; i < m; ++i) start(i) = rng.normal();
  start.normalize();

  const Eigen::Index basis_cap = std::min(opt.max_basis, m);
  const Eigen::Index matvec_cap = 2 * m;
  Eigen::Index matvecs = 0;
  double scale = 1.0;  // running estimate of ||K||_2
  EigenPair best{std::numeric_limits<double>::infinity(), start};

  MatrixXd Q(m, basis_cap + 1);
  while (matvecs < matvec_cap) {
    Q.col(0) = start;
    VectorXd alpha = VectorXd::Zero(basis_cap);
    VectorXd beta = VectorXd::Zero(basis_cap);
    Eigen::Index j = 0;
    for (; j < basis_cap && matvecs < matvec_cap; ++j) {
      VectorXd w = K * Q.col(j);
      ++matvecs;
      alpha(j) = Q.col(j).dot(w);
      // Two passes of classical Gram-Schmidt against the whole basis.
      for (int pass = 0; pass < 2; ++pass) w -= Q.leftCols(j + 1) * (Q.leftCols(j + 1).transpose() * w);
      double b = w.norm();
      if (b <= 1e-12 * std::max(1.0, std::abs(alpha(j)))) {
        // Invariant subspace: continue with a fresh random direction.
        for (Eigen::Index i = 0; i < m; ++i) w(i) = rng.normal();
        for (int pass = 0; pass < 2; ++pass) w -= Q.leftCols(j + 1) * (Q.leftCols(j + 1).transpose() * w);
        if (j + 1 >= m || w.norm() == 0.0) {
          ++j;
          break;
        }
        b = 0.0;
        Q.col(j + 1) = w.normalized();
      } else {
        Q.col(j + 1) = w / b;
      }
      beta(j) = b;

      const Eigen::Index n = j + 1;
      Eigen::SelfAdjointEigenSolver<MatrixXd> es;
      const VectorXd sub = n > 1 ? VectorXd(beta.head(n - 1)) : VectorXd();
      es.computeFromTridiagonal(alpha.head(n), sub, Eigen::ComputeEigenvectors);
      scale = std::max({scale, std::abs(es.eigenvalues()(0)), std::abs(es.eigenvalues()(n - 1))});
      const double theta = es.eigenvalues()(0);
      const double residual = std::abs(beta(j) * es.eigenvectors()(n - 1, 0));
      if (residual <= opt.tolerance * scale || n == m) {
        VectorXd v = Q.leftCols(n) * es.eigenvectors().col(0);
        v.normalize();
        const double rq = v.dot(K * v);
        const double true_residual = (K * v - rq * v).norm();
        if (true_residual <= 10.0 * opt.tolerance * scale || n == m) return {rq, v};
      }
      if (theta < best.value) best = {theta, Q.leftCols(n) * es.eigenvectors().col(0)};
    }
    start = best.vector.normalized();
  }
  return smallest_eigenpairs(K, MatrixXd(), m, 1, 0.0).front();
}

inline EigenPair min_eigpair(const KernelMatrix& K, const EigenOptions& opt = {}) { return min_eigpair(K.K, opt); }

// ---------------------------------------------------------------------------
// Gradient of a^T K_MN a

/// Compact form of the (M, N)-gradient of a^T K_MN a for a fixed vector a:
///
///   V = X^T diag(a) Zb   (column k is v_k = sum_i a_i zb_ik x_i)
///   s = X^T a
///   dM   = 2 V diag(s)
///   dN_k = v_k v_k^T
///
/// so that a^T K_MN a = ||s||^2 + <dM, M> + sum_k v_k^T N_k v_k.
struct KernelDirection {
  MatrixXd V;
  VectorXd s;

  MatrixXd grad_m() const { return 2.0 * V * s.asDiagonal(); }

  LiftedTensor grad_n() const {
    LiftedTensor G;
    G.slices.reserve(static_cast<std::size_t>(V.cols()));
    for (Eigen::Index k = 0; k < V.cols(); ++k) G.slices.emplace_back(V.col(k) * V.col(k).transpose());
    return G;
  }

  /// a^T K_00 a = ||X^T a||^2.
  double constant() const { return s.squaredNorm(); }

  double dot_m(const MatrixXd& M) const { return 2.0 * (V * s.asDiagonal()).cwiseProduct(M).sum(); }

  double dot_n(const LiftedTensor& N) const {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < V.cols(); ++k) acc += V.col(k).dot(N[k] * V.col(k));
    return acc;
  }

  /// a^T K_MN a.
  double quadratic(const MatrixXd& M, const LiftedTensor& N) const { return constant() + dot_m(M) + dot_n(N); }
};

inline KernelDirection kernel_direction(const Dataset& train, const VectorXd& a) {
  require_dims(a.size() == train.rows(), "vector length must equal the number of training rows");
  return {train.X.transpose() * (train.missing().array().colwise() * a.array()).matrix(), train.X.transpose() * a};
}

struct KernelGradient {
  MatrixXd G_M;
  LiftedTensor G_N;
};

/// Derivatives of alpha^T K_MN alpha with respect to M and each N_k.
inline KernelGradient kernel_gradient_contraction(const Dataset& train, const VectorXd& alpha) {
  const auto dir = kernel_direction(train, alpha);
  return {dir.grad_m(), dir.grad_n()};
}

// ---------------------------------------------------------------------------
// Debug dump: uint32 rows, uint32 cols (little-endian), then row-major doubles.

inline void dump_kernel(const std::string& path, const MatrixXd& K) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const auto rows = static_cast<std::uint32_t>(K.rows());
  const auto cols = static_cast<std::uint32_t>(K.cols());
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = K;
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
  if (!out) throw IoError("write failure on '" + path + "'");
}

inline MatrixXd load_kernel(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
  if (!in) throw IoError("truncated kernel file '" + path + "'");
  return rm;
}

}  // namespace irr
