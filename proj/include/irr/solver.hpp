#pragma once

// Ridge regression in closed form, the relaxed IRR saddle-point problem
//
//   min_{(M, N) in C}  f(M, N),   f = y^T (K_MN + m lambda I)^{-1} y
//   C = { ||M||_F <= gamma, ||N||_F <= gamma^2, K_MN >= 0 }
//
// solved by cutting planes, and the dual predictor built from (alpha, M, N).
//
// For any alpha the plane 2 alpha^T y - alpha^T (K_MN + m lambda I) alpha is an
// affine minorant of f on C, tight at the point where alpha is the ridge
// solution. Eigenvectors v of negative eigenvalues give linear cuts
// v^T K_MN v >= 0. The master problem (maximum of planes subject to cuts over
// the two balls) is minimized by projected subgradient steps. All iterates of
// the master stay in the span of the centre point and the plane/cut
// gradients, so an inner step costs O(#planes + #cuts).

#include <Eigen/Dense>

#include <algorithm>
#include <initializer_list>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "irr/dataset.hpp"
#include "irr/errors.hpp"
#include "irr/imputation.hpp"
#include "irr/kernel.hpp"

namespace irr {

struct Hyperparams {
  double lambda = 1.0;
  double gamma = 1.0;
};

inline void validate(const Hyperparams& hp) {
  require(std::isfinite(hp.lambda) && hp.lambda > 0.0, "lambda must be positive");
  // gamma = 0 is accepted and collapses the problem to zero imputation.
  require(std::isfinite(hp.gamma) && hp.gamma >= 0.0, "gamma must be non-negative");
}

enum class MasterRule {
  /// Proximal bundle step around the best point, solved through its dual.
  Bundle,
  /// Projected subgradient on the cutting-plane model.
  Subgradient,
};

/// Step schedule of the subgradient master.
enum class StepRule {
  /// t_s = c / sqrt(s) applied to the raw subgradient.
  Raw,
  /// t_s = c / sqrt(s) applied to the unit-norm subgradient.
  Normalized,
};

struct SolverConfig {
  double tol = 1e-3;        // relative SILP gap
  int max_outer = 200;
  int inner_steps = 500;
  double eps_psd = 1e-7;
  MasterRule master = MasterRule::Bundle;
  StepRule step_rule = StepRule::Normalized;
  EigenOptions eigen{};
};

inline void validate(const SolverConfig& cfg) {
  require(cfg.tol > 0.0, "tol must be positive");
  require(cfg.max_outer >= 1, "max_outer must be at least 1");
  require(cfg.inner_steps >= 1, "inner_steps must be at least 1");
  require(cfg.eps_psd >= 0.0, "eps_psd must be non-negative");
}

struct SolverDiagnostics {
  int iterations = 0;
  double gap = 0.0;          // upper bound minus master lower bound
  int cuts = 0;
  int planes = 0;
  double objective = 0.0;    // f at the returned (M, N)
  double lower_bound = 0.0;
  double min_eigenvalue = 0.0;  // of K_MN at the returned (M, N)
  bool converged = false;
  std::vector<double> upper_bounds;  // best f after each outer iteration
};

struct IrrSolution {
  VectorXd alpha;
  MatrixXd M;
  LiftedTensor N;
  std::shared_ptr<const Dataset> train;
  Hyperparams hp;
  SolverDiagnostics diagnostics;
};

struct PrimalPoint {
  VectorXd w;
  MatrixXd M;
};

// ---------------------------------------------------------------------------
// Ridge core

/// alpha = (K + m lambda I)^{-1} y by Cholesky.
inline VectorXd ridge_alpha(const MatrixXd& K, const VectorXd& y, double lambda) {
  require_dims(K.rows() == K.cols() && K.rows() == y.size(), "kernel and label vector disagree in size");
  require(lambda > 0.0, "lambda must be positive");
  const auto m = K.rows();
  MatrixXd A = K;
  A.diagonal().array() += static_cast<double>(m) * lambda;
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw FactorizationError("K + m*lambda*I is not positive definite");
  VectorXd alpha = llt.solve(y);
  const double scale = std::max(y.norm(), std::numeric_limits<double>::min());
  if (!(((A * alpha - y).norm()) <= 1e-8 * scale)) {
    // One step of iterative refinement before giving up.
    alpha += llt.solve(y - A * alpha);
    if (!(((A * alpha - y).norm()) <= 1e-8 * scale))
      throw FactorizationError("ridge system is too ill-conditioned for the requested residual");
  }
  return alpha;
}

inline VectorXd ridge_alpha(const KernelMatrix& K, const VectorXd& y, double lambda) {
  return ridge_alpha(K.K, y, lambda);
}

/// (lambda/2)||w||^2 + (1/m) sum_i (y_i - w . phi_M(x_i, z_i))^2.
inline double primal_objective(const PrimalPoint& p, const Dataset& train, double lambda) {
  require_dims(p.w.size() == train.dim(), "w must have d entries");
  detail::check_model_dims(train, p.M);
  require(train.rows() > 0, "training set is empty");
  const MatrixXd phi = train.X + train.missing().cwiseProduct(train.X * p.M);
  const VectorXd r = train.y - phi * p.w;
  return 0.5 * lambda * p.w.squaredNorm() + r.squaredNorm() / static_cast<double>(train.rows());
}

// ---------------------------------------------------------------------------
// Cutting-plane machinery

namespace detail {

/// f, the ridge dual vector and the smallest eigenpair of K_MN at one point.
struct PointEvaluation {
  bool factorized = false;
  double objective = std::numeric_limits<double>::infinity();
  VectorXd alpha;
  EigenPair min_eig;
  std::vector<VectorXd> more_negative;  // further eigenvectors below -eps, dense paths only
  MatrixXd K;                           // K_MN, or Q' K_MN Q when the kernel factor is in use
};

/// Evaluates points of one problem, in the reduced basis of `KernelFactor`
/// when the training set admits one and with m x m matrices otherwise.
class Evaluator {
 public:
  Evaluator(const Dataset& train, double lambda, const EigenOptions& eig)
      : train_(train), lambda_(lambda), eig_(eig), factor_(factor_kernel(train)) {
    if (!factor_.empty()) qy_ = factor_.Q.transpose() * train.y;
  }

  bool reduced() const { return !factor_.empty(); }

  PointEvaluation at(const MatrixXd& M, const LiftedTensor& N, double eps = 0.0, int max_cuts = 1) const {
    return reduced() ? from_matrix(reduced_kmn(factor_, M, N), eps, max_cuts)
                     : from_matrix(build_kmn(train_, M, N).K, eps, max_cuts);
  }

  /// `K` is in the representation of PointEvaluation::K.
  PointEvaluation from_matrix(MatrixXd K, double eps = 0.0, int max_cuts = 1) const {
    PointEvaluation ev;
    const Eigen::Index m = train_.rows();
    const double ml = static_cast<double>(m) * lambda_;
    if (reduced() || (max_cuts > 1 && m <= eig_.dense_cutoff)) {
      auto pairs = smallest_eigenpairs(K, factor_.Q, m, max_cuts, -eps);
      ev.min_eig = std::move(pairs.front());
      for (std::size_t i = 1; i < pairs.size(); ++i) ev.more_negative.push_back(std::move(pairs[i].vector));
    } else {
      ev.min_eig = min_eigpair(K, eig_);
    }
    try {
      if (reduced()) {
        // (Q B Q' + ml I)^{-1} y = Q (B + ml I)^{-1} Q'y + (y - Q Q'y) / ml
        MatrixXd A = K;
        A.diagonal().array() += ml;
        const Eigen::LLT<MatrixXd> llt(A);
        if (llt.info() != Eigen::Success) throw FactorizationError("reduced kernel is not positive definite");
        ev.alpha = factor_.Q * (llt.solve(qy_) - qy_ / ml) + train_.y / ml;
      } else {
        ev.alpha = ridge_alpha(K, train_.y, lambda_);
      }
      ev.objective = train_.y.dot(ev.alpha);
      ev.factorized = std::isfinite(ev.objective);
    } catch (const FactorizationError&) {
      ev.factorized = false;
    }
    ev.K = std::move(K);
    return ev;
  }

  /// v' K v for a unit vector v and K in the representation of PointEvaluation::K.
  double quadratic(const MatrixXd& K, const VectorXd& v) const {
    if (!reduced()) return v.dot(K * v);
    const VectorXd u = factor_.Q.transpose() * v;
    return u.dot(K * u);
  }

 private:
  const Dataset& train_;
  double lambda_;
  EigenOptions eig_;
  KernelFactor factor_;
  VectorXd qy_;
};

/// Walks from an infeasible query back towards the feasible centre,
///   K(theta) = Kc + theta (Kq - Kc),
/// by Newton steps on the concave function lambda_min(K(theta)) aimed at
/// -eps/2. Returns theta in (0, 1) and the evaluation there, or theta = 0.
inline std::pair<double, PointEvaluation> restore_feasibility(const Evaluator& evaluator,
                                                             const PointEvaluation& centre,
                                                             const PointEvaluation& query, double eps,
                                                             int max_steps = 8) {
  const MatrixXd D = query.K - centre.K;
  const double target = -0.5 * eps;
  double theta = 1.0;
  EigenPair e = query.min_eig;
  for (int s = 0; s < max_steps; ++s) {
    const double slope = evaluator.quadratic(D, e.vector);
    if (!(slope < 0.0)) break;
    theta -= (e.value - target) / slope;
    if (!(theta > 0.0)) break;
    auto ev = evaluator.from_matrix(centre.K + theta * D);
    e = ev.min_eig;
    if (e.value >= -eps) return {theta, std::move(ev)};
  }
  return {0.0, PointEvaluation{}};
}

/// A plane  c - <G, x>  (maximized) or a cut  c + <G, x> >= 0, where G is the
/// gradient of a^T K_MN a. In both cases progress is made along +G.
struct Direction {
  bool is_cut = false;
  double c = 0.0;
  KernelDirection dir;
  MatrixXd W;  // V diag(s); grad_m = 2 W
  double um_center = 0.0;
  double un_center = 0.0;
};

class CuttingPlaneModel {
 public:
  CuttingPlaneModel(const Dataset& train, double lambda) : train_(train), lambda_(lambda) {}

  void add_plane(const VectorXd& alpha) {
    Direction d;
    d.dir = kernel_direction(train_, alpha);
    const double m = static_cast<double>(train_.rows());
    d.c = 2.0 * alpha.dot(train_.y) - d.dir.constant() - m * lambda_ * alpha.squaredNorm();
    push(std::move(d));
  }

  void add_cut(const VectorXd& v) {
    Direction d;
    d.is_cut = true;
    d.dir = kernel_direction(train_, v);
    d.c = d.dir.constant();
    push(std::move(d));
  }

  /// Re-evaluates every direction at a new centre point.
  void set_center(const MatrixXd& M, const LiftedTensor& N) {
    Mc_ = M;
    Nc_ = N;
    for (auto& d : dirs_) refresh(d);
  }

  std::size_t size() const { return dirs_.size(); }

  /// Drops every direction whose flag in `keep` is false.
  void retain(const std::vector<char>& keep) {
    std::vector<Eigen::Index> idx;
    std::vector<Direction> kept;
    for (std::size_t j = 0; j < dirs_.size(); ++j)
      if (keep[j]) {
        idx.push_back(static_cast<Eigen::Index>(j));
        kept.push_back(std::move(dirs_[j]));
      }
    dirs_ = std::move(kept);
    QM_ = MatrixXd(QM_(idx, idx));
    QN_ = MatrixXd(QN_(idx, idx));
  }
  const Direction& operator[](std::size_t j) const { return dirs_[j]; }

  const MatrixXd& QM() const { return QM_; }
  const MatrixXd& QN() const { return QN_; }
  const MatrixXd& center_m() const { return Mc_; }
  const LiftedTensor& center_n() const { return Nc_; }

  /// aM Mc + sum_j bM_j grad_m(j)  and  aN Nc + sum_j bN_j grad_n(j).
  void materialize(double aM, const VectorXd& bM, double aN, const VectorXd& bN, MatrixXd& M,
                   LiftedTensor& N) const {
    const auto d = train_.dim();
    M = aM * Mc_;
    N = Nc_;
    N *= aN;
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < dirs_.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (bM(jj) != 0.0) M.noalias() += (2.0 * bM(jj)) * dirs_[j].W;
      if (bN(jj) != 0.0) active.push_back(j);
    }
    if (active.empty()) return;
    const auto p = static_cast<Eigen::Index>(active.size());
    MatrixXd Vk(d, p);
    VectorXd w(p);
    for (Eigen::Index r = 0; r < p; ++r) w(r) = bN(static_cast<Eigen::Index>(active[static_cast<std::size_t>(r)]));
    for (Eigen::Index k = 0; k < d; ++k) {
      for (Eigen::Index r = 0; r < p; ++r) Vk.col(r) = dirs_[active[static_cast<std::size_t>(r)]].dir.V.col(k);
      N[k].noalias() += Vk * w.asDiagonal() * Vk.transpose();
    }
  }

 private:
  void refresh(Direction& d) const {
    d.um_center = 2.0 * d.W.cwiseProduct(Mc_).sum();
    d.un_center = d.dir.dot_n(Nc_);
  }

  void push(Direction d) {
    d.W = d.dir.V * d.dir.s.asDiagonal();
    if (Mc_.size() == 0) {
      Mc_ = MatrixXd::Zero(train_.dim(), train_.dim());
      Nc_ = LiftedTensor::zero(train_.dim());
    }
    refresh(d);
    const auto p = static_cast<Eigen::Index>(dirs_.size());
    QM_.conservativeResize(p + 1, p + 1);
    QN_.conservativeResize(p + 1, p + 1);
    for (Eigen::Index i = 0; i <= p; ++i) {
      const Direction& o = i < p ? dirs_[static_cast<std::size_t>(i)] : d;
      const double qm = 4.0 * d.W.cwiseProduct(o.W).sum();
      const double qn = d.dir.V.cwiseProduct(o.dir.V).colwise().sum().squaredNorm();
      QM_(p, i) = QM_(i, p) = qm;
      QN_(p, i) = QN_(i, p) = qn;
    }
    dirs_.push_back(std::move(d));
  }

  const Dataset& train_;
  double lambda_;
  std::vector<Direction> dirs_;
  MatrixXd QM_;
  MatrixXd QN_;
  MatrixXd Mc_;
  LiftedTensor Nc_;
};

struct MasterResult {
  double lower = std::numeric_limits<double>::infinity();  // best model value at a cut-feasible iterate
  double aM = 1.0;
  double aN = 1.0;
  VectorXd bM;
  VectorXd bN;
};

/// Projected subgradient on  max_j plane_j(x)  s.t. cuts, starting at the centre.
inline MasterResult solve_master(const CuttingPlaneModel& model, double gamma, double c0, int steps, double eps_cut,
                                 StepRule rule) {
  const auto p = static_cast<Eigen::Index>(model.size());
  const MatrixXd& QM = model.QM();
  const MatrixXd& QN = model.QN();
  const double rM = gamma;
  const double rN = gamma * gamma;

  double aM = 1.0;
  double aN = 1.0;
  VectorXd bM = VectorXd::Zero(p);
  VectorXd bN = VectorXd::Zero(p);
  VectorXd uM(p);
  VectorXd uN(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    uM(j) = model[static_cast<std::size_t>(j)].um_center;
    uN(j) = model[static_cast<std::size_t>(j)].un_center;
  }
  double nM2 = model.center_m().squaredNorm();
  double nN2 = model.center_n().squared_norm();

  MasterResult best;
  best.bM = bM;
  best.bN = bN;

  for (int s = 0;; ++s) {
    Eigen::Index pick = -1;
    double worst_cut = -eps_cut;
    double value = -std::numeric_limits<double>::infinity();
    Eigen::Index active = -1;
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& d = model[static_cast<std::size_t>(j)];
      if (d.is_cut) {
        const double cv = d.c + uM(j) + uN(j);
        if (cv < worst_cut) {
          worst_cut = cv;
          pick = j;
        }
      } else {
        const double pv = d.c - uM(j) - uN(j);
        if (pv > value) {
          value = pv;
          active = j;
        }
      }
    }
    if (pick < 0) {
      if (value < best.lower) {
        best.lower = value;
        best.aM = aM;
        best.aN = aN;
        best.bM = bM;
        best.bN = bN;
      }
      pick = active;
    }
    if (s >= steps || pick < 0) break;

    const double g2 = QM(pick, pick) + QN(pick, pick);
    if (!(g2 > 0.0)) {
      if (!model[static_cast<std::size_t>(pick)].is_cut) break;  // flat model: centre is optimal
      continue;
    }
    double t = c0 / std::sqrt(static_cast<double>(s + 1));
    if (rule == StepRule::Normalized) t /= std::sqrt(g2);

    nM2 += 2.0 * t * uM(pick) + t * t * QM(pick, pick);
    nN2 += 2.0 * t * uN(pick) + t * t * QN(pick, pick);
    uM.noalias() += t * QM.col(pick);
    uN.noalias() += t * QN.col(pick);
    bM(pick) += t;
    bN(pick) += t;

    if (nM2 > rM * rM) {
      const double sc = rM / std::sqrt(nM2);
      aM *= sc;
      bM *= sc;
      uM *= sc;
      nM2 = rM * rM;
    }
    if (nN2 > rN * rN) {
      const double sc = rN / std::sqrt(nN2);
      aN *= sc;
      bN *= sc;
      uN *= sc;
      nN2 = rN * rN;
    }
  }
  return best;
}

/// Euclidean projection of the leading `k` entries onto the probability simplex
/// and of the rest onto the nonnegative orthant.
inline void project_dual(VectorXd& w, const std::vector<char>& is_cut) {
  std::vector<double> u;
  for (Eigen::Index j = 0; j < w.size(); ++j)
    if (!is_cut[static_cast<std::size_t>(j)]) u.push_back(w(j));
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cum += u[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double shift = is_cut[static_cast<std::size_t>(j)] ? 0.0 : theta;
    w(j) = std::max(w(j) - shift, 0.0);
  }
}

/// Lagrangian lower bound on the relaxed optimum. For plane weights on the
/// simplex and cut multipliers >= 0,
///   sum_planes w c - sum_cuts w c - gamma |g_M(w)| - gamma^2 |g_N(w)|
/// bounds the optimum from below. Maximized by projected gradient ascent;
/// `w` is the warm start and receives the best weights found.
inline double dual_bound(const CuttingPlaneModel& model, double gamma, VectorXd& w, int steps) {
  const auto p = static_cast<Eigen::Index>(model.size());
  const MatrixXd& QM = model.QM();
  const MatrixXd& QN = model.QN();
  std::vector<char> is_cut(static_cast<std::size_t>(p));
  VectorXd c(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& d = model[static_cast<std::size_t>(j)];
    is_cut[static_cast<std::size_t>(j)] = d.is_cut ? 1 : 0;
    c(j) = d.is_cut ? -d.c : d.c;
  }
  const double g2 = gamma * gamma;
  VectorXd qm(p);
  VectorXd qn(p);
  const auto value = [&](const VectorXd& x, double& nm, double& nn) {
    qm.noalias() = QM * x;
    qn.noalias() = QN * x;
    nm = std::sqrt(std::max(x.dot(qm), 0.0));
    nn = std::sqrt(std::max(x.dot(qn), 0.0));
    return c.dot(x) - gamma * nm - g2 * nn;
  };

  const Eigen::Index old = w.size();
  w.conservativeResize(p);
  if (p > old) w.tail(p - old).setZero();
  project_dual(w, is_cut);

  double nm = 0.0;
  double nn = 0.0;
  double best = value(w, nm, nn);
  VectorXd grad(p);
  VectorXd trial(p);
  double eta = 1.0 / (1.0 + gamma * std::sqrt(QM.diagonal().maxCoeff()) + g2 * std::sqrt(QN.diagonal().maxCoeff()));
  for (int s = 0; s < steps && eta > 1e-14; ++s) {
    grad = c;
    if (nm > 0.0) grad.noalias() -= (gamma / nm) * qm;
    if (nn > 0.0) grad.noalias() -= (g2 / nn) * qn;
    trial = w + eta * grad;
    project_dual(trial, is_cut);
    double tm = 0.0;
    double tn = 0.0;
    const double v = value(trial, tm, tn);
    if (v > best) {
      best = v;
      w = trial;
      nm = tm;
      nn = tn;
      eta *= 1.5;
    } else {
      value(w, nm, nn);
      eta *= 0.5;
    }
  }
  return best;
}

/// Dual of the proximal master with both ball multipliers eliminated:
///   max  c'w - h_M(|a_M(w)|) - h_N(|a_N(w)|)   over plane weights on the
/// simplex and cut weights >= 0, where a = rho centre + g(w) and h is the
/// Huber function  s^2 / (2 rho)  for s <= rho r,  r s - rho r^2 / 2  beyond.
/// Sequential minimal optimization with an exact line search along the most
/// violating plane pair or cut coordinate.
class ProxDual {
 public:
  ProxDual(const CuttingPlaneModel& model, double gamma, double rho) : model_(model), rho_(rho) {
    const auto p = static_cast<Eigen::Index>(model.size());
    r_[0] = gamma;
    r_[1] = gamma * gamma;
    is_cut_.resize(static_cast<std::size_t>(p));
    c_.resize(p);
    u_[0].resize(p);
    u_[1].resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& d = model[static_cast<std::size_t>(j)];
      is_cut_[static_cast<std::size_t>(j)] = d.is_cut ? 1 : 0;
      c_(j) = d.is_cut ? -d.c : d.c;
      u_[0](j) = d.um_center;
      u_[1](j) = d.un_center;
    }
    c2_[0] = model.center_m().squaredNorm();
    c2_[1] = model.center_n().squared_norm();
  }

  const std::vector<char>& is_cut() const { return is_cut_; }
  const VectorXd& c() const { return c_; }

  /// 1 / (rho + eta) for block b at the current weights.
  double factor(int b) const {
    const double s = std::sqrt(s2_[b]);
    return s <= rho_ * r_[b] ? 1.0 / rho_ : r_[b] / s;
  }

  void solve(VectorXd& w, double tol, Eigen::Index max_updates) {
    const auto p = w.size();
    q_[0].noalias() = Q(0) * w;
    q_[1].noalias() = Q(1) * w;
    for (int b = 0; b < 2; ++b) s2_[b] = norm2(b, w);
    VectorXd grad(p);
    for (Eigen::Index it = 0; it < max_updates; ++it) {
      const double fM = factor(0);
      const double fN = factor(1);
      grad = c_ - fM * (rho_ * u_[0] + q_[0]) - fN * (rho_ * u_[1] + q_[1]);
      Eigen::Index up = -1;
      Eigen::Index down = -1;
      Eigen::Index cut = -1;
      double g_up = -std::numeric_limits<double>::infinity();
      double g_down = std::numeric_limits<double>::infinity();
      double cut_viol = tol;
      for (Eigen::Index j = 0; j < p; ++j) {
        const double g = grad(j);
        if (is_cut_[static_cast<std::size_t>(j)]) {
          const double v = w(j) > 0.0 ? std::abs(g) : g;
          if (v > cut_viol) {
            cut_viol = v;
            cut = j;
          }
        } else {
          if (g > g_up) {
            g_up = g;
            up = j;
          }
          if (w(j) > 0.0 && g < g_down) {
            g_down = g;
            down = j;
          }
        }
      }
      const double pair_viol = (up >= 0 && down >= 0 && up != down) ? g_up - g_down : 0.0;
      if (pair_viol <= tol && cut < 0) return;
      if (pair_viol >= cut_viol) {
        step(w, up, down, pair_viol, w(down));
      } else if (grad(cut) > 0.0) {
        step(w, cut, -1, grad(cut), std::numeric_limits<double>::infinity());
      } else {
        step(w, -1, cut, -grad(cut), w(cut));
      }
    }
  }

 private:
  const MatrixXd& Q(int b) const { return b == 0 ? model_.QM() : model_.QN(); }

  double norm2(int b, const VectorXd& w) const {
    return std::max(rho_ * rho_ * c2_[b] + 2.0 * rho_ * u_[b].dot(w) + w.dot(q_[b]), 0.0);
  }

  // Moves weight t along e_up - e_down (either index may be absent), choosing
  // t in [0, hi] to maximize the dual. `slope` is the derivative at t = 0.
  void step(VectorXd& w, Eigen::Index up, Eigen::Index down, double slope, double hi) {
    const double cap = hi;
    double a1[2];
    double a2[2];
    double lin = 0.0;
    for (int b = 0; b < 2; ++b) {
      const MatrixXd& q = Q(b);
      a1[b] = 0.0;
      a2[b] = 0.0;
      if (up >= 0) {
        a1[b] += rho_ * u_[b](up) + q_[b](up);
        a2[b] += q(up, up);
      }
      if (down >= 0) {
        a1[b] -= rho_ * u_[b](down) + q_[b](down);
        a2[b] += q(down, down);
      }
      if (up >= 0 && down >= 0) a2[b] -= 2.0 * q(up, down);
      a2[b] = std::max(a2[b], 0.0);
    }
    if (up >= 0) lin += c_(up);
    if (down >= 0) lin -= c_(down);

    const auto f_at = [&](int b, double t) {
      const double s = std::sqrt(std::max(s2_[b] + 2.0 * t * a1[b] + t * t * a2[b], 0.0));
      return s <= rho_ * r_[b] ? 1.0 / rho_ : r_[b] / s;
    };
    const auto deriv = [&](double t) {
      return lin - f_at(0, t) * (a1[0] + t * a2[0]) - f_at(1, t) * (a1[1] + t * a2[1]);
    };
    const auto curv = [&](double t) { return f_at(0, t) * a2[0] + f_at(1, t) * a2[1]; };

    // The derivative is nonincreasing in t; bracket its root, then safeguarded Newton.
    double lo = 0.0;
    double t = curv(0.0) > 0.0 ? slope / curv(0.0) : hi;
    if (!std::isfinite(t)) t = 1.0;
    t = std::min(t, hi);
    double d = deriv(t);
    if (!std::isfinite(hi)) {
      for (int k = 0; k < 200 && d > 0.0; ++k) {
        lo = t;
        t *= 2.0;
        d = deriv(t);
      }
      hi = t;
    }
    if (d >= 0.0 && t >= hi) {
      t = hi;
    } else {
      (d >= 0.0 ? lo : hi) = t;
      for (int k = 0; k < 100 && hi - lo > 1e-15 * std::max(hi, 1.0); ++k) {
        const double dl = deriv(lo);
        if (dl <= 0.0) {
          hi = lo;
          break;
        }
        const double cl = curv(lo);
        double nt = cl > 0.0 ? lo + dl / cl : 0.5 * (lo + hi);
        if (!(nt > lo && nt < hi)) nt = 0.5 * (lo + hi);
        const double dn = deriv(nt);
        if (dn > 0.0) {
          lo = nt;
        } else {
          hi = nt;
          if (dn == 0.0) lo = nt;
        }
      }
      t = lo;
    }
    if (!(t > 0.0)) return;

    const double td = down >= 0 ? (t >= cap ? w(down) : std::min(t, w(down))) : 0.0;
    for (int b = 0; b < 2; ++b) {
      if (up >= 0) q_[b].noalias() += t * Q(b).col(up);
      if (down >= 0) q_[b].noalias() -= td * Q(b).col(down);
    }
    if (up >= 0) w(up) += t;
    if (down >= 0) w(down) -= td;
    for (int b = 0; b < 2; ++b) s2_[b] = norm2(b, w);
  }

  const CuttingPlaneModel& model_;
  double rho_;
  double r_[2];
  double c2_[2];
  VectorXd u_[2];
  VectorXd q_[2];
  double s2_[2] = {0.0, 0.0};
  VectorXd c_;
  std::vector<char> is_cut_;
};

struct ProxResult {
  MasterResult point;
  double model = 0.0;  // max plane value at the query
};

/// Minimizes  max_planes(x) + rho/2 |x - centre|^2  over the two balls and the
/// cuts through `ProxDual`. The primal point is
///   x_M = (rho c_M + g_M(w)) / (rho + eta_M)   (likewise for N).
inline ProxResult prox_master(const CuttingPlaneModel& model, double gamma, double rho, VectorXd& w, int steps) {
  const auto p = static_cast<Eigen::Index>(model.size());
  ProxDual dual(model, gamma, rho);
  const Eigen::Index old = w.size();
  w.conservativeResize(p);
  if (p > old) w.tail(p - old).setZero();
  project_dual(w, dual.is_cut());

  const double scale = std::max(dual.c().cwiseAbs().maxCoeff(), 1.0);
  dual.solve(w, 1e-12 * scale, static_cast<Eigen::Index>(steps) * std::max<Eigen::Index>(p, 10));

  const double fM = dual.factor(0);
  const double fN = dual.factor(1);
  ProxResult r;
  r.point.aM = rho * fM;
  r.point.aN = rho * fN;
  r.point.bM = fM * w;
  r.point.bN = fN * w;
  VectorXd uM(p);
  VectorXd uN(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    uM(j) = model[static_cast<std::size_t>(j)].um_center;
    uN(j) = model[static_cast<std::size_t>(j)].un_center;
  }
  const VectorXd gx = r.point.aM * uM + fM * (model.QM() * w) + r.point.aN * uN + fN * (model.QN() * w);
  r.model = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < p; ++j)
    if (!dual.is_cut()[static_cast<std::size_t>(j)]) r.model = std::max(r.model, dual.c()(j) - gx(j));
  return r;
}

}  // namespace detail

/// Approximately solves the relaxed problem for one (lambda, gamma).
inline IrrSolution solve_irr(const Dataset& train, const Hyperparams& hp, const SolverConfig& cfg = {}) {
  validate(hp);
  validate(cfg);
  require(train.rows() >= 1, "training set is empty");
  const auto d = train.dim();

  IrrSolution sol;
  sol.train = std::make_shared<const Dataset>(train);
  sol.hp = hp;
  sol.M = MatrixXd::Zero(d, d);
  sol.N = LiftedTensor::zero(d, hp.gamma * hp.gamma);

  const detail::Evaluator evaluator(train, hp.lambda, cfg.eigen);
  auto best = evaluator.at(sol.M, sol.N);
  if (!best.factorized) throw FactorizationError("X X^T + m*lambda*I is not positive definite");

  detail::CuttingPlaneModel model(train, hp.lambda);
  model.add_plane(best.alpha);
  const double g0 = std::sqrt(model.QM()(0, 0) + model.QN()(0, 0));

  // A zero gradient at the feasible start is optimal for the convex objective.
  const bool trivial = hp.gamma == 0.0 || train.Z.minCoeff() == 1.0 || g0 == 0.0;
  if (trivial) {
    sol.alpha = best.alpha;
    sol.diagnostics.objective = best.objective;
    sol.diagnostics.lower_bound = best.objective;
    sol.diagnostics.min_eigenvalue = best.min_eig.value;
    sol.diagnostics.converged = true;
    return sol;
  }

  const double c0 = hp.gamma / (1.0 + g0);
  const double rho0 = std::max(g0, std::numeric_limits<double>::min()) / hp.gamma;
  double rho = rho0;

  MatrixXd best_M = sol.M;
  LiftedTensor best_N = sol.N;
  double gap = std::numeric_limits<double>::infinity();
  double lower = -std::numeric_limits<double>::infinity();
  int planes = 1;
  int cuts = 0;
  int it = 0;
  bool converged = false;
  MatrixXd M;
  LiftedTensor N;
  VectorXd prox_w = VectorXd::Ones(1);
  VectorXd dual_w;
  std::vector<int> idle;
  constexpr int kBundleIdle = 10;
  constexpr int kMaxCuts = 4;
  for (it = 1; it <= cfg.max_outer; ++it) {
    detail::MasterResult master;
    if (cfg.master == MasterRule::Bundle) {
      master = detail::prox_master(model, hp.gamma, rho, prox_w, cfg.inner_steps).point;
    } else {
      master = detail::solve_master(model, hp.gamma, c0, cfg.inner_steps, cfg.eps_psd, cfg.step_rule);
    }
    model.materialize(master.aM, master.bM, master.aN, master.bN, M, N);
    M = project_frobenius(M, hp.gamma);
    N = project_frobenius(std::move(N), hp.gamma * hp.gamma);
    N.gamma2 = hp.gamma * hp.gamma;

    const auto ev = evaluator.at(M, N, cfg.eps_psd, kMaxCuts);
    const bool psd = ev.min_eig.value >= -cfg.eps_psd;
    if (!psd) {
      model.add_cut(ev.min_eig.vector);
      ++cuts;
      for (const auto& v : ev.more_negative) {
        model.add_cut(v);
        ++cuts;
      }
    }
    if (ev.factorized) {
      model.add_plane(ev.alpha);
      ++planes;
    }
    bool improved = psd && ev.factorized && ev.objective < best.objective;
    if (improved) {
      best = ev;
      best_M = M;
      best_N = N;
    } else if (!psd && ev.factorized && ev.objective < best.objective) {
      auto [theta, er] = detail::restore_feasibility(evaluator, best, ev, cfg.eps_psd);
      if (theta > 0.0 && er.factorized) {
        model.add_plane(er.alpha);
        ++planes;
        if (er.objective < best.objective) {
          improved = true;
          best_M = (1.0 - theta) * best_M + theta * M;
          LiftedTensor Nq = N;
          Nq *= theta;
          best_N *= 1.0 - theta;
          for (Eigen::Index k = 0; k < d; ++k) best_N[k] += Nq[k];
          best = std::move(er);
        }
      }
    }
    if (improved) {
      model.set_center(best_M, best_N);
      rho = std::max(0.5 * rho, 1e-6 * rho0);
    } else if (psd) {
      rho = std::min(2.0 * rho, 1e8 * rho0);
    }

    if (cfg.master == MasterRule::Bundle) dual_w = prox_w;
    lower = std::max(lower, detail::dual_bound(model, hp.gamma, dual_w, cfg.inner_steps));

    // Bundle compression: forget directions unused by the last master for a while.
    if (cfg.master == MasterRule::Bundle) {
      const auto p = static_cast<Eigen::Index>(model.size());
      idle.resize(static_cast<std::size_t>(p), 0);
      std::vector<char> keep(static_cast<std::size_t>(p), 1);
      Eigen::Index kept = 0;
      const double wmax = prox_w.size() > 0 ? prox_w.maxCoeff() : 0.0;
      const double dmax = dual_w.size() > 0 ? dual_w.maxCoeff() : 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        const bool used = j >= prox_w.size() || prox_w(j) > 1e-9 * wmax || (j < dual_w.size() && dual_w(j) > 1e-9 * dmax);
        idle[jj] = used ? 0 : idle[jj] + 1;
        keep[jj] = idle[jj] <= kBundleIdle ? 1 : 0;
        kept += keep[jj];
      }
      if (kept < p) {
        model.retain(keep);
        const auto select = [&](VectorXd& v) {
          VectorXd out(kept);
          Eigen::Index r = 0;
          for (Eigen::Index j = 0; j < p; ++j)
            if (keep[static_cast<std::size_t>(j)]) out(r++) = j < v.size() ? v(j) : 0.0;
          v = std::move(out);
        };
        select(prox_w);
        select(dual_w);
        std::vector<int> idle_kept;
        for (Eigen::Index j = 0; j < p; ++j)
          if (keep[static_cast<std::size_t>(j)]) idle_kept.push_back(idle[static_cast<std::size_t>(j)]);
        idle = std::move(idle_kept);
      }
    }
    sol.diagnostics.upper_bounds.push_back(best.objective);
    gap = best.objective - lower;
    if (gap <= cfg.tol * std::abs(best.objective)) {
      converged = true;
      break;
    }
  }

  sol.M = std::move(best_M);
  sol.N = std::move(best_N);
  sol.alpha = best.alpha;
  auto& diag = sol.diagnostics;
  diag.iterations = std::min(it, cfg.max_outer);
  diag.gap = gap;
  diag.cuts = cuts;
  diag.planes = planes;
  diag.objective = best.objective;
  diag.lower_bound = lower;
  diag.min_eigenvalue = best.min_eig.value;
  diag.converged = converged || gap <= 10.0 * cfg.tol * std::abs(best.objective);
  return sol;
}

// ---------------------------------------------------------------------------
// Prediction

/// h(x0, z0) = sum_i alpha_i k_MN((x_i, z_i), (x0, z0)), evaluated term by term.
inline double predict(const IrrSolution& sol, const CorruptedSample& s) {
  require(sol.train != nullptr, "solution has no training data");
  const Dataset& tr = *sol.train;
  const auto d = tr.dim();
  require_dims(s.xt.size() == d && s.z.size() == d, "sample dimension does not match the training data");
  const VectorXd zb0 = VectorXd::Ones(d) - s.z;
  const VectorXd a0 = zb0.cwiseProduct(sol.M.transpose() * s.xt);
  std::vector<VectorXd> Nx(static_cast<std::size_t>(d));
  for (Eigen::Index k = 0; k < d; ++k)
    if (zb0(k) != 0.0) Nx[static_cast<std::size_t>(k)] = sol.N[k] * s.xt;

  double h = 0.0;
  for (Eigen::Index i = 0; i < tr.rows(); ++i) {
    const VectorXd xi = tr.X.row(i).transpose();
    const VectorXd zbi = VectorXd::Ones(d) - tr.Z.row(i).transpose();
    const VectorXd ai = zbi.cwiseProduct(sol.M.transpose() * xi);
    double k = xi.dot(s.xt) + ai.dot(s.xt) + xi.dot(a0);
    for (Eigen::Index c = 0; c < d; ++c)
      if (zbi(c) != 0.0 && zb0(c) != 0.0) k += xi.dot(Nx[static_cast<std::size_t>(c)]);
    h += sol.alpha(i) * k;
  }
  return h;
}

/// Precomputed form of the dual predictor; O(d^2) per prediction.
///
///   h(x0, z0) = w . x0 + sum_k zb0_k (s_k (M^T x0)_k + u_k . x0)
///
/// with s = X^T alpha, w = s + A^T alpha and u_k = N_k^T v_k.
class IrrPredictor {
 public:
  explicit IrrPredictor(const IrrSolution& sol) : M_(sol.M) {
    require(sol.train != nullptr, "solution has no training data");
    const Dataset& tr = *sol.train;
    const auto dir = kernel_direction(tr, sol.alpha);
    const MatrixXd A = tr.missing().cwiseProduct(tr.X * sol.M);
    s_ = dir.s;
    w_ = dir.s + A.transpose() * sol.alpha;
    U_.resize(tr.dim(), tr.dim());
    for (Eigen::Index k = 0; k < tr.dim(); ++k) U_.col(k) = sol.N[k].transpose() * dir.V.col(k);
  }

  Eigen::Index dim() const { return w_.size(); }

  double operator()(const CorruptedSample& s) const {
    require_dims(s.xt.size() == dim() && s.z.size() == dim(), "sample dimension does not match the training data");
    const VectorXd mx = M_.transpose() * s.xt;
    const VectorXd ux = U_.transpose() * s.xt;
    double h = w_.dot(s.xt);
    for (Eigen::Index k = 0; k < dim(); ++k)
      if (s.z(k) == 0.0) h += s_(k) * mx(k) + ux(k);
    return h;
  }

  VectorXd predict(const Dataset& ds) const {
    require_dims(ds.dim() == dim(), "dataset dimension does not match the training data");
    const MatrixXd per_k = s_.transpose().replicate(ds.rows(), 1).cwiseProduct(ds.X * M_) + ds.X * U_;
    return ds.X * w_ + ds.missing().cwiseProduct(per_k).rowwise().sum();
  }

 private:
  MatrixXd M_;
  VectorXd s_;
  VectorXd w_;
  MatrixXd U_;
};

/// Ridge on a fixed imputation: prediction w^T impute(x0).
struct LinearPredictor {
  VectorXd w;
  BaselineImputer imputer;

  double operator()(const CorruptedSample& s) const { return w.dot(apply_baseline(imputer, s)); }
  VectorXd predict(const Dataset& ds) const { return apply_baseline(imputer, ds) * w; }
};

/// Fits w = Phi^T alpha with alpha from ridge_alpha on the imputed Gram matrix.
inline LinearPredictor fit_baseline_ridge(const Dataset& train, const BaselineImputer& imp, double lambda) {
  const MatrixXd phi = apply_baseline(imp, train);
  const VectorXd alpha = ridge_alpha(MatrixXd(phi * phi.transpose()), train.y, lambda);
  return {phi.transpose() * alpha, imp};
}

inline double rmse(const VectorXd& predictions, const VectorXd& y) {
  require(y.size() > 0, "test set is empty");
  require_dims(predictions.size() == y.size(), "prediction count must equal label count");
  return std::sqrt((predictions - y).squaredNorm() / static_cast<double>(y.size()));
}

template <class Predictor>
double rmse(const Predictor& predictor, const Dataset& test) {
  require(test.rows() > 0, "test set is empty");
  return rmse(predictor.predict(test), test.y);
}

inline double rmse(const IrrSolution& sol, const Dataset& test) { return rmse(IrrPredictor(sol), test); }

}  // namespace irr
