#include "fringe/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

namespace fringe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_finite(const VectorXd& v) { return v.allFinite(); }

}  // namespace

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::IterationLimit: return "iteration_limit";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

VectorXd solve_linear(const MatrixXd& A, const VectorXd& b) {
  const int n = static_cast<int>(A.rows());
  if (A.cols() != n || b.size() != n) {
    throw std::invalid_argument("solve_linear: non-square system");
  }
  const double scale = A.cwiseAbs().maxCoeff();
  const double pivot_floor = 1e-12 * std::max(1.0, scale);

  MatrixXd lu = A;
  VectorXd x = b;
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;

  for (int k = 0; k < n; ++k) {
    int piv = k;
    double best = std::abs(lu(k, k));
    for (int i = k + 1; i < n; ++i) {
      const double cand = std::abs(lu(i, k));
      if (cand > best) {
        best = cand;
        piv = i;
      }
    }
    if (best < pivot_floor) {
      throw SingularMatrix("solve_linear: pivot " + std::to_string(best) +
                           " below threshold at column " + std::to_string(k));
    }
    if (piv != k) {
      lu.row(piv).swap(lu.row(k));
      std::swap(x(piv), x(k));
      std::swap(perm[piv], perm[k]);
    }
    for (int i = k + 1; i < n; ++i) {
      const double factor = lu(i, k) / lu(k, k);
      lu(i, k) = factor;
      if (factor != 0.0) {
        lu.row(i).tail(n - k - 1) -= factor * lu.row(k).tail(n - k - 1);
        x(i) -= factor * x(k);
      }
    }
  }
  auto back_substitute = [&](VectorXd rhs) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < i; ++j) rhs(i) -= lu(i, j) * rhs(j);
    }
    for (int i = n - 1; i >= 0; --i) {
      for (int j = i + 1; j < n; ++j) rhs(i) -= lu(i, j) * rhs(j);
      rhs(i) /= lu(i, i);
    }
    return rhs;
  };

  // x currently holds the permuted, partially eliminated rhs; finish it.
  for (int i = n - 1; i >= 0; --i) {
    for (int j = i + 1; j < n; ++j) x(i) -= lu(i, j) * x(j);
    x(i) /= lu(i, i);
  }
  // One pass of iterative refinement against the original data.
  VectorXd residual = b - A * x;
  VectorXd permuted(n);
  for (int i = 0; i < n; ++i) permuted(i) = residual(perm[i]);
  x += back_substitute(permuted);
  return x;
}

QpProblem QpProblem::make(int n) {
  QpProblem p;
  p.hessian = MatrixXd::Zero(n, n);
  p.linear = VectorXd::Zero(n);
  p.eq_A = MatrixXd::Zero(0, n);
  p.eq_b = VectorXd::Zero(0);
  p.ineq_A = MatrixXd::Zero(0, n);
  p.ineq_b = VectorXd::Zero(0);
  p.lower = VectorXd::Constant(n, -kInf);
  p.upper = VectorXd::Constant(n, kInf);
  return p;
}

void QpProblem::check_shape() const {
  const int nn = n();
  if (hessian.rows() != nn || hessian.cols() != nn)
    throw std::invalid_argument("QpProblem: hessian shape mismatch");
  const double hscale = hessian.cwiseAbs().maxCoeff();
  if ((hessian - hessian.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, hscale))
    throw std::invalid_argument("QpProblem: hessian not symmetric");
  if (eq_A.rows() != eq_b.size() || (eq_A.rows() > 0 && eq_A.cols() != nn))
    throw std::invalid_argument("QpProblem: equality shape mismatch");
  if (ineq_A.rows() != ineq_b.size() ||
      (ineq_A.rows() > 0 && ineq_A.cols() != nn))
    throw std::invalid_argument("QpProblem: inequality shape mismatch");
  if (lower.size() != nn || upper.size() != nn)
    throw std::invalid_argument("QpProblem: bound shape mismatch");
}

namespace {

// Internal canonical QP form: min 1/2 x'Hx + c'x, E x = e, G x >= h.
// Bounds are folded into G. The primal active-set method below maintains
// feasibility; directions come from a null-space reduction of the working
// set, so positive semidefinite (including zero) Hessians are handled.
struct ActiveSetCore {
  const MatrixXd& H;
  const VectorXd& c;
  MatrixXd E;
  VectorXd e;
  MatrixXd G;
  VectorXd h;
  int n;
  int m_eq;
  int m_in;

  VectorXd x;
  std::vector<int> working;        // inequality indices in the working set
  std::vector<char> in_working;    // membership flags
  int iterations = 0;
  bool bland_mode = false;
  int zero_steps = 0;
  SolveStatus status = SolveStatus::IterationLimit;
  VectorXd eq_duals;
  VectorXd ineq_duals;

  ActiveSetCore(const MatrixXd& H_, const VectorXd& c_, MatrixXd E_,
                VectorXd e_, MatrixXd G_, VectorXd h_)
      : H(H_), c(c_), E(std::move(E_)), e(std::move(e_)), G(std::move(G_)),
        h(std::move(h_)) {
    n = static_cast<int>(c.size());
    m_eq = static_cast<int>(e.size());
    m_in = static_cast<int>(h.size());
    in_working.assign(m_in, 0);
    eq_duals = VectorXd::Zero(m_eq);
    ineq_duals = VectorXd::Zero(m_in);
  }

  MatrixXd working_matrix() const {
    MatrixXd A(m_eq + static_cast<int>(working.size()), n);
    if (m_eq > 0) A.topRows(m_eq) = E;
    for (size_t k = 0; k < working.size(); ++k) {
      A.row(m_eq + static_cast<int>(k)) = G.row(working[k]);
    }
    return A;
  }

  void run(int max_iterations) {
    const double scale = 1.0 + c.cwiseAbs().maxCoeff() +
                         (H.size() > 0 ? H.cwiseAbs().maxCoeff() : 0.0);
    const double tol_stat = 1e-9 * scale;
    const double tol_dual = 1e-8 * scale;

    for (iterations = 0; iterations < max_iterations; ++iterations) {
      VectorXd g = c;
      if (H.size() > 0) g += H * x;

      MatrixXd A = working_matrix();
      const int m_act = static_cast<int>(A.rows());

      MatrixXd Z;  // null-space basis of the working set
      Eigen::ColPivHouseholderQR<MatrixXd> qr;
      int rank = 0;
      if (m_act > 0) {
        qr.compute(A.transpose());
        rank = static_cast<int>(qr.rank());
        MatrixXd Q = qr.householderQ();
        Z = Q.rightCols(n - rank);
      } else {
        Z = MatrixXd::Identity(n, n);
      }

      bool need_multiplier_check = false;
      VectorXd p = VectorXd::Zero(n);
      bool linear_direction = false;

      if (Z.cols() == 0) {
        need_multiplier_check = true;
      } else {
        VectorXd gr = Z.transpose() * g;
        if (gr.cwiseAbs().maxCoeff() <= tol_stat) {
          need_multiplier_check = true;
        } else {
          // Split the reduced Hessian into its curved and flat eigenspaces.
          // Any gradient component in the flat part gives a linear descent
          // ray (step to the nearest blocking constraint); otherwise take
          // the Newton step on the curved part.
          MatrixXd Hr = Z.transpose() * H * Z;
          const double hr_scale = std::max(1.0, Hr.cwiseAbs().maxCoeff());
          Eigen::SelfAdjointEigenSolver<MatrixXd> es(Hr);
          const VectorXd& evals = es.eigenvalues();
          const MatrixXd& evecs = es.eigenvectors();
          VectorXd gr_proj = evecs.transpose() * gr;
          const double eig_tol = 1e-9 * hr_scale;

          VectorXd d = VectorXd::Zero(Z.cols());
          double flat_norm2 = 0.0;
          for (int i = 0; i < evals.size(); ++i) {
            if (evals(i) <= eig_tol) flat_norm2 += gr_proj(i) * gr_proj(i);
          }
          if (std::sqrt(flat_norm2) > 1e-10 * (1.0 + gr.norm())) {
            for (int i = 0; i < evals.size(); ++i) {
              if (evals(i) <= eig_tol) d -= gr_proj(i) * evecs.col(i);
            }
            linear_direction = true;
          } else {
            for (int i = 0; i < evals.size(); ++i) {
              if (evals(i) > eig_tol) {
                d -= (gr_proj(i) / evals(i)) * evecs.col(i);
              }
            }
          }
          if (d.cwiseAbs().maxCoeff() <=
              1e-13 * (1.0 + x.cwiseAbs().maxCoeff())) {
            need_multiplier_check = true;
          } else {
            p = Z * d;
          }
        }
      }

      if (need_multiplier_check) {
        // x is stationary on the working set; inspect the multipliers.
        VectorXd lambda = VectorXd::Zero(m_act);
        if (m_act > 0) lambda = qr.solve(g);
        int drop = -1;
        double most_negative = -tol_dual;
        for (size_t k = 0; k < working.size(); ++k) {
          const double lam = lambda(m_eq + static_cast<int>(k));
          if (bland_mode) {
            if (lam < -tol_dual &&
                (drop < 0 || working[k] < working[static_cast<size_t>(drop)])) {
              drop = static_cast<int>(k);
            }
          } else if (lam < most_negative) {
            most_negative = lam;
            drop = static_cast<int>(k);
          }
        }
        if (drop < 0) {
          for (int i = 0; i < m_eq; ++i) eq_duals(i) = lambda(i);
          ineq_duals.setZero();
          for (size_t k = 0; k < working.size(); ++k) {
            ineq_duals(working[k]) =
                std::max(0.0, lambda(m_eq + static_cast<int>(k)));
          }
          status = SolveStatus::Optimal;
          return;
        }
        in_working[working[static_cast<size_t>(drop)]] = 0;
        working.erase(working.begin() + drop);
        continue;
      }

      // Ratio test against inequalities outside the working set.
      double alpha_max = kInf;
      int blocking = -1;
      for (int i = 0; i < m_in; ++i) {
        if (in_working[i]) continue;
        const double ap = G.row(i).dot(p);
        if (ap < -1e-12) {
          const double slack = G.row(i).dot(x) - h(i);
          const double ratio = std::max(0.0, slack) / (-ap);
          if (ratio < alpha_max - 1e-15 ||
              (bland_mode && ratio <= alpha_max + 1e-15 &&
               (blocking < 0 || i < blocking))) {
            alpha_max = ratio;
            blocking = i;
          }
        }
      }

      double alpha;
      if (linear_direction) {
        if (blocking < 0) {
          status = SolveStatus::Unbounded;
          return;
        }
        alpha = alpha_max;
      } else {
        alpha = std::min(1.0, alpha_max);
      }

      if (alpha <= 1e-14) {
        ++zero_steps;
        if (zero_steps > 40) bland_mode = true;
      } else {
        zero_steps = 0;
      }

      x += alpha * p;
      if (blocking >= 0 && alpha >= alpha_max - 1e-15) {
        working.push_back(blocking);
        in_working[blocking] = 1;
      }
    }
    status = SolveStatus::IterationLimit;
  }
};

// Gathers bounds and general inequalities into a single >= system.
void build_inequalities(const QpProblem& p, MatrixXd& G, VectorXd& h,
                        std::vector<int>& kind, std::vector<int>& index) {
  const int n = p.n();
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int i = 0; i < p.ineq_A.rows(); ++i) {
    rows.emplace_back(p.ineq_A.row(i));
    rhs.push_back(p.ineq_b(i));
    kind.push_back(0);
    index.push_back(i);
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(p.lower(j))) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
      r(j) = 1.0;
      rows.emplace_back(r);
      rhs.push_back(p.lower(j));
      kind.push_back(1);
      index.push_back(j);
    }
    if (std::isfinite(p.upper(j))) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
      r(j) = -1.0;
      rows.emplace_back(r);
      rhs.push_back(-p.upper(j));
      kind.push_back(2);
      index.push_back(j);
    }
  }
  G.resize(static_cast<int>(rows.size()), n);
  h.resize(static_cast<int>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    G.row(static_cast<int>(i)) = rows[i];
    h(static_cast<int>(i)) = rhs[i];
  }
}

// Elastic phase 1: minimize t subject to the relaxed constraint system.
// Bounds stay hard (the starting point honours them); equalities and general
// inequalities are relaxed by t.
bool phase_one(const QpProblem& p, const MatrixXd& G, const VectorXd& h,
               const std::vector<int>& kind, VectorXd& x_out) {
  const int n = p.n();
  VectorXd x0(n);
  for (int j = 0; j < n; ++j) {
    double lo = p.lower(j), hi = p.upper(j);
    double v = 0.0;
    if (std::isfinite(lo) && std::isfinite(hi)) v = 0.5 * (lo + hi);
    else if (std::isfinite(lo)) v = std::max(0.0, lo);
    else if (std::isfinite(hi)) v = std::min(0.0, hi);
    x0(j) = v;
  }

  double violation = 0.0;
  for (int i = 0; i < p.eq_A.rows(); ++i) {
    violation = std::max(violation, std::abs(p.eq_A.row(i).dot(x0) - p.eq_b(i)));
  }
  for (int i = 0; i < G.rows(); ++i) {
    if (kind[i] != 0) continue;
    violation = std::max(violation, h(i) - G.row(i).dot(x0));
  }
  const double scale =
      1.0 + std::max(p.eq_b.size() ? p.eq_b.cwiseAbs().maxCoeff() : 0.0,
                     h.size() ? h.cwiseAbs().maxCoeff() : 0.0);
  if (violation <= 1e-11 * scale) {
    x_out = x0;
    return true;
  }

  // Variables (x, t).
  const int m_eq = static_cast<int>(p.eq_A.rows());
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  auto push = [&](const Eigen::RowVectorXd& r, double b) {
    rows.push_back(r);
    rhs.push_back(b);
  };
  for (int i = 0; i < m_eq; ++i) {
    Eigen::RowVectorXd r(n + 1);
    r << p.eq_A.row(i), 1.0;
    push(r, p.eq_b(i));
    r << -p.eq_A.row(i), 1.0;
    push(r, -p.eq_b(i));
  }
  for (int i = 0; i < G.rows(); ++i) {
    Eigen::RowVectorXd r(n + 1);
    if (kind[i] == 0) {
      r << G.row(i), 1.0;
    } else {
      r << G.row(i), 0.0;  // bounds stay hard
    }
    push(r, h(i));
  }
  {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n + 1);
    r(n) = 1.0;
    push(r, 0.0);  // t >= 0
  }

  MatrixXd Gp(static_cast<int>(rows.size()), n + 1);
  VectorXd hp(static_cast<int>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    Gp.row(static_cast<int>(i)) = rows[i];
    hp(static_cast<int>(i)) = rhs[i];
  }

  MatrixXd Hp = MatrixXd::Zero(n + 1, n + 1);
  VectorXd cp = VectorXd::Zero(n + 1);
  cp(n) = 1.0;

  ActiveSetCore core(Hp, cp, MatrixXd::Zero(0, n + 1), VectorXd::Zero(0),
                     std::move(Gp), std::move(hp));
  core.x = VectorXd(n + 1);
  core.x.head(n) = x0;
  core.x(n) = violation * 1.01 + 1e-9 * scale;
  core.run(200 + 20 * (n + 1));

  if (core.x(n) > 1e-7 * scale) return false;
  x_out = core.x.head(n);
  return true;
}

}  // namespace

QpResult solve_qp(const QpProblem& p, const QpOptions& options) {
  p.check_shape();
  const int n = p.n();
  QpResult result;
  result.report.tolerances = ToleranceConfig{};

  if (!options.skip_convexity_check) {
    const double hscale = std::max(1.0, p.hessian.cwiseAbs().maxCoeff());
    MatrixXd Z;
    if (p.eq_A.rows() > 0) {
      Eigen::ColPivHouseholderQR<MatrixXd> qr(p.eq_A.transpose());
      MatrixXd Q = qr.householderQ();
      Z = Q.rightCols(n - qr.rank());
    } else {
      Z = MatrixXd::Identity(n, n);
    }
    if (Z.cols() > 0) {
      MatrixXd Hr = Z.transpose() * p.hessian * Z;
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Hr);
      if (eig.eigenvalues().minCoeff() < -1e-6 * hscale) {
        throw NonConvexError(
            "solve_qp: hessian indefinite on the feasible subspace "
            "(min reduced eigenvalue " +
            std::to_string(eig.eigenvalues().minCoeff()) + ")");
      }
    }
  }

  MatrixXd G;
  VectorXd h;
  std::vector<int> kind, index;
  build_inequalities(p, G, h, kind, index);

  VectorXd x0;
  if (!phase_one(p, G, h, kind, x0)) {
    result.report.status = SolveStatus::Infeasible;
    result.x = VectorXd::Zero(n);
    result.eq_duals = VectorXd::Zero(p.eq_A.rows());
    result.ineq_duals = VectorXd::Zero(p.ineq_A.rows());
    result.lower_duals = VectorXd::Zero(n);
    result.upper_duals = VectorXd::Zero(n);
    return result;
  }

  ActiveSetCore core(p.hessian, p.linear, p.eq_A, p.eq_b, G, h);
  core.x = x0;
  const int max_iter =
      options.max_iterations > 0 ? options.max_iterations : 200 + 30 * n;
  core.run(max_iter);

  // Polish: re-solve the KKT system of the final working set.
  if (core.status == SolveStatus::Optimal) {
    MatrixXd A = core.working_matrix();
    const int m_act = static_cast<int>(A.rows());
    if (m_act >= 0) {
      MatrixXd K = MatrixXd::Zero(n + m_act, n + m_act);
      K.topLeftCorner(n, n) = p.hessian;
      if (m_act > 0) {
        K.topRightCorner(n, m_act) = -A.transpose();
        K.bottomLeftCorner(m_act, n) = A;
      }
      VectorXd rhs(n + m_act);
      rhs.head(n) = -p.linear;
      for (int i = 0; i < p.eq_A.rows(); ++i) rhs(n + i) = p.eq_b(i);
      for (size_t k = 0; k < core.working.size(); ++k) {
        rhs(n + p.eq_A.rows() + static_cast<int>(k)) = h(core.working[k]);
      }
      try {
        VectorXd sol = solve_linear(K, rhs);
        VectorXd xp = sol.head(n);
        bool ok = true;
        for (int i = 0; i < G.rows() && ok; ++i) {
          if (G.row(i).dot(xp) < h(i) - 1e-8 * (1.0 + std::abs(h(i)))) ok = false;
        }
        if (ok && is_finite(xp)) {
          core.x = xp;
          for (int i = 0; i < p.eq_A.rows(); ++i) core.eq_duals(i) = sol(n + i);
          core.ineq_duals.setZero();
          for (size_t k = 0; k < core.working.size(); ++k) {
            core.ineq_duals(core.working[k]) = std::max(
                0.0, sol(n + p.eq_A.rows() + static_cast<int>(k)));
          }
        }
      } catch (const SingularMatrix&) {
        // degenerate working set; keep the active-set iterate
      }
    }
  }

  result.x = core.x;
  result.eq_duals = core.eq_duals;
  result.ineq_duals = VectorXd::Zero(p.ineq_A.rows());
  result.lower_duals = VectorXd::Zero(n);
  result.upper_duals = VectorXd::Zero(n);
  for (int i = 0; i < G.rows(); ++i) {
    const double dual = core.ineq_duals(i);
    if (dual == 0.0) continue;
    if (kind[i] == 0) result.ineq_duals(index[i]) = dual;
    else if (kind[i] == 1) result.lower_duals(index[i]) = dual;
    else result.upper_duals(index[i]) = dual;
  }

  result.report.status = core.status;
  result.report.iterations = core.iterations;
  result.report.objective =
      0.5 * core.x.dot(p.hessian * core.x) + p.linear.dot(core.x);

  // KKT residual: stationarity, primal feasibility, complementarity.
  VectorXd g = p.hessian * core.x + p.linear;
  VectorXd res = g;
  if (p.eq_A.rows() > 0) res -= p.eq_A.transpose() * result.eq_duals;
  if (p.ineq_A.rows() > 0) res -= p.ineq_A.transpose() * result.ineq_duals;
  res -= result.lower_duals;
  res += result.upper_duals;
  const double gscale = 1.0 + g.cwiseAbs().maxCoeff();
  double kkt = res.cwiseAbs().maxCoeff() / gscale;
  for (int i = 0; i < p.eq_A.rows(); ++i) {
    kkt = std::max(kkt, std::abs(p.eq_A.row(i).dot(core.x) - p.eq_b(i)) /
                            (1.0 + std::abs(p.eq_b(i))));
  }
  for (int i = 0; i < p.ineq_A.rows(); ++i) {
    const double slack = p.ineq_A.row(i).dot(core.x) - p.ineq_b(i);
    kkt = std::max(kkt, std::max(0.0, -slack) / (1.0 + std::abs(p.ineq_b(i))));
    kkt = std::max(kkt, std::abs(result.ineq_duals(i) * slack) /
                            (gscale * (1.0 + std::abs(p.ineq_b(i)))));
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(p.lower(j))) {
      const double slack = core.x(j) - p.lower(j);
      kkt = std::max(kkt, std::max(0.0, -slack));
      kkt = std::max(kkt, std::abs(result.lower_duals(j) * slack) / gscale);
    }
    if (std::isfinite(p.upper(j))) {
      const double slack = p.upper(j) - core.x(j);
      kkt = std::max(kkt, std::max(0.0, -slack));
      kkt = std::max(kkt, std::abs(result.upper_duals(j) * slack) / gscale);
    }
  }
  result.report.kkt_residual = kkt;
  return result;
}

namespace {

VectorXd project_box(const VectorXd& x, const VectorXd& lo, const VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace

NlpResult solve_nlp_local(const NlpProblem& p, const VectorXd& start,
                          const NlpOptions& options) {
  NlpResult result;
  result.report.tolerances = ToleranceConfig{};
  const int n = p.n;
  const int m = p.eq_count;

  VectorXd x = project_box(start, p.lower, p.upper);
  VectorXd mu = VectorXd::Zero(m);
  double rho = options.initial_penalty;

  auto al_value = [&](const VectorXd& xx, VectorXd* grad) -> double {
    VectorXd gf;
    double val = p.objective(xx, grad ? &gf : nullptr);
    if (m > 0) {
      VectorXd cc = p.eq_values(xx);
      val += mu.dot(cc) + 0.5 * rho * cc.squaredNorm();
      if (grad) {
        *grad = gf + p.eq_jt_product(xx, mu + rho * cc);
      }
    } else if (grad) {
      *grad = gf;
    }
    return val;
  };

  int total_inner = 0;
  double feas_prev = kInf;
  double omega = 1e-2;
  SolveStatus status = SolveStatus::IterationLimit;

  for (int outer = 0; outer < options.max_outer; ++outer) {
    // Spectral projected gradient on the box.
    VectorXd g(n);
    double fval = al_value(x, &g);
    if (!std::isfinite(fval) || !is_finite(g)) {
      status = SolveStatus::NumericalFailure;
      break;
    }
    double alpha = 1.0 / std::max(1e-8, g.cwiseAbs().maxCoeff());
    std::deque<double> history{fval};
    const double gamma = 1e-4;

    int inner = 0;
    for (; inner < options.max_inner; ++inner) {
      VectorXd d = project_box(x - alpha * g, p.lower, p.upper) - x;
      const double dnorm = d.cwiseAbs().maxCoeff();
      if (dnorm <= omega) break;

      const double gd = g.dot(d);
      double fmax = *std::max_element(history.begin(), history.end());
      double t = 1.0;
      VectorXd x_new;
      double f_new = 0.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        x_new = x + t * d;
        f_new = al_value(x_new, nullptr);
        if (std::isfinite(f_new) && f_new <= fmax + gamma * t * gd) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;

      VectorXd g_new(n);
      al_value(x_new, &g_new);
      if (!is_finite(g_new)) {
        status = SolveStatus::NumericalFailure;
        x = x_new;
        break;
      }
      VectorXd s = x_new - x;
      VectorXd y = g_new - g;
      const double sy = s.dot(y);
      if (sy > 1e-16) {
        alpha = std::min(1e10, std::max(1e-10, s.squaredNorm() / sy));
      } else {
        alpha = std::min(1e10, alpha * 2.0);
      }
      x = x_new;
      g = g_new;
      fval = f_new;
      history.push_back(fval);
      if (history.size() > 10) history.pop_front();
    }
    total_inner += inner;
    if (status == SolveStatus::NumericalFailure) break;

    VectorXd c = m > 0 ? p.eq_values(x) : VectorXd();
    const double feas = m > 0 ? c.cwiseAbs().maxCoeff() : 0.0;

    // Stationarity of the Lagrangian with the current multiplier estimate.
    VectorXd gf(n);
    p.objective(x, &gf);
    VectorXd lag_grad = gf;
    if (m > 0) lag_grad += p.eq_jt_product(x, mu + rho * c);
    const double pg =
        (project_box(x - lag_grad, p.lower, p.upper) - x).cwiseAbs().maxCoeff();

    if (feas <= options.feasibility_tol * (1.0) &&
        pg <= options.stationarity_tol) {
      if (m > 0) mu += rho * c;
      status = SolveStatus::Optimal;
      break;
    }

    if (m > 0) {
      if (feas <= 0.25 * feas_prev || feas <= options.feasibility_tol) {
        mu += rho * c;
        feas_prev = feas;
      } else {
        rho = std::min(options.max_penalty, rho * options.penalty_growth);
      }
    }
    omega = std::max(0.1 * omega, 1e-9);
    if (total_inner >= options.max_inner * options.max_outer) break;
  }

  result.x = x;
  result.multipliers = mu;
  VectorXd gf(n);
  const double fv = p.objective(x, &gf);
  result.report.objective = fv;
  result.report.iterations = total_inner;
  VectorXd c = m > 0 ? p.eq_values(x) : VectorXd();
  VectorXd lag_grad = gf;
  if (m > 0) lag_grad += p.eq_jt_product(x, mu);
  const double pg =
      (project_box(x - lag_grad, p.lower, p.upper) - x).cwiseAbs().maxCoeff();
  const double feas = m > 0 ? c.cwiseAbs().maxCoeff() : 0.0;
  result.report.kkt_residual = std::max(pg, feas);
  result.report.status = status;
  if (status == SolveStatus::Optimal &&
      (feas > 10 * options.feasibility_tol || !is_finite(x))) {
    result.report.status = SolveStatus::NumericalFailure;
  }
  return result;
}

double finite_diff_check(
    const std::function<double(const VectorXd&, VectorXd*)>& f,
    const VectorXd& x) {
  const int n = static_cast<int>(x.size());
  VectorXd grad(n);
  f(x, &grad);
  double worst = 0.0;
  VectorXd xx = x;
  for (int i = 0; i < n; ++i) {
    const double h = 1e-6 * (1.0 + std::abs(x(i)));
    xx(i) = x(i) + h;
    const double fp = f(xx, nullptr);
    xx(i) = x(i) - h;
    const double fm = f(xx, nullptr);
    xx(i) = x(i);
    const double central = (fp - fm) / (2.0 * h);
    const double err = std::abs(grad(i) - central) / (1.0 + std::abs(grad(i)));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fringe
