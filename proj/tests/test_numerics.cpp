#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "fringe/numerics.hpp"

using namespace fringe;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Exhaustive oracle: enumerate working sets of the inequality system (bounds
// included), solve the KKT equations of each, and keep the best point that is
// primal feasible with nonnegative multipliers.
struct EnumeratedQp {
  bool found = false;
  VectorXd x;
  double objective = 0.0;
};

EnumeratedQp enumerate_qp(const QpProblem& p) {
  const int n = p.n();
  // Collect all inequality rows: general rows, then lower/upper bounds.
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int i = 0; i < p.ineq_A.rows(); ++i) {
    rows.emplace_back(p.ineq_A.row(i));
    rhs.push_back(p.ineq_b(i));
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(p.lower(j))) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
      r(j) = 1.0;
      rows.emplace_back(r);
      rhs.push_back(p.lower(j));
    }
    if (std::isfinite(p.upper(j))) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
      r(j) = -1.0;
      rows.emplace_back(r);
      rhs.push_back(-p.upper(j));
    }
  }
  const int m = static_cast<int>(rows.size());
  const int m_eq = static_cast<int>(p.eq_A.rows());

  EnumeratedQp best;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> active;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) active.push_back(i);
    }
    const int ma = static_cast<int>(active.size());
    if (m_eq + ma > n) continue;
    MatrixXd K = MatrixXd::Zero(n + m_eq + ma, n + m_eq + ma);
    VectorXd r = VectorXd::Zero(n + m_eq + ma);
    K.topLeftCorner(n, n) = p.hessian;
    r.head(n) = -p.linear;
    for (int i = 0; i < m_eq; ++i) {
      K.block(n + i, 0, 1, n) = p.eq_A.row(i);
      K.block(0, n + i, n, 1) = -p.eq_A.row(i).transpose();
      r(n + i) = p.eq_b(i);
    }
    for (int a = 0; a < ma; ++a) {
      K.block(n + m_eq + a, 0, 1, n) = rows[active[a]];
      K.block(0, n + m_eq + a, n, 1) = -rows[active[a]].transpose();
      r(n + m_eq + a) = rhs[active[a]];
    }
    VectorXd sol;
    try {
      sol = solve_linear(K, r);
    } catch (const SingularMatrix&) {
      continue;
    }
    VectorXd x = sol.head(n);
    bool feasible = true;
    for (int i = 0; i < m && feasible; ++i) {
      if (rows[i].dot(x) < rhs[i] - 1e-7) feasible = false;
    }
    for (int i = 0; i < m_eq && feasible; ++i) {
      if (std::abs(p.eq_A.row(i).dot(x) - p.eq_b(i)) > 1e-7) feasible = false;
    }
    for (int a = 0; a < ma && feasible; ++a) {
      if (sol(n + m_eq + a) < -1e-7) feasible = false;
    }
    if (!feasible) continue;
    const double obj = 0.5 * x.dot(p.hessian * x) + p.linear.dot(x);
    if (!best.found || obj < best.objective - 1e-12) {
      best.found = true;
      best.x = x;
      best.objective = obj;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("solve_linear identity and diagonal") {
  MatrixXd I = MatrixXd::Identity(3, 3);
  VectorXd b(3);
  b << 1.5, -2.0, 7.0;
  CHECK((solve_linear(I, b) - b).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  MatrixXd A(2, 2);
  A << 2, 0, 0, 4;
  VectorXd b2(2);
  b2 << 2, 8;
  VectorXd x = solve_linear(A, b2);
  CHECK(x(0) == doctest::Approx(1.0));
  CHECK(x(1) == doctest::Approx(2.0));
}

TEST_CASE("solve_linear recovers a random well-conditioned system") {
  std::mt19937 rng(7);
  std::normal_distribution<double> gauss;
  const int n = 20;
  MatrixXd A(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) A(i, j) = gauss(rng);
  }
  A += n * MatrixXd::Identity(n, n);
  VectorXd x_true(n);
  for (int i = 0; i < n; ++i) x_true(i) = gauss(rng);
  VectorXd b = A * x_true;
  VectorXd x = solve_linear(A, b);
  const double resid = (A * x - b).cwiseAbs().maxCoeff();
  CHECK(resid <= 1e-8 * (1.0 + b.cwiseAbs().maxCoeff()));
}

TEST_CASE("solve_linear raises on singular input") {
  MatrixXd A = MatrixXd::Zero(2, 2);
  A(0, 0) = 1.0;
  VectorXd b = VectorXd::Ones(2);
  CHECK_THROWS_AS(solve_linear(A, b), SingularMatrix);
}

TEST_CASE("solve_qp single active bound") {
  // min x^2 s.t. x >= 3
  QpProblem p = QpProblem::make(1);
  p.hessian(0, 0) = 2.0;
  p.ineq_A = MatrixXd::Ones(1, 1);
  p.ineq_b = VectorXd::Constant(1, 3.0);
  QpResult res = solve_qp(p);
  REQUIRE(res.report.status == SolveStatus::Optimal);
  CHECK(res.x(0) == doctest::Approx(3.0));
  CHECK(res.ineq_duals(0) == doctest::Approx(6.0));
  CHECK(res.report.kkt_residual <= 1e-7);
}

TEST_CASE("solve_qp symmetric equality projection") {
  // min (x-1)^2 + (y-1)^2 s.t. x + y = 1
  QpProblem p = QpProblem::make(2);
  p.hessian = 2.0 * MatrixXd::Identity(2, 2);
  p.linear << -2.0, -2.0;
  p.eq_A = MatrixXd::Ones(1, 2);
  p.eq_b = VectorXd::Constant(1, 1.0);
  QpResult res = solve_qp(p);
  REQUIRE(res.report.status == SolveStatus::Optimal);
  CHECK(res.x(0) == doctest::Approx(0.5));
  CHECK(res.x(1) == doctest::Approx(0.5));
}

TEST_CASE("solve_qp detects infeasibility") {
  QpProblem p = QpProblem::make(1);
  p.hessian(0, 0) = 2.0;
  p.lower(0) = 0.0;
  p.upper(0) = 1.0;
  p.ineq_A = MatrixXd::Ones(1, 1);
  p.ineq_b = VectorXd::Constant(1, 2.0);  // x >= 2 against x <= 1
  QpResult res = solve_qp(p);
  CHECK(res.report.status == SolveStatus::Infeasible);
}

TEST_CASE("solve_qp rejects indefinite objectives") {
  QpProblem p = QpProblem::make(2);
  p.hessian << 1, 0, 0, -1;
  p.lower.setZero();
  p.upper.setConstant(1.0);
  CHECK_THROWS_AS(solve_qp(p), NonConvexError);
}

TEST_CASE("solve_qp matches exhaustive enumeration on random convex QPs") {
  std::mt19937 rng(42);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unif(0.2, 1.5);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 5;
    MatrixXd R(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) R(i, j) = gauss(rng);
    }
    QpProblem p = QpProblem::make(n);
    p.hessian = R.transpose() * R + 0.3 * MatrixXd::Identity(n, n);
    for (int i = 0; i < n; ++i) p.linear(i) = gauss(rng);
    VectorXd x0(n);
    for (int i = 0; i < n; ++i) x0(i) = gauss(rng);
    p.ineq_A.resize(3, n);
    p.ineq_b.resize(3);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < n; ++j) p.ineq_A(i, j) = gauss(rng);
      p.ineq_b(i) = p.ineq_A.row(i).dot(x0) - unif(rng);
    }
    p.lower = x0.array() - 2.0;
    p.upper = x0.array() + 2.0;

    QpResult res = solve_qp(p);
    REQUIRE(res.report.status == SolveStatus::Optimal);
    EnumeratedQp oracle = enumerate_qp(p);
    REQUIRE(oracle.found);
    CHECK(res.report.objective ==
          doctest::Approx(oracle.objective).epsilon(1e-6));
    CHECK((res.x - oracle.x).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("solve_qp handles pure LPs") {
  // min -x - y s.t. x + y <= 4, 0 <= x <= 3, 0 <= y <= 3
  QpProblem p = QpProblem::make(2);
  p.linear << -1.0, -1.0;
  p.ineq_A.resize(1, 2);
  p.ineq_A << -1.0, -1.0;
  p.ineq_b = VectorXd::Constant(1, -4.0);
  p.lower.setZero();
  p.upper.setConstant(3.0);
  QpResult res = solve_qp(p);
  REQUIRE(res.report.status == SolveStatus::Optimal);
  CHECK(res.report.objective == doctest::Approx(-4.0));
}

TEST_CASE("solve_nlp_local unconstrained quadratic") {
  NlpProblem p;
  p.n = 1;
  p.lower = VectorXd::Constant(1, -1e30);
  p.upper = VectorXd::Constant(1, 1e30);
  p.objective = [](const VectorXd& x, VectorXd* g) {
    if (g) {
      g->resize(1);
      (*g)(0) = 2.0 * (x(0) - 2.0);
    }
    return (x(0) - 2.0) * (x(0) - 2.0);
  };
  p.eq_count = 0;
  VectorXd x0 = VectorXd::Zero(1);
  NlpResult res = solve_nlp_local(p, x0);
  REQUIRE(res.report.status == SolveStatus::Optimal);
  CHECK(res.x(0) == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("solve_nlp_local stationary saddle of xy on the simplex") {
  NlpProblem p;
  p.n = 2;
  p.lower = VectorXd::Zero(2);
  p.upper = VectorXd::Constant(2, 1e30);
  p.objective = [](const VectorXd& x, VectorXd* g) {
    if (g) {
      g->resize(2);
      (*g)(0) = x(1);
      (*g)(1) = x(0);
    }
    return x(0) * x(1);
  };
  p.eq_count = 1;
  p.eq_values = [](const VectorXd& x) {
    VectorXd c(1);
    c(0) = x(0) + x(1) - 2.0;
    return c;
  };
  p.eq_jt_product = [](const VectorXd&, const VectorXd& v) {
    VectorXd g(2);
    g(0) = v(0);
    g(1) = v(0);
    return g;
  };
  VectorXd x0(2);
  x0 << 1.0, 1.0;
  NlpResult res = solve_nlp_local(p, x0);
  REQUIRE(res.report.status == SolveStatus::Optimal);
  CHECK(std::abs(res.x(0) + res.x(1) - 2.0) <= 1e-6);
  CHECK(res.report.kkt_residual <= 1e-6);
}

TEST_CASE("solve_nlp_local respects bounds") {
  NlpProblem p;
  p.n = 2;
  p.lower = VectorXd::Zero(2);
  p.upper = VectorXd::Constant(2, 5.0);
  p.objective = [](const VectorXd& x, VectorXd* g) {
    if (g) *g = 2.0 * (x.array() + 1.0).matrix();
    return (x.array() + 1.0).square().sum();
  };
  p.eq_count = 0;
  NlpResult res = solve_nlp_local(p, VectorXd::Constant(2, 3.0));
  REQUIRE(res.report.status == SolveStatus::Optimal);
  CHECK(res.x.minCoeff() >= -1e-9);
}

TEST_CASE("finite_diff_check on an exact quadratic") {
  auto f = [](const VectorXd& x, VectorXd* g) {
    if (g) *g = 2.0 * x;
    return x.squaredNorm();
  };
  VectorXd x(4);
  x << 0.3, -1.2, 5.0, 0.0;
  CHECK(finite_diff_check(f, x) <= 1e-6);
}

TEST_CASE("finite_diff_check flags a wrong gradient") {
  auto f = [](const VectorXd& x, VectorXd* g) {
    if (g) *g = 3.0 * x;  // deliberately wrong
    return x.squaredNorm();
  };
  VectorXd x(2);
  x << 1.0, 2.0;
  CHECK(finite_diff_check(f, x) > 1e-2);
}
