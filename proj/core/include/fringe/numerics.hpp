#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>

namespace fringe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Central tolerance record shared by every solver and echoed in reports.
struct ToleranceConfig {
  double feasibility = 1e-7;
  double stationarity = 1e-6;
  double complementarity = 1e-7;
};

enum class SolveStatus {
  Optimal,
  Infeasible,
  Unbounded,
  IterationLimit,
  NumericalFailure,
};

std::string to_string(SolveStatus status);

struct SolveReport {
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  ToleranceConfig tolerances;
  /// Set when a subproblem was certified only by a local method.
  bool local_only = false;
  /// Relative optimality gap proven by a search, when applicable.
  double gap = 0.0;
};

class SingularMatrix : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonConvexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// Throws SingularMatrix when a pivot falls below 1e-12 * ||A||_inf.
VectorXd solve_linear(const MatrixXd& A, const VectorXd& b);

/// min 1/2 x'Hx + c'x  s.t.  eq_A x = eq_b,  ineq_A x >= ineq_b,
/// lower <= x <= upper. H must be positive semidefinite on the null space of
/// the equality constraints (within a small shift); otherwise solve_qp throws
/// NonConvexError.
struct QpProblem {
  MatrixXd hessian;
  VectorXd linear;
  MatrixXd eq_A;    // may have zero rows
  VectorXd eq_b;
  MatrixXd ineq_A;  // sense >=, may have zero rows
  VectorXd ineq_b;
  VectorXd lower;   // -inf entries allowed
  VectorXd upper;   // +inf entries allowed

  int n() const { return static_cast<int>(linear.size()); }
  static QpProblem make(int n);
  /// Symmetry / dimension sanity; throws std::invalid_argument on mismatch.
  void check_shape() const;
};

struct QpResult {
  VectorXd x;
  VectorXd eq_duals;     // one per equality row (sign free)
  VectorXd ineq_duals;   // one per inequality row, >= 0 at optimum
  VectorXd lower_duals;  // >= 0
  VectorXd upper_duals;  // >= 0
  SolveReport report;
};

struct QpOptions {
  int max_iterations = 0;  // 0: pick from problem size
  bool skip_convexity_check = false;  // callers that certify H as PSD
};

QpResult solve_qp(const QpProblem& p, const QpOptions& options = {});

/// Smooth nonlinear program: min f(x) s.t. c(x) = 0, lower <= x <= upper.
/// Jacobian access is via transpose-products only, which keeps large sparse
/// systems cheap without committing to a sparse matrix type.
struct NlpProblem {
  int n = 0;
  std::function<double(const VectorXd& x, VectorXd* grad)> objective;
  int eq_count = 0;
  std::function<VectorXd(const VectorXd& x)> eq_values;  // size eq_count
  /// Returns J(x)^T v for v in R^{eq_count}.
  std::function<VectorXd(const VectorXd& x, const VectorXd& v)> eq_jt_product;
  VectorXd lower;
  VectorXd upper;
};

struct NlpOptions {
  int max_outer = 200;
  int max_inner = 5000;
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
  double max_penalty = 1e10;
  double stationarity_tol = 1e-6;
  double feasibility_tol = 1e-7;
};

struct NlpResult {
  VectorXd x;
  VectorXd multipliers;  // equality multiplier estimates
  SolveReport report;
};

/// Augmented-Lagrangian outer loop with spectral projected-gradient inner
/// iterations. IterationLimit / NumericalFailure mark the start as
/// unsuccessful; the best point found so far is still returned.
NlpResult solve_nlp_local(const NlpProblem& p, const VectorXd& start,
                          const NlpOptions& options = {});

/// Max over coordinates of the relative disagreement between the analytic
/// gradient and a central difference with h = 1e-6 * (1 + |x_i|).
double finite_diff_check(
    const std::function<double(const VectorXd&, VectorXd*)>& f,
    const VectorXd& x);

}  // namespace fringe
