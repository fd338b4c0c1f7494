#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace fringe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Mixed linear complementarity problem: find z with
///   w = q + M z,   0 <= z_i  \perp  w_i >= 0   for i outside free_set,
///   w_i = 0, z_i sign-free                      for i in free_set.
/// Free variables are eliminated by substitution through their equality rows
/// before pivoting, which requires the free-free block of M to be invertible.
struct LcpProblem {
  MatrixXd M;
  VectorXd q;
  std::vector<int> free_set;

  int n() const { return static_cast<int>(q.size()); }
};

struct LcpSolution {
  VectorXd z;
  VectorXd w;  // q + M z
  double comp_residual = 0.0;  // max_i max(0, min(z_i, w_i)) over comp indices
  double eq_residual = 0.0;    // max_i |w_i| over the free set
  int pivots = 0;
};

struct LcpResiduals {
  double comp_residual = 0.0;
  double eq_residual = 0.0;
  double bound_violation = 0.0;  // size of the worst negative z or w entry
};

class RayTermination : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularBasis : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LemkeOptions {
  int max_pivots = 0;        // 0: 50 * n + 1000
  bool retry_on_ray = true;  // one automatic q perturbation on a secondary ray
  /// Track visited bases and fail loudly if one repeats. Lexicographic
  /// tie-breaking should make this impossible; the check is for tests.
  bool paranoid_basis_check = false;
};

LcpSolution lemke_solve(const LcpProblem& p, const LemkeOptions& options = {});

/// Residuals of an arbitrary candidate z against the problem, computed
/// without modifying z.
LcpResiduals residuals(const LcpProblem& p, const VectorXd& z);

}  // namespace fringe
