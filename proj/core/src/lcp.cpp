#include "fringe/lcp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "fringe/numerics.hpp"

namespace fringe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Complementary pivoting on the standard tableau
//   [ I  -M  -1  q ],
// basis initially {w_0..w_{n-1}}. Ratio ties are broken lexicographically
// using the rows of the (implicit) basis inverse, i.e. the w-columns.
struct LemkeTableau {
  int n;
  MatrixXd T;               // n x (2n + 2)
  std::vector<int> basis;   // length n; w_i = i, z_i = n + i, z0 = 2n
  int pivots = 0;

  explicit LemkeTableau(const MatrixXd& M, const VectorXd& q)
      : n(static_cast<int>(q.size())) {
    T.resize(n, 2 * n + 2);
    T.leftCols(n) = MatrixXd::Identity(n, n);
    T.middleCols(n, n) = -M;
    T.col(2 * n) = -VectorXd::Ones(n);
    T.col(2 * n + 1) = q;
    basis.resize(n);
    for (int i = 0; i < n; ++i) basis[i] = i;
  }

  int q_col() const { return 2 * n + 1; }

  void pivot(int row, int col) {
    T.row(row) /= T(row, col);
    for (int i = 0; i < n; ++i) {
      if (i == row) continue;
      const double factor = T(i, col);
      if (factor != 0.0) T.row(i) -= factor * T.row(row);
    }
    ++pivots;
  }

  // Lexicographic comparison of rows r1, r2 for the ratio test on `col`:
  // returns the row whose (q, basis-inverse) row divided by the pivot column
  // entry is lexicographically smaller.
  int lex_min_row(int r1, int r2, int col) const {
    const double p1 = T(r1, col);
    const double p2 = T(r2, col);
    // Compare q first, then the w-columns (the running basis inverse).
    {
      const double diff = T(r1, q_col()) * p2 - T(r2, q_col()) * p1;
      if (diff < 0.0) return r1;
      if (diff > 0.0) return r2;
    }
    for (int j = 0; j < n; ++j) {
      const double diff = T(r1, j) * p2 - T(r2, j) * p1;
      if (diff < 0.0) return r1;
      if (diff > 0.0) return r2;
    }
    return r1;  // identical rows cannot occur with an invertible basis
  }

  // Row leaving the basis when `col` enters; -1 signals a secondary ray.
  int ratio_test(int col) const {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (T(i, col) > 1e-12) {
        if (best < 0) {
          best = i;
          continue;
        }
        const double ratio_best = T(best, q_col()) / T(best, col);
        const double ratio_i = T(i, q_col()) / T(i, col);
        const double scale = 1.0 + std::abs(ratio_best) + std::abs(ratio_i);
        if (ratio_i < ratio_best - 1e-12 * scale) {
          best = i;
        } else if (ratio_i <= ratio_best + 1e-12 * scale) {
          best = lex_min_row(best, i, col);
        }
      }
    }
    return best;
  }

  VectorXd extract_z() const {
    VectorXd z = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
      if (basis[i] >= n && basis[i] < 2 * n) {
        z(basis[i] - n) = std::max(0.0, T(i, q_col()));
      }
    }
    return z;
  }
};

VectorXd lemke_core(const MatrixXd& M, const VectorXd& q,
                    const LemkeOptions& options, int* pivot_count) {
  const int n = static_cast<int>(q.size());
  if (q.minCoeff() >= 0.0) {
    if (pivot_count) *pivot_count = 0;
    return VectorXd::Zero(n);
  }

  LemkeTableau tab(M, q);
  const int max_pivots =
      options.max_pivots > 0 ? options.max_pivots : 50 * n + 1000;

  std::set<std::vector<int>> seen;
  auto note_basis = [&](const std::vector<int>& b) {
    if (!options.paranoid_basis_check) return;
    std::vector<int> key = b;
    std::sort(key.begin(), key.end());
    if (!seen.insert(key).second) {
      throw SingularBasis("lemke_solve: basis revisited despite lexicographic "
                          "ordering");
    }
  };
  note_basis(tab.basis);

  // Drive z0 in; the most negative q row leaves.
  int leaving_row = 0;
  double most_negative = tab.T(0, tab.q_col());
  for (int i = 1; i < n; ++i) {
    if (tab.T(i, tab.q_col()) < most_negative) {
      most_negative = tab.T(i, tab.q_col());
      leaving_row = i;
    }
  }
  int entering = 2 * n;  // z0
  tab.pivot(leaving_row, entering);
  int left_var = tab.basis[leaving_row];
  tab.basis[leaving_row] = entering;
  note_basis(tab.basis);
  entering = left_var < n ? left_var + n : left_var - n;

  while (tab.pivots < max_pivots) {
    const int row = tab.ratio_test(entering);
    if (row < 0) {
      throw RayTermination("lemke_solve: secondary ray encountered");
    }
    tab.pivot(row, entering);
    left_var = tab.basis[row];
    tab.basis[row] = entering;
    note_basis(tab.basis);
    if (left_var == 2 * n) {
      if (pivot_count) *pivot_count = tab.pivots;
      return tab.extract_z();
    }
    entering = left_var < n ? left_var + n : left_var - n;
  }
  throw RayTermination("lemke_solve: pivot limit exceeded");
}

// Worst residual of a candidate, with each row judged on its own scale.
double candidate_badness(const MatrixXd& M, const VectorXd& q,
                         const VectorXd& z) {
  const int n = static_cast<int>(q.size());
  VectorXd w = q + M * z;
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const double row_scale =
        1.0 + std::abs(q(i)) + M.row(i).cwiseAbs().maxCoeff() *
                                   z.cwiseAbs().maxCoeff();
    const double neg = std::max(0.0, -std::min(z(i), w(i)));
    const double comp = std::max(0.0, std::min(z(i), w(i)));
    worst = std::max(worst, (10.0 * neg + comp) / row_scale);
  }
  return worst;
}

// Refines the raw pivoting solution: re-solve the support system with the
// original data, then repair remaining sign violations by swapping the worst
// offender in or out of the support. The tableau accumulates roundoff over
// hundreds of pivots and degenerate supports can come out slightly wrong;
// a few principal-pivot repairs land on the exact complementary point.
VectorXd polish(const MatrixXd& M, const VectorXd& q, const VectorXd& z_raw) {
  const int n = static_cast<int>(q.size());
  std::vector<char> in_support(n, 0);
  const double zmax = z_raw.cwiseAbs().maxCoeff();
  for (int i = 0; i < n; ++i) {
    if (z_raw(i) > 1e-11 * (1.0 + zmax)) in_support[i] = 1;
  }

  VectorXd best = z_raw;
  double best_badness = candidate_badness(M, q, z_raw);

  for (int round = 0; round < 40; ++round) {
    std::vector<int> support;
    for (int i = 0; i < n; ++i) {
      if (in_support[i]) support.push_back(i);
    }
    VectorXd z = VectorXd::Zero(n);
    const int k = static_cast<int>(support.size());
    if (k > 0) {
      MatrixXd Ms(k, k);
      VectorXd qs(k);
      for (int a = 0; a < k; ++a) {
        qs(a) = q(support[a]);
        for (int b = 0; b < k; ++b) Ms(a, b) = M(support[a], support[b]);
      }
      try {
        VectorXd zs = solve_linear(Ms, -qs);
        for (int a = 0; a < k; ++a) z(support[a]) = zs(a);
      } catch (const SingularMatrix&) {
        break;
      }
    }
    VectorXd w = q + M * z;
    // Worst signed violation, judged per row scale.
    int worst_index = -1;
    bool worst_is_z = false;
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      const double row_scale = 1.0 + std::abs(q(i));
      if (in_support[i] && -z(i) / row_scale > worst) {
        worst = -z(i) / row_scale;
        worst_index = i;
        worst_is_z = true;
      }
      if (!in_support[i] && -w(i) / row_scale > worst) {
        worst = -w(i) / row_scale;
        worst_index = i;
        worst_is_z = false;
      }
    }
    const double badness =
        candidate_badness(M, q, z.cwiseMax(0.0));
    if (badness < best_badness) {
      best = z.cwiseMax(0.0);
      best_badness = badness;
    }
    if (worst_index < 0 || worst <= 1e-12) break;
    in_support[worst_index] = worst_is_z ? 0 : 1;
  }
  return best;
}

// Two-sided Ruiz equilibration; badly mixed scales wreck the pivot and
// ratio-test tolerances otherwise.
void equilibrate(const MatrixXd& M, VectorXd& row_scale, VectorXd& col_scale) {
  const int n = static_cast<int>(M.rows());
  row_scale = VectorXd::Ones(n);
  col_scale = VectorXd::Ones(n);
  for (int pass = 0; pass < 3; ++pass) {
    for (int i = 0; i < n; ++i) {
      double m = 0.0;
      for (int j = 0; j < n; ++j) {
        m = std::max(m, std::abs(row_scale(i) * M(i, j) * col_scale(j)));
      }
      if (m > 0.0) row_scale(i) /= std::sqrt(m);
    }
    for (int j = 0; j < n; ++j) {
      double m = 0.0;
      for (int i = 0; i < n; ++i) {
        m = std::max(m, std::abs(row_scale(i) * M(i, j) * col_scale(j)));
      }
      if (m > 0.0) col_scale(j) /= std::sqrt(m);
    }
  }
}

}  // namespace

LcpSolution lemke_solve(const LcpProblem& p, const LemkeOptions& options) {
  const int n = p.n();
  if (p.M.rows() != n || p.M.cols() != n) {
    throw std::invalid_argument("lemke_solve: M/q dimension mismatch");
  }
  for (int idx : p.free_set) {
    if (idx < 0 || idx >= n) {
      throw std::invalid_argument("lemke_solve: free_set index out of range");
    }
  }

  // Partition into free (F) and complementarity (C) indices.
  std::vector<char> is_free(n, 0);
  for (int idx : p.free_set) is_free[idx] = 1;
  std::vector<int> F, C;
  for (int i = 0; i < n; ++i) (is_free[i] ? F : C).push_back(i);

  const int nf = static_cast<int>(F.size());
  const int nc = static_cast<int>(C.size());

  MatrixXd Mcc(nc, nc);
  VectorXd qc(nc);
  MatrixXd Mff, Mfc, Mcf;
  VectorXd qf;

  if (nf > 0) {
    Mff.resize(nf, nf);
    Mfc.resize(nf, nc);
    Mcf.resize(nc, nf);
    qf.resize(nf);
    for (int a = 0; a < nf; ++a) {
      qf(a) = p.q(F[a]);
      for (int b = 0; b < nf; ++b) Mff(a, b) = p.M(F[a], F[b]);
      for (int b = 0; b < nc; ++b) Mfc(a, b) = p.M(F[a], C[b]);
    }
    for (int a = 0; a < nc; ++a) {
      for (int b = 0; b < nf; ++b) Mcf(a, b) = p.M(C[a], F[b]);
    }
    // Schur complement: z_F = -Mff^{-1} (q_F + Mfc z_C).
    MatrixXd MffInv;
    try {
      MffInv = Mff.partialPivLu().solve(MatrixXd::Identity(nf, nf));
      if (!MffInv.allFinite() ||
          (Mff * MffInv - MatrixXd::Identity(nf, nf)).cwiseAbs().maxCoeff() >
              1e-6) {
        throw SingularBasis(
            "lemke_solve: free-variable block is singular; cannot eliminate");
      }
    } catch (const std::exception&) {
      throw SingularBasis(
          "lemke_solve: free-variable block is singular; cannot eliminate");
    }
    for (int a = 0; a < nc; ++a) {
      qc(a) = p.q(C[a]);
      for (int b = 0; b < nc; ++b) Mcc(a, b) = p.M(C[a], C[b]);
    }
    Mcc -= Mcf * MffInv * Mfc;
    qc -= Mcf * MffInv * qf;
  } else {
    Mcc = p.M;
    qc = p.q;
  }

  VectorXd row_scale, col_scale;
  equilibrate(Mcc, row_scale, col_scale);
  MatrixXd Ms = row_scale.asDiagonal() * Mcc * col_scale.asDiagonal();
  VectorXd qs = row_scale.asDiagonal() * qc;

  int pivots = 0;
  VectorXd zc;
  try {
    zc = lemke_core(Ms, qs, options, &pivots);
  } catch (const RayTermination&) {
    if (!options.retry_on_ray) throw;
    const double eps = 1e-7 * (1.0 + qs.cwiseAbs().maxCoeff());
    VectorXd q_retry = qs.array() + eps;
    zc = lemke_core(Ms, q_retry, options, &pivots);
  }
  zc = col_scale.asDiagonal() * zc;
  zc = polish(Mcc, qc, zc);

  VectorXd z = VectorXd::Zero(n);
  for (int a = 0; a < nc; ++a) z(C[a]) = zc(a);
  if (nf > 0) {
    VectorXd zf = Mff.partialPivLu().solve(-(qf + Mfc * zc));
    for (int a = 0; a < nf; ++a) z(F[a]) = zf(a);
  }

  LcpSolution sol;
  sol.z = z;
  sol.w = p.q + p.M * z;
  sol.pivots = pivots;
  LcpResiduals r = residuals(p, z);
  sol.comp_residual = r.comp_residual;
  sol.eq_residual = r.eq_residual;
  return sol;
}

LcpResiduals residuals(const LcpProblem& p, const VectorXd& z) {
  if (z.size() != p.n()) {
    throw std::invalid_argument("residuals: dimension mismatch");
  }
  std::vector<char> is_free(p.n(), 0);
  for (int idx : p.free_set) is_free[idx] = 1;

  VectorXd w = p.q + p.M * z;
  LcpResiduals out;
  for (int i = 0; i < p.n(); ++i) {
    if (is_free[i]) {
      out.eq_residual = std::max(out.eq_residual, std::abs(w(i)));
    } else {
      out.comp_residual =
          std::max(out.comp_residual, std::max(0.0, std::min(z(i), w(i))));
      out.bound_violation =
          std::max(out.bound_violation, std::max(0.0, -std::min(z(i), w(i))));
    }
  }
  return out;
}

}  // namespace fringe
