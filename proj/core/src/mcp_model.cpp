#include "fringe/mcp_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

namespace fringe {

double CvConfig::value_for(const Firm& firm) const {
  if (firm.kind == FirmKind::PriceTaking) return 0.0;
  auto it = per_firm.find(firm.id);
  if (it != per_firm.end()) return it->second;
  if (uniform) return *uniform;
  return firm.cv;
}

double MarketOutcome::total_generation(const MarketData& data,
                                       int period) const {
  double total = 0.0;
  for (int f = 0; f < data.firm_count(); ++f) {
    for (int t = 0; t < data.tech_count(); ++t) {
      total += gen.at(f, t, period);
    }
  }
  return total;
}

MarketLcpIndex make_market_index(const MarketData& data) {
  MarketLcpIndex idx;
  idx.firms = data.firm_count();
  idx.techs = data.tech_count();
  idx.periods = data.periods();
  idx.investable = data.investable_tech_indices();
  const int gen_count = idx.firms * idx.techs * idx.periods;
  const int inv_count = idx.firms * static_cast<int>(idx.investable.size());
  idx.gen0 = 0;
  idx.inv0 = gen_count;
  idx.lam0 = gen_count + inv_count;
  idx.total = gen_count + inv_count + idx.firms * idx.techs * idx.periods;
  return idx;
}

LcpProblem build_market_lcp(const MarketData& data, const CvConfig& cv,
                            const MarketLcpOptions& options) {
  validate_or_throw(data, /*require_firm_mix=*/false);
  const MarketLcpIndex idx = make_market_index(data);
  const int P = idx.periods;
  const int T = idx.techs;
  const int F = idx.firms;
  const double B = data.demand.slope;

  std::vector<double> intercept(P);
  for (int p = 0; p < P; ++p) {
    double exo = p < static_cast<int>(options.exogenous_supply.size())
                     ? options.exogenous_supply[p]
                     : 0.0;
    intercept[p] = data.demand.intercepts[p] - B * exo;
  }

  LcpProblem lcp;
  lcp.M = MatrixXd::Zero(idx.total, idx.total);
  lcp.q = VectorXd::Zero(idx.total);

  for (int f = 0; f < F; ++f) {
    const Firm& firm = data.firms[f];
    const double cv_f = cv.value_for(firm);
    for (int t = 0; t < T; ++t) {
      const Technology& tech = data.technologies[t];
      for (int p = 0; p < P; ++p) {
        const double W = data.demand.weights[p];
        const int row = idx.gen(f, t, p);
        // Stationarity of generation with the clearing condition substituted:
        // w = W (C_t - A_p) + W B sum_gen(p) + W cv B gen_own + lambda.
        lcp.q(row) = W * (tech.marginal_cost - intercept[p]);
        for (int f2 = 0; f2 < F; ++f2) {
          for (int t2 = 0; t2 < T; ++t2) {
            lcp.M(row, idx.gen(f2, t2, p)) += W * B;
          }
        }
        lcp.M(row, row) += W * cv_f * B + options.quad_reg;
        lcp.M(row, idx.lam(f, t, p)) += 1.0;

        // Capacity row: w = CAP + inv - gen.
        const int lrow = idx.lam(f, t, p);
        lcp.q(lrow) = firm.capacity(tech.id);
        lcp.M(lrow, idx.gen(f, t, p)) -= 1.0;
      }
    }
    for (int k = 0; k < static_cast<int>(idx.investable.size()); ++k) {
      const int t = idx.investable[k];
      const Technology& tech = data.technologies[t];
      const int row = idx.inv(f, k);
      // Investment stationarity: w = IC - sum_p lambda.
      lcp.q(row) = *tech.invest_cost;
      for (int p = 0; p < P; ++p) {
        lcp.M(row, idx.lam(f, t, p)) -= 1.0;
        lcp.M(idx.lam(f, t, p), row) += 1.0;
      }
      lcp.M(row, row) += options.quad_reg;
    }
  }
  return lcp;
}

MarketOutcome outcome_from_lcp(const MarketData& data,
                               const MarketLcpIndex& idx, const VectorXd& z,
                               const std::vector<double>& exogenous_supply) {
  const int F = idx.firms, T = idx.techs, P = idx.periods;
  MarketOutcome out;
  out.gen = Grid3(F, T, P);
  out.inv = Grid2(F, T);
  out.capacity_duals = Grid3(F, T, P);
  out.prices.assign(P, 0.0);
  out.profits.assign(F, 0.0);

  for (int f = 0; f < F; ++f) {
    for (int t = 0; t < T; ++t) {
      for (int p = 0; p < P; ++p) {
        out.gen.at(f, t, p) = z(idx.gen(f, t, p));
        out.capacity_duals.at(f, t, p) = z(idx.lam(f, t, p));
      }
    }
    for (int k = 0; k < static_cast<int>(idx.investable.size()); ++k) {
      out.inv.at(f, idx.investable[k]) = z(idx.inv(f, k));
    }
  }

  const double B = data.demand.slope;
  for (int p = 0; p < P; ++p) {
    double total = p < static_cast<int>(exogenous_supply.size())
                       ? exogenous_supply[p]
                       : 0.0;
    for (int f = 0; f < F; ++f) {
      for (int t = 0; t < T; ++t) total += out.gen.at(f, t, p);
    }
    out.prices[p] = data.demand.intercepts[p] - B * total;
  }

  for (int f = 0; f < F; ++f) {
    double profit = 0.0;
    for (int t = 0; t < T; ++t) {
      const Technology& tech = data.technologies[t];
      for (int p = 0; p < P; ++p) {
        profit += data.demand.weights[p] * out.gen.at(f, t, p) *
                  (out.prices[p] - tech.marginal_cost);
      }
      if (tech.investable) {
        profit -= *tech.invest_cost * out.inv.at(f, t);
      }
    }
    out.profits[f] = profit;
  }
  return out;
}

namespace {

// Pivoting lands on an arbitrary vertex of the solution face when identical
// units are interchangeable. For investable technologies every firm starts
// from zero capacity, so firms with the same conjectural level can swap
// their (gen, inv, dual) blocks without changing the system; the face is
// convex, which makes the class average another exact solution. Firms with
// a positive conjectural level carry their own strictly convex term and are
// never degenerate, so only the zero-cv class is averaged. Capacity rents
// on investable units are reset to their canonical value.
VectorXd select_symmetric_solution(const MarketData& data, const CvConfig& cv,
                                   const LcpProblem& lcp,
                                   const MarketLcpIndex& idx,
                                   const VectorXd& z_vertex,
                                   const std::vector<double>& exogenous) {
  VectorXd z = z_vertex;
  const double B = data.demand.slope;
  std::vector<double> price(idx.periods);
  for (int p = 0; p < idx.periods; ++p) {
    double total = p < static_cast<int>(exogenous.size()) ? exogenous[p] : 0.0;
    for (int f = 0; f < idx.firms; ++f) {
      for (int t = 0; t < idx.techs; ++t) total += z(idx.gen(f, t, p));
    }
    price[p] = data.demand.intercepts[p] - B * total;
  }

  std::vector<int> zero_cv_firms;
  for (int f = 0; f < idx.firms; ++f) {
    if (cv.value_for(data.firms[f]) == 0.0) zero_cv_firms.push_back(f);
  }

  for (int k = 0; k < static_cast<int>(idx.investable.size()); ++k) {
    const int t = idx.investable[k];
    const double C = data.technologies[t].marginal_cost;
    if (zero_cv_firms.size() > 1) {
      const double count = static_cast<double>(zero_cv_firms.size());
      double inv_mean = 0.0;
      for (int f : zero_cv_firms) inv_mean += z(idx.inv(f, k));
      inv_mean /= count;
      for (int f : zero_cv_firms) z(idx.inv(f, k)) = inv_mean;
      for (int p = 0; p < idx.periods; ++p) {
        double gen_mean = 0.0;
        for (int f : zero_cv_firms) gen_mean += z(idx.gen(f, t, p));
        gen_mean /= count;
        for (int f : zero_cv_firms) z(idx.gen(f, t, p)) = gen_mean;
      }
    }
    for (int f = 0; f < idx.firms; ++f) {
      const double cv_f = cv.value_for(data.firms[f]);
      for (int p = 0; p < idx.periods; ++p) {
        const double W = data.demand.weights[p];
        z(idx.lam(f, t, p)) = std::max(
            0.0, W * (price[p] - C) - W * cv_f * B * z(idx.gen(f, t, p)));
      }
    }
  }

  LcpResiduals before = residuals(lcp, z_vertex);
  LcpResiduals after = residuals(lcp, z);
  const double eps = 1e-10 * (1.0 + lcp.q.cwiseAbs().maxCoeff());
  if (after.bound_violation <= before.bound_violation + eps &&
      after.comp_residual <= before.comp_residual + eps) {
    return z;
  }
  return z_vertex;
}

// Re-solves the support system of the symmetrised point against the
// unregularised data, restricted to the symmetric subspace (interchangeable
// coordinates share one unknown, which removes the rank deficiency). The
// regularised solve is only epsilon-accurate for the true system; this step
// removes that bias at machine precision.
VectorXd exact_symmetric_polish(const MarketData& data, const CvConfig& cv,
                                const LcpProblem& raw,
                                const MarketLcpIndex& idx, const VectorXd& z_sym) {
  const int n = raw.n();
  const double z_scale = 1.0 + z_sym.cwiseAbs().maxCoeff();
  std::vector<int> support;
  for (int i = 0; i < n; ++i) {
    if (z_sym(i) > 1e-7 * z_scale) support.push_back(i);
  }
  if (support.empty()) return z_sym;

  // Map each supported coordinate to a shared column when it belongs to an
  // investable technology of a zero-cv firm.
  std::vector<int> zero_cv(idx.firms, 0);
  for (int f = 0; f < idx.firms; ++f) {
    zero_cv[f] = cv.value_for(data.firms[f]) == 0.0 ? 1 : 0;
  }
  std::map<std::tuple<int, int, int>, int> shared;  // (kind, t, p) -> column
  std::vector<int> column_of(support.size(), -1);
  int n_cols = 0;
  for (size_t s = 0; s < support.size(); ++s) {
    const int i = support[s];
    std::tuple<int, int, int> key(-1, 0, 0);
    bool is_shared = false;
    for (int f = 0; f < idx.firms && !is_shared; ++f) {
      if (!zero_cv[f]) continue;
      for (int k = 0; k < static_cast<int>(idx.investable.size()); ++k) {
        const int t = idx.investable[k];
        if (i == idx.inv(f, k)) {
          key = {0, k, 0};
          is_shared = true;
          break;
        }
        for (int p = 0; p < idx.periods; ++p) {
          if (i == idx.gen(f, t, p)) {
            key = {1, t, p};
            is_shared = true;
            break;
          }
          if (i == idx.lam(f, t, p)) {
            key = {2, t, p};
            is_shared = true;
            break;
          }
        }
        if (is_shared) break;
      }
    }
    if (is_shared) {
      auto it = shared.find(key);
      if (it == shared.end()) {
        shared.emplace(key, n_cols);
        column_of[s] = n_cols++;
      } else {
        column_of[s] = it->second;
      }
    } else {
      column_of[s] = n_cols++;
    }
  }

  const int m = static_cast<int>(support.size());
  MatrixXd A(m, n_cols);
  A.setZero();
  VectorXd b(m);
  for (int r = 0; r < m; ++r) {
    b(r) = -raw.q(support[r]);
    for (int s = 0; s < m; ++s) {
      A(r, column_of[s]) += raw.M(support[r], support[s]);
    }
  }
  for (int r = 0; r < m; ++r) {
    const double s = std::max(1.0, A.row(r).cwiseAbs().maxCoeff());
    A.row(r) /= s;
    b(r) /= s;
  }
  // Least-change correction of the symmetrised point: project it onto the
  // affine solution set of the support system. Solving from scratch would
  // pick the minimum-norm point, which wrecks the dual block.
  VectorXd y = VectorXd::Zero(n_cols);
  for (int s = 0; s < m; ++s) y(column_of[s]) = z_sym(support[s]);
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(A);
  for (int pass = 0; pass < 4; ++pass) y += cod.solve(b - A * y);
  if (!y.allFinite()) return z_sym;

  VectorXd z = VectorXd::Zero(n);
  for (int s = 0; s < m; ++s) z(support[s]) = std::max(0.0, y(column_of[s]));

  LcpResiduals before = residuals(raw, z_sym);
  LcpResiduals after = residuals(raw, z);
  const double eps = 1e-10 * (1.0 + raw.q.cwiseAbs().maxCoeff());
  if (after.bound_violation <= before.bound_violation + eps &&
      after.comp_residual <= before.comp_residual + eps) {
    return z;
  }
  return z_sym;
}

}  // namespace

MarketOutcome solve_market_mcp(const MarketData& data, const CvConfig& cv,
                               const McpSolveOptions& options) {
  LcpProblem lcp = build_market_lcp(data, cv, options.lcp);
  LcpSolution sol = lemke_solve(lcp, options.lemke);
  const MarketLcpIndex idx = make_market_index(data);
  VectorXd z = select_symmetric_solution(data, cv, lcp, idx, sol.z,
                                         options.lcp.exogenous_supply);
  if (options.lcp.quad_reg != 0.0) {
    MarketLcpOptions raw_opts = options.lcp;
    raw_opts.quad_reg = 0.0;
    LcpProblem raw = build_market_lcp(data, cv, raw_opts);
    z = exact_symmetric_polish(data, cv, raw, idx, z);
  }
  return outcome_from_lcp(data, idx, z, options.lcp.exogenous_supply);
}

MarketOutcome welfare_lp_oracle(const MarketData& data) {
  validate_or_throw(data, /*require_firm_mix=*/false);
  const MarketLcpIndex idx = make_market_index(data);
  const int F = idx.firms, T = idx.techs, P = idx.periods;
  const int K = static_cast<int>(idx.investable.size());
  const int n_gen = F * T * P;
  const int n = n_gen + F * K;
  const double B = data.demand.slope;

  auto gen_var = [&](int f, int t, int p) { return (f * T + t) * P + p; };
  auto inv_var = [&](int f, int k) { return n_gen + f * K + k; };

  QpProblem qp = QpProblem::make(n);
  // Surplus maximisation as a minimisation: the quadratic part couples all
  // generation within a period through the demand curve.
  for (int p = 0; p < P; ++p) {
    const double W = data.demand.weights[p];
    for (int f1 = 0; f1 < F; ++f1) {
      for (int t1 = 0; t1 < T; ++t1) {
        const int i = gen_var(f1, t1, p);
        qp.linear(i) = W * (data.technologies[t1].marginal_cost -
                            data.demand.intercepts[p]);
        for (int f2 = 0; f2 < F; ++f2) {
          for (int t2 = 0; t2 < T; ++t2) {
            qp.hessian(i, gen_var(f2, t2, p)) += W * B;
          }
        }
      }
    }
  }
  for (int f = 0; f < F; ++f) {
    for (int k = 0; k < K; ++k) {
      qp.linear(inv_var(f, k)) = *data.technologies[idx.investable[k]].invest_cost;
    }
  }

  // Capacity: -gen + inv >= -CAP for every (firm, tech, period).
  qp.ineq_A = MatrixXd::Zero(n_gen, n);
  qp.ineq_b = VectorXd::Zero(n_gen);
  int row = 0;
  for (int f = 0; f < F; ++f) {
    for (int t = 0; t < T; ++t) {
      int k = -1;
      for (int kk = 0; kk < K; ++kk) {
        if (idx.investable[kk] == t) k = kk;
      }
      for (int p = 0; p < P; ++p, ++row) {
        qp.ineq_A(row, gen_var(f, t, p)) = -1.0;
        if (k >= 0) qp.ineq_A(row, inv_var(f, k)) = 1.0;
        qp.ineq_b(row) = -data.firms[f].capacity(data.technologies[t].id);
      }
    }
  }
  qp.lower.setZero();

  QpOptions qpo;
  qpo.skip_convexity_check = true;  // H is a sum of PSD rank-one blocks
  QpResult res = solve_qp(qp, qpo);
  if (res.report.status != SolveStatus::Optimal) {
    throw std::runtime_error("welfare_lp_oracle: QP solve failed with status " +
                             to_string(res.report.status));
  }

  MarketOutcome out;
  out.gen = Grid3(F, T, P);
  out.inv = Grid2(F, T);
  out.capacity_duals = Grid3(F, T, P);
  out.prices.assign(P, 0.0);
  out.profits.assign(F, 0.0);
  row = 0;
  for (int f = 0; f < F; ++f) {
    for (int t = 0; t < T; ++t) {
      for (int p = 0; p < P; ++p, ++row) {
        out.gen.at(f, t, p) = std::max(0.0, res.x(gen_var(f, t, p)));
        out.capacity_duals.at(f, t, p) = res.ineq_duals(row);
      }
    }
    for (int k = 0; k < K; ++k) {
      out.inv.at(f, idx.investable[k]) = std::max(0.0, res.x(inv_var(f, k)));
    }
  }
  for (int p = 0; p < P; ++p) {
    double total = 0.0;
    for (int f = 0; f < F; ++f) {
      for (int t = 0; t < T; ++t) total += out.gen.at(f, t, p);
    }
    out.prices[p] = data.demand.intercepts[p] - B * total;
  }
  for (int f = 0; f < F; ++f) {
    double profit = 0.0;
    for (int t = 0; t < T; ++t) {
      const Technology& tech = data.technologies[t];
      for (int p = 0; p < P; ++p) {
        profit += data.demand.weights[p] * out.gen.at(f, t, p) *
                  (out.prices[p] - tech.marginal_cost);
      }
      if (tech.investable) profit -= *tech.invest_cost * out.inv.at(f, t);
    }
    out.profits[f] = profit;
  }
  return out;
}

std::vector<CvSweepEntry> cv_sweep(const MarketData& data,
                                   const std::vector<double>& levels,
                                   const McpSolveOptions& options) {
  std::vector<CvSweepEntry> out(levels.size());
  for (size_t i = 0; i < levels.size(); ++i) {
    out[i].cv = levels[i];
    try {
      out[i].outcome =
          solve_market_mcp(data, CvConfig::all(levels[i]), options);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

std::vector<double> default_cv_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(0.1 * i);
  return grid;
}

}  // namespace fringe
