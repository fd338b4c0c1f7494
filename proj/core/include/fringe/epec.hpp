#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fringe/market_data.hpp"
#include "fringe/mpec.hpp"
#include "fringe/numerics.hpp"
#include "fringe/profile.hpp"

namespace fringe {

/// Variable layout of the aggregated stationarity system. One copy of the
/// primal market variables and slacks is shared by all leader blocks; every
/// leader carries its own multiplier copy.
struct LmIndex {
  std::vector<int> leaders;     // firm indices of the price makers
  std::vector<int> fringe;      // firm indices of the price takers
  std::vector<int> investable;  // technology indices
  int T = 0, P = 0;

  int nl() const { return static_cast<int>(leaders.size()); }
  int nf() const { return static_cast<int>(fringe.size()); }
  int nk() const { return static_cast<int>(investable.size()); }

  // Shared blocks.
  int pg0 = 0, pi0 = 0, fg0 = 0, fv0 = 0, fl0 = 0;
  int sc0 = 0, sg0 = 0, si0 = 0, sf0 = 0, lampm0 = 0;
  // Per-leader multiplier block.
  int mult0 = 0, per_leader = 0;
  int chi_g0 = 0, chi_i0 = 0, mu_clr0 = 0, a_g0 = 0, mu_g0 = 0, mu_sg0 = 0,
      w_g0 = 0, a_i0 = 0, mu_i0 = 0, mu_si0 = 0, w_i0 = 0, a_c0 = 0, mu_c0 = 0,
      mu_sf0 = 0, w_c0 = 0;
  int total = 0;

  int pg(int l, int t, int p) const { return pg0 + (l * T + t) * P + p; }
  int pi(int l, int k) const { return pi0 + l * nk() + k; }
  int fg(int f, int t, int p) const { return fg0 + (f * T + t) * P + p; }
  int fv(int f, int k) const { return fv0 + f * nk() + k; }
  int fl(int f, int t, int p) const { return fl0 + (f * T + t) * P + p; }
  int sc(int l, int t, int p) const { return sc0 + (l * T + t) * P + p; }
  int sg(int f, int t, int p) const { return sg0 + (f * T + t) * P + p; }
  int si(int f, int k) const { return si0 + f * nk() + k; }
  int sf(int f, int t, int p) const { return sf0 + (f * T + t) * P + p; }
  int lam_pm(int l, int t, int p) const { return lampm0 + (l * T + t) * P + p; }

  int mult(int l, int local) const { return mult0 + l * per_leader + local; }
  int chi_g(int l, int t, int p) const { return mult(l, chi_g0 + t * P + p); }
  int chi_i(int l, int k) const { return mult(l, chi_i0 + k); }
  int mu_clr(int l, int t, int p) const { return mult(l, mu_clr0 + t * P + p); }
  int a_g(int l, int f, int t, int p) const {
    return mult(l, a_g0 + (f * T + t) * P + p);
  }
  int mu_g(int l, int f, int t, int p) const {
    return mult(l, mu_g0 + (f * T + t) * P + p);
  }
  int mu_sg(int l, int f, int t, int p) const {
    return mult(l, mu_sg0 + (f * T + t) * P + p);
  }
  int w_g(int l, int f, int t, int p) const {
    return mult(l, w_g0 + (f * T + t) * P + p);
  }
  int a_i(int l, int f, int k) const { return mult(l, a_i0 + f * nk() + k); }
  int mu_i(int l, int f, int k) const { return mult(l, mu_i0 + f * nk() + k); }
  int mu_si(int l, int f, int k) const { return mult(l, mu_si0 + f * nk() + k); }
  int w_i(int l, int f, int k) const { return mult(l, w_i0 + f * nk() + k); }
  int a_c(int l, int f, int t, int p) const {
    return mult(l, a_c0 + (f * T + t) * P + p);
  }
  int mu_c(int l, int f, int t, int p) const {
    return mult(l, mu_c0 + (f * T + t) * P + p);
  }
  int mu_sf(int l, int f, int t, int p) const {
    return mult(l, mu_sf0 + (f * T + t) * P + p);
  }
  int w_c(int l, int f, int t, int p) const {
    return mult(l, w_c0 + (f * T + t) * P + p);
  }
};

struct LmStructure;  // internal representation (scaled rows and products)

/// The aggregated initialisation problem: minimise the sum of pairwise
/// complementarity products subject to every leader's stationarity system
/// and the shared feasibility rows. Stationarity equations are derived
/// from the Lagrangian of each leader's slack-form problem.
struct LmProblem {
  MarketData data;
  LmIndex index;
  NlpProblem nlp;  // scaled formulation handed to the local solver
  std::shared_ptr<const LmStructure> structure;

  int variable_count() const { return index.total; }
  int constraint_count() const { return nlp.eq_count; }
};

/// One point of the aggregated system, in physical units.
struct LmPoint {
  VectorXd x;
  double objective_value = 0.0;
};

LmProblem build_leyffer_munson(const MarketData& data);

/// Complementarity penalty (physical units) at a point.
double lm_objective_value(const LmProblem& p, const VectorXd& x_physical);

/// Constraint violation (scaled infinity norm) at a point; diagnostic.
double lm_feasibility(const LmProblem& p, const VectorXd& x_physical);

std::pair<LmPoint, SolveReport> solve_leyffer_munson(
    const LmProblem& p, const LmPoint& start, const NlpOptions& options = {});

/// Deterministic random start: primal quantities uniform over their
/// structural boxes, slacks set from their defining rows (clamped at zero),
/// multipliers uniform in [0, 100].
LmPoint random_start(const LmProblem& p, std::uint64_t seed);

StrategyProfile profile_from_lm(const LmProblem& p, const LmPoint& point);
/// Primal and slack blocks from a profile; multipliers zero.
LmPoint lm_point_from_profile(const LmProblem& p, const StrategyProfile& s);

// ---------------------------------------------------------------------------

struct EquilibriumRecord {
  StrategyProfile profile;
  std::vector<double> leader_profits;      // data order of the price makers
  std::vector<std::string> leader_order;   // firm ids in solve order
  std::uint64_t seed = 0;
  int attempt = 0;
  double lm_objective = 0.0;
  int gs_iterations = 0;
  double deviation_residual = 0.0;  // EUR, max profitable unilateral move
  double fringe_residual = 0.0;     // EUR, lower-level re-solve improvement
};

struct FailureHistogram {
  int lm_infeasible = 0;
  int gs_no_convergence = 0;
};

struct EquilibriumSet {
  std::vector<EquilibriumRecord> records;
  int attempts = 0;
  int successes = 0;
  FailureHistogram failure_reasons;
};

enum class OrderPolicy { L1First, L2First, SplitHalf, RoundRobin };

std::string to_string(OrderPolicy policy);
OrderPolicy order_policy_from_string(const std::string& name);

struct GsOptions {
  double tol = 1e-3;
  int max_iter = 100;
  MpecOptions mpec;
  double deviation_tol_rel = 1e-3;  // accepted relative profit improvement
};

struct GsOutcome {
  std::optional<EquilibriumRecord> record;
  std::vector<double> movement;  // per-sweep L1 leader movement
  int iterations = 0;
};

/// Cyclic best-response over the leaders, each step re-solving one MPEC with
/// rivals frozen, warm-started at the current profile. Declares convergence
/// when lead movement stays under `tol` and no leader's re-solve improves
/// its profit beyond the deviation tolerance.
GsOutcome gauss_seidel(const MarketData& data, const StrategyProfile& start,
                       const std::vector<int>& leader_order,
                       const GsOptions& options = {});

struct FindOptions {
  bool use_lm = true;  // false: hand the raw random profile to Gauss-Seidel
  GsOptions gs;
  NlpOptions lm;
  int threads = 0;  // 0: FRINGE_EPEC_THREADS or hardware concurrency
};

/// Multistart driver: random start, initialisation solve, Gauss-Seidel,
/// registry append. Deterministic in (seed, iterations, policy).
EquilibriumSet find_equilibria(const MarketData& data, int iterations,
                               std::uint64_t seed, OrderPolicy policy,
                               const FindOptions& options = {});

/// Leader permutation used for attempt i under a policy.
std::vector<int> leader_order_for_attempt(const MarketData& data,
                                          OrderPolicy policy, int attempt,
                                          int total_attempts);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t attempt);

}  // namespace fringe
