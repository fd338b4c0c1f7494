#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fringe/market_data.hpp"
#include "fringe/mcp_model.hpp"
#include "fringe/numerics.hpp"
#include "fringe/profile.hpp"

namespace fringe {

class UnknownLeader : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structural bounds standing in for the disjunctive big-M constants.
/// Generation and investment are capped by the zero-price demand quantity;
/// duals and slack expressions by their worst-case magnitudes. `scale`
/// multiplies every cap (the x10 re-solve check exercises it).
struct BigMPolicy {
  double gen_cap = 1e6;
  double inv_cap = 1e6;
  std::vector<double> lambda_cap;      // per period
  std::vector<double> stat_slack_cap;  // per period
  double inv_slack_scale = 1.0;        // cap on IC - sum(lambda) is IC * this
  double scale = 1.0;

  static BigMPolicy from_data(const MarketData& data);
  double gen_bound() const { return gen_cap * scale; }
  double inv_bound() const { return inv_cap * scale; }
  double lambda_bound(int p) const { return lambda_cap[p] * scale; }
  double stat_slack_bound(int p) const { return stat_slack_cap[p] * scale; }
  double inv_slack_bound(double ic) const { return ic * inv_slack_scale * scale; }
};

/// Index layout of the fringe complementarity pairs of one leader problem.
struct MpecIndex {
  std::vector<int> fringe_firms;  // indices into data.firms
  std::vector<int> investable;    // indices into data.technologies
  int techs = 0;
  int periods = 0;

  int nf() const { return static_cast<int>(fringe_firms.size()); }
  int nk() const { return static_cast<int>(investable.size()); }
  int r1_count() const { return nf() * techs * periods; }
  int r2_count() const { return nf() * nk(); }
  int r3_count() const { return nf() * techs * periods; }
  int r1(int fi, int t, int p) const { return (fi * techs + t) * periods + p; }
  int r2(int fi, int k) const { return fi * nk() + k; }
  int r3(int fi, int t, int p) const { return (fi * techs + t) * periods + p; }
};

/// Which side of each fringe complementarity pair holds with equality.
/// r1: generation stationarity, r2: investment stationarity, r3: capacity.
struct ComplementarityPattern {
  std::vector<std::int8_t> r1, r2, r3;  // entries in {0, 1}

  bool operator==(const ComplementarityPattern&) const = default;
  /// Lexicographic key over (r1, r2, r3) used for deterministic tie-breaks.
  bool lex_less(const ComplementarityPattern& other) const;
};

/// One price-making firm's problem with all other price makers frozen.
struct MpecProblem {
  MarketData data;
  int leader = -1;  // index into data.firms
  Grid3 rival_gen;  // full firm-dim grids; only other price-maker rows used
  Grid2 rival_inv;
  BigMPolicy big_m;
  MpecIndex index;

  std::vector<double> rival_supply() const;  // per-period rival PM output
};

struct MpecSolution {
  std::vector<double> leader_gen;  // techs x periods, period fastest
  std::vector<double> leader_inv;  // one per investable technology
  Grid3 fringe_gen;                // full firm dim; fringe rows populated
  Grid2 fringe_inv;
  Grid3 fringe_lam;
  std::vector<double> prices;
  ComplementarityPattern pattern;
  double leader_profit = 0.0;
  /// Smallest relative distance of any capped variable to its structural
  /// bound; values near zero mean a big-M constant is binding.
  double big_m_headroom = 1.0;
  SolveReport report;

  double leader_gen_at(const MpecProblem& p, int t, int per) const {
    return leader_gen[t * p.index.periods + per];
  }
  StrategyProfile to_profile(const MpecProblem& p) const;
};

struct PatternQpResult {
  bool feasible = false;
  MpecSolution solution;  // valid when feasible
  SolveReport report;
};

struct MpecOptions {
  double gap_tol = 1e-4;
  int node_budget = 20000;
  double comp_tol = 1e-7;
};

MpecProblem build_mpec(const MarketData& data, const std::string& leader_id,
                       const Grid3& rival_gen, const Grid2& rival_inv);
MpecProblem build_mpec(const MarketData& data, const std::string& leader_id,
                       const StrategyProfile& rivals);
MpecProblem build_mpec(const MarketData& data, const std::string& leader_id);

/// Solves the leader problem with every complementarity pair forced to the
/// side selected by `pattern`. Infeasibility is a normal outcome (pruning
/// signal). A pattern whose reduced objective loses concavity is re-solved
/// by the local NLP solver and flagged `local_only`.
PatternQpResult pattern_qp(const MpecProblem& p,
                           const ComplementarityPattern& pattern);

/// Best-first branch and bound over complementarity patterns. Node bounds
/// come from a concave relaxation (complementarity dropped, bilinear cross
/// terms replaced by their McCormick envelope). The warm profile, when
/// given, seeds the incumbent through its extracted pattern.
MpecSolution solve_mpec(const MpecProblem& p,
                        const std::optional<StrategyProfile>& warm = {},
                        const MpecOptions& options = {});

/// Re-solves each price taker's linear program at the solution prices and
/// returns the largest profit improvement over the embedded response (EUR).
double check_lower_level_optimality(const MpecProblem& p,
                                    const MpecSolution& s);
double check_lower_level_optimality(const MarketData& data,
                                    const StrategyProfile& profile);

/// Reads the complementarity pattern off a market state (which side of each
/// fringe pair is tight). Used to seed incumbents from warm starts.
ComplementarityPattern extract_pattern(const MpecProblem& p,
                                       const StrategyProfile& profile);

/// Equilibrium response of the price takers with all price-maker output
/// frozen; fills the fringe rows of a profile.
void fringe_response(const MarketData& data,
                     const std::vector<double>& pm_supply,
                     StrategyProfile& profile);

/// Leader objective (revenue minus generation and investment cost) and its
/// gradient, over the stacked vector [leader_gen; leader_inv; fringe_gen].
double mpec_leader_objective(const MpecProblem& p, const VectorXd& stacked,
                             VectorXd* grad);
int mpec_leader_objective_dim(const MpecProblem& p);

}  // namespace fringe
