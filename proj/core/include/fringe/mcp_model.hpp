#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fringe/arrays.hpp"
#include "fringe/lcp.hpp"
#include "fringe/market_data.hpp"
#include "fringe/numerics.hpp"

namespace fringe {

/// Conjectural-variation levels for the price-making firms. A firm's level is
/// taken from `per_firm` when present, otherwise from `uniform` when set,
/// otherwise from the firm's own cv field. Price takers always act with 0.
struct CvConfig {
  std::optional<double> uniform;
  std::map<std::string, double> per_firm;

  double value_for(const Firm& firm) const;
  static CvConfig all(double level) {
    CvConfig cv;
    cv.uniform = level;
    return cv;
  }
};

/// One solved market state: generation, investment, prices, capacity rents
/// and the resulting per-firm profits.
struct MarketOutcome {
  Grid3 gen;             // MW, firm x technology x period
  Grid2 inv;             // MW, firm x technology (0 for non-investable)
  std::vector<double> prices;        // EUR/MWh per period
  Grid3 capacity_duals;  // EUR per MW, firm x technology x period
  std::vector<double> profits;       // EUR per firm

  double total_generation(const MarketData& data, int period) const;
};

/// Index bookkeeping for the market complementarity system. Variables are
/// ordered generation block, investment block (investable technologies
/// only), then capacity-dual block.
struct MarketLcpIndex {
  int firms = 0, techs = 0, periods = 0;
  std::vector<int> investable;  // tech indices with investment variables
  int gen0 = 0, inv0 = 0, lam0 = 0, total = 0;

  int gen(int f, int t, int p) const {
    return gen0 + (f * techs + t) * periods + p;
  }
  int inv(int f, int k) const {
    return inv0 + f * static_cast<int>(investable.size()) + k;
  }
  int lam(int f, int t, int p) const {
    return lam0 + (f * techs + t) * periods + p;
  }
};

MarketLcpIndex make_market_index(const MarketData& data);

struct MarketLcpOptions {
  /// Tiny convex regularisation added to the generation/investment diagonal.
  /// It selects the minimum-norm point of an otherwise degenerate solution
  /// set, so identical units receive identical allocations.
  double quad_reg = 1e-6;
  /// Extra exogenous supply per period (MW), subtracted from the intercepts.
  std::vector<double> exogenous_supply;
};

/// Assembles the market complementarity system with the clearing condition
/// substituted into every stationarity row. Price makers carry the
/// -cv * slope own-quantity term.
LcpProblem build_market_lcp(const MarketData& data, const CvConfig& cv,
                            const MarketLcpOptions& options = {});

struct McpSolveOptions {
  MarketLcpOptions lcp;
  LemkeOptions lemke;
};

MarketOutcome solve_market_mcp(const MarketData& data, const CvConfig& cv,
                               const McpSolveOptions& options = {});

/// Independent check for the cv = 0 case: perfect competition coincides with
/// the welfare maximum of this linear-demand market, solved here as a convex
/// QP over generation, investment and per-period demand.
MarketOutcome welfare_lp_oracle(const MarketData& data);

struct CvSweepEntry {
  double cv = 0.0;
  std::optional<MarketOutcome> outcome;
  std::string error;  // empty on success
};

std::vector<CvSweepEntry> cv_sweep(const MarketData& data,
                                   const std::vector<double>& levels,
                                   const McpSolveOptions& options = {});

/// Recovers a MarketOutcome from an LCP solution of build_market_lcp.
MarketOutcome outcome_from_lcp(const MarketData& data, const MarketLcpIndex& idx,
                               const VectorXd& z,
                               const std::vector<double>& exogenous_supply = {});

std::vector<double> default_cv_grid();  // 0.0, 0.1, ..., 1.0

}  // namespace fringe
