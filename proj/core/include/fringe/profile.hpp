#pragma once

#include <vector>

#include "fringe/arrays.hpp"
#include "fringe/market_data.hpp"

namespace fringe {

/// Generation and investment decisions for every firm, the implied prices,
/// and the fringe capacity rents. One candidate market state.
struct StrategyProfile {
  Grid3 gen;                   // all firms x technologies x periods, MW
  Grid2 inv;                   // all firms x technologies, MW
  std::vector<double> prices;  // EUR/MWh per period
  Grid3 fringe_duals;          // lambda for price takers (other rows unused)
  bool cleared = false;        // prices recomputed from the demand curve

  static StrategyProfile zeros(const MarketData& data);

  double total_generation(int period) const;
  /// Recomputes prices from the demand curve and sets `cleared`.
  void clear_prices(const MarketData& data);
  double firm_profit(const MarketData& data, int firm) const;
  /// L1 distance over one firm's generation and investment block.
  double primal_block_distance(const StrategyProfile& other, int firm) const;
};

}  // namespace fringe
