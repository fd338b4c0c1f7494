#include "fringe/profile.hpp"

#include <cmath>

namespace fringe {

StrategyProfile StrategyProfile::zeros(const MarketData& data) {
  StrategyProfile s;
  const int F = data.firm_count(), T = data.tech_count(), P = data.periods();
  s.gen = Grid3(F, T, P);
  s.inv = Grid2(F, T);
  s.fringe_duals = Grid3(F, T, P);
  s.prices.assign(P, 0.0);
  return s;
}

double StrategyProfile::total_generation(int period) const {
  double total = 0.0;
  for (int f = 0; f < gen.nf; ++f) {
    for (int t = 0; t < gen.nt; ++t) total += gen.at(f, t, period);
  }
  return total;
}

void StrategyProfile::clear_prices(const MarketData& data) {
  const int P = data.periods();
  prices.assign(P, 0.0);
  for (int p = 0; p < P; ++p) {
    prices[p] = data.demand.intercepts[p] - data.demand.slope * total_generation(p);
  }
  cleared = true;
}

double StrategyProfile::firm_profit(const MarketData& data, int firm) const {
  double profit = 0.0;
  for (int t = 0; t < data.tech_count(); ++t) {
    const Technology& tech = data.technologies[t];
    for (int p = 0; p < data.periods(); ++p) {
      profit += data.demand.weights[p] * gen.at(firm, t, p) *
                (prices[p] - tech.marginal_cost);
    }
    if (tech.investable) profit -= *tech.invest_cost * inv.at(firm, t);
  }
  return profit;
}

double StrategyProfile::primal_block_distance(const StrategyProfile& other,
                                              int firm) const {
  double dist = 0.0;
  for (int t = 0; t < gen.nt; ++t) {
    for (int p = 0; p < gen.np; ++p) {
      dist += std::abs(gen.at(firm, t, p) - other.gen.at(firm, t, p));
    }
    dist += std::abs(inv.at(firm, t) - other.inv.at(firm, t));
  }
  return dist;
}

}  // namespace fringe
