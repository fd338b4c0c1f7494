#pragma once

#include <string>
#include <vector>

#include "fringe/epec.hpp"
#include "fringe/market_data.hpp"
#include "fringe/mcp_model.hpp"
#include "fringe/profile.hpp"

namespace fringe {

/// Weighted price times consumed quantity, summed over periods (EUR).
double consumer_costs(const MarketData& data, const StrategyProfile& profile);
double consumer_costs(const MarketData& data, const MarketOutcome& outcome);

/// Weighted emissions over all generation (tCO2).
double emissions(const MarketData& data, const StrategyProfile& profile);
double emissions(const MarketData& data, const MarketOutcome& outcome);

struct PriceCluster {
  std::vector<int> record_indices;      // indices into EquilibriumSet.records
  std::vector<double> representative;   // price series of the first member
};

/// Greedy leader clustering of the records' price series: a record joins the
/// first cluster whose representative is within `tol` in the infinity norm.
/// Clusters are ordered by size (descending), ties by first appearance.
std::vector<PriceCluster> cluster_price_series(const EquilibriumSet& set,
                                               double tol = 0.1);

struct RevenueBreakdown {
  std::vector<int> leader_firms;             // firm indices
  std::vector<std::vector<double>> revenue;  // [leader][period] EUR
  std::vector<double> invest_cost;           // [leader] EUR
};

RevenueBreakdown revenue_breakdown(const EquilibriumRecord& record,
                                   const MarketData& data);

struct MetricsRow {
  int record_id = 0;
  std::vector<double> firm_profits;
  double consumer_cost = 0.0;
  double emissions_t = 0.0;
  std::vector<double> price_series;
  double pm_combined_new_midmerit = 0.0;
  int cluster_id = -1;
  bool duplicate = false;
};

std::vector<MetricsRow> compute_metrics(const EquilibriumSet& set,
                                        const MarketData& data,
                                        double cluster_tol = 0.1,
                                        double dedup_tol = 1.0);

// File outputs. All writers are deterministic in their inputs.
void write_outcome_csv(const std::string& path, const MarketData& data,
                       const MarketOutcome& outcome);
void write_equilibria_json(const std::string& path, const MarketData& data,
                           const EquilibriumSet& set);
EquilibriumSet read_equilibria_json(const std::string& path,
                                    const MarketData& data);
void write_metrics_csv(const std::string& path, const MarketData& data,
                       const std::vector<MetricsRow>& rows);
void write_clusters_csv(const std::string& path,
                        const std::vector<PriceCluster>& clusters);

}  // namespace fringe
