#include "fringe/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace fringe {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double consumer_costs(const MarketData& data, const StrategyProfile& profile) {
  double total = 0.0;
  for (int p = 0; p < data.periods(); ++p) {
    total += data.demand.weights[p] * profile.prices[p] *
             profile.total_generation(p);
  }
  return total;
}

double consumer_costs(const MarketData& data, const MarketOutcome& outcome) {
  double total = 0.0;
  for (int p = 0; p < data.periods(); ++p) {
    total += data.demand.weights[p] * outcome.prices[p] *
             outcome.total_generation(data, p);
  }
  return total;
}

namespace {

template <typename GenAt>
double emissions_impl(const MarketData& data, GenAt gen_at) {
  double total = 0.0;
  for (int p = 0; p < data.periods(); ++p) {
    for (int t = 0; t < data.tech_count(); ++t) {
      double tech_total = 0.0;
      for (int f = 0; f < data.firm_count(); ++f) tech_total += gen_at(f, t, p);
      total += data.demand.weights[p] * data.technologies[t].emissions_factor *
               tech_total;
    }
  }
  return total;
}

}  // namespace

double emissions(const MarketData& data, const StrategyProfile& profile) {
  return emissions_impl(
      data, [&](int f, int t, int p) { return profile.gen.at(f, t, p); });
}

double emissions(const MarketData& data, const MarketOutcome& outcome) {
  return emissions_impl(
      data, [&](int f, int t, int p) { return outcome.gen.at(f, t, p); });
}

std::vector<PriceCluster> cluster_price_series(const EquilibriumSet& set,
                                               double tol) {
  std::vector<PriceCluster> clusters;
  for (int i = 0; i < static_cast<int>(set.records.size()); ++i) {
    const auto& series = set.records[i].profile.prices;
    bool placed = false;
    for (auto& cluster : clusters) {
      double dist = 0.0;
      for (size_t p = 0; p < series.size(); ++p) {
        dist = std::max(dist, std::abs(series[p] - cluster.representative[p]));
      }
      if (dist <= tol) {
        cluster.record_indices.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) {
      clusters.push_back({{i}, series});
    }
  }
  std::stable_sort(clusters.begin(), clusters.end(),
                   [](const PriceCluster& a, const PriceCluster& b) {
                     return a.record_indices.size() > b.record_indices.size();
                   });
  return clusters;
}

RevenueBreakdown revenue_breakdown(const EquilibriumRecord& record,
                                   const MarketData& data) {
  RevenueBreakdown out;
  out.leader_firms = data.price_maker_indices();
  const StrategyProfile& s = record.profile;
  for (int leader : out.leader_firms) {
    std::vector<double> rev(data.periods(), 0.0);
    for (int p = 0; p < data.periods(); ++p) {
      for (int t = 0; t < data.tech_count(); ++t) {
        rev[p] += data.demand.weights[p] * s.gen.at(leader, t, p) *
                  (s.prices[p] - data.technologies[t].marginal_cost);
      }
    }
    double invest = 0.0;
    for (int t = 0; t < data.tech_count(); ++t) {
      if (data.technologies[t].investable) {
        invest += *data.technologies[t].invest_cost * s.inv.at(leader, t);
      }
    }
    out.revenue.push_back(std::move(rev));
    out.invest_cost.push_back(invest);
  }
  return out;
}

std::vector<MetricsRow> compute_metrics(const EquilibriumSet& set,
                                        const MarketData& data,
                                        double cluster_tol, double dedup_tol) {
  std::vector<PriceCluster> clusters = cluster_price_series(set, cluster_tol);
  std::vector<int> cluster_of(set.records.size(), -1);
  for (int c = 0; c < static_cast<int>(clusters.size()); ++c) {
    for (int i : clusters[c].record_indices) cluster_of[i] = c;
  }

  const int nm = data.tech_index(TechId::NewMidMerit);
  std::vector<MetricsRow> rows;
  for (int i = 0; i < static_cast<int>(set.records.size()); ++i) {
    const EquilibriumRecord& rec = set.records[i];
    MetricsRow row;
    row.record_id = i;
    for (int f = 0; f < data.firm_count(); ++f) {
      row.firm_profits.push_back(rec.profile.firm_profit(data, f));
    }
    row.consumer_cost = consumer_costs(data, rec.profile);
    row.emissions_t = emissions(data, rec.profile);
    row.price_series = rec.profile.prices;
    if (nm >= 0) {
      for (int leader : data.price_maker_indices()) {
        row.pm_combined_new_midmerit += rec.profile.inv.at(leader, nm);
      }
    }
    row.cluster_id = cluster_of[i];
    for (int j = 0; j < i && !row.duplicate; ++j) {
      double dist = 0.0;
      const auto& a = rec.profile;
      const auto& b = set.records[j].profile;
      for (int f = 0; f < data.firm_count(); ++f) {
        for (int t = 0; t < data.tech_count(); ++t) {
          for (int p = 0; p < data.periods(); ++p) {
            dist = std::max(dist, std::abs(a.gen.at(f, t, p) - b.gen.at(f, t, p)));
          }
          dist = std::max(dist, std::abs(a.inv.at(f, t) - b.inv.at(f, t)));
        }
      }
      if (dist <= dedup_tol) row.duplicate = true;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_outcome_csv(const std::string& path, const MarketData& data,
                       const MarketOutcome& outcome) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "firm,technology,period,gen_MW,inv_MW,price_eur_MWh,lambda\n";
  for (int f = 0; f < data.firm_count(); ++f) {
    for (int t = 0; t < data.tech_count(); ++t) {
      for (int p = 0; p < data.periods(); ++p) {
        out << data.firms[f].id << ',' << to_string(data.technologies[t].id)
            << ',' << (p + 1) << ',' << fmt(outcome.gen.at(f, t, p)) << ','
            << fmt(outcome.inv.at(f, t)) << ',' << fmt(outcome.prices[p]) << ','
            << fmt(outcome.capacity_duals.at(f, t, p)) << '\n';
      }
    }
  }
}

namespace {

nlohmann::json profile_to_json(const MarketData& data,
                               const StrategyProfile& s) {
  nlohmann::json j;
  j["prices"] = s.prices;
  nlohmann::json firms;
  for (int f = 0; f < data.firm_count(); ++f) {
    nlohmann::json jf;
    for (int t = 0; t < data.tech_count(); ++t) {
      const std::string key = to_string(data.technologies[t].id);
      std::vector<double> gen(data.periods());
      std::vector<double> lam(data.periods());
      for (int p = 0; p < data.periods(); ++p) {
        gen[p] = s.gen.at(f, t, p);
        lam[p] = s.fringe_duals.at(f, t, p);
      }
      jf["gen"][key] = gen;
      jf["inv"][key] = s.inv.at(f, t);
      if (data.firms[f].kind == FirmKind::PriceTaking) jf["lambda"][key] = lam;
    }
    firms[data.firms[f].id] = jf;
  }
  j["firms"] = firms;
  return j;
}

StrategyProfile profile_from_json(const MarketData& data,
                                  const nlohmann::json& j) {
  StrategyProfile s = StrategyProfile::zeros(data);
  s.prices = j.at("prices").get<std::vector<double>>();
  for (int f = 0; f < data.firm_count(); ++f) {
    const auto& jf = j.at("firms").at(data.firms[f].id);
    for (int t = 0; t < data.tech_count(); ++t) {
      const std::string key = to_string(data.technologies[t].id);
      const auto gen = jf.at("gen").at(key).get<std::vector<double>>();
      for (int p = 0; p < data.periods(); ++p) s.gen.at(f, t, p) = gen[p];
      s.inv.at(f, t) = jf.at("inv").at(key).get<double>();
      if (jf.contains("lambda") && jf["lambda"].contains(key)) {
        const auto lam = jf["lambda"][key].get<std::vector<double>>();
        for (int p = 0; p < data.periods(); ++p) s.fringe_duals.at(f, t, p) = lam[p];
      }
    }
  }
  s.cleared = true;
  return s;
}

}  // namespace

void write_equilibria_json(const std::string& path, const MarketData& data,
                           const EquilibriumSet& set) {
  nlohmann::json j;
  j["attempts"] = set.attempts;
  j["successes"] = set.successes;
  j["failures"]["lm_infeasible"] = set.failure_reasons.lm_infeasible;
  j["failures"]["gs_no_convergence"] = set.failure_reasons.gs_no_convergence;
  j["records"] = nlohmann::json::array();
  for (const auto& rec : set.records) {
    nlohmann::json jr;
    jr["attempt"] = rec.attempt;
    jr["seed"] = rec.seed;
    jr["leader_order"] = rec.leader_order;
    jr["leader_profits"] = rec.leader_profits;
    jr["lm_objective"] = rec.lm_objective;
    jr["gs_iterations"] = rec.gs_iterations;
    jr["deviation_residual"] = rec.deviation_residual;
    jr["fringe_residual"] = rec.fringe_residual;
    jr["profile"] = profile_to_json(data, rec.profile);
    j["records"].push_back(jr);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(1) << "\n";
}

EquilibriumSet read_equilibria_json(const std::string& path,
                                    const MarketData& data) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  EquilibriumSet set;
  set.attempts = j.at("attempts").get<int>();
  set.successes = j.at("successes").get<int>();
  set.failure_reasons.lm_infeasible = j.at("failures").at("lm_infeasible");
  set.failure_reasons.gs_no_convergence =
      j.at("failures").at("gs_no_convergence");
  for (const auto& jr : j.at("records")) {
    EquilibriumRecord rec;
    rec.attempt = jr.at("attempt").get<int>();
    rec.seed = jr.at("seed").get<std::uint64_t>();
    rec.leader_order = jr.at("leader_order").get<std::vector<std::string>>();
    rec.leader_profits = jr.at("leader_profits").get<std::vector<double>>();
    rec.lm_objective = jr.at("lm_objective").get<double>();
    rec.gs_iterations = jr.at("gs_iterations").get<int>();
    rec.deviation_residual = jr.at("deviation_residual").get<double>();
    rec.fringe_residual = jr.at("fringe_residual").get<double>();
    rec.profile = profile_from_json(data, jr.at("profile"));
    set.records.push_back(std::move(rec));
  }
  return set;
}

void write_metrics_csv(const std::string& path, const MarketData& data,
                       const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "record";
  for (int f = 0; f < data.firm_count(); ++f) {
    out << ",profit_" << data.firms[f].id;
  }
  out << ",consumer_cost,emissions_tCO2";
  for (int p = 0; p < data.periods(); ++p) out << ",price_p" << (p + 1);
  out << ",pm_new_midmerit_MW,cluster,duplicate\n";
  for (const auto& row : rows) {
    out << row.record_id;
    for (double v : row.firm_profits) out << ',' << fmt(v);
    out << ',' << fmt(row.consumer_cost) << ',' << fmt(row.emissions_t);
    for (double v : row.price_series) out << ',' << fmt(v);
    out << ',' << fmt(row.pm_combined_new_midmerit) << ',' << row.cluster_id
        << ',' << (row.duplicate ? 1 : 0) << '\n';
  }
}

void write_clusters_csv(const std::string& path,
                        const std::vector<PriceCluster>& clusters) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "cluster,size,records";
  if (!clusters.empty()) {
    for (size_t p = 0; p < clusters[0].representative.size(); ++p) {
      out << ",price_p" << (p + 1);
    }
  }
  out << "\n";
  for (size_t c = 0; c < clusters.size(); ++c) {
    out << c << ',' << clusters[c].record_indices.size() << ',';
    for (size_t i = 0; i < clusters[c].record_indices.size(); ++i) {
      if (i) out << ' ';
      out << clusters[c].record_indices[i];
    }
    for (double v : clusters[c].representative) out << ',' << fmt(v);
    out << '\n';
  }
}

}  // namespace fringe
