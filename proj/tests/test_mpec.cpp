#include <cmath>
#include <limits>

#include "doctest.h"
#include "fringe/mcp_model.hpp"
#include "fringe/mpec.hpp"

using namespace fringe;

namespace {

// One leader, one fringe firm, one existing and one investable technology.
MarketData duo_market() {
  MarketData data;
  data.technologies = {
      {TechId::ExistingMidMerit, 10.0, std::nullopt, 0.4, false},
      {TechId::NewPeak, 12.0, 5.0, 0.5, true},
  };
  data.firms = {
      {"lead", FirmKind::PriceMaking,
       {{TechId::ExistingMidMerit, 30.0}, {TechId::NewPeak, 0.0}}, 0.0},
      {"fr", FirmKind::PriceTaking,
       {{TechId::ExistingMidMerit, 20.0}, {TechId::NewPeak, 0.0}}, 0.0},
  };
  data.demand.intercepts = {60.0};
  data.demand.slope = 1.0;
  data.demand.weights = {1.0};
  return data;
}

// Exhaustive oracle over every complementarity pattern.
double enumerate_best_profit(const MpecProblem& p) {
  const int n1 = p.index.r1_count();
  const int n2 = p.index.r2_count();
  const int n3 = p.index.r3_count();
  const int bits = n1 + n2 + n3;
  REQUIRE(bits <= 20);
  double best = -std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << bits); ++mask) {
    ComplementarityPattern pat;
    pat.r1.resize(n1);
    pat.r2.resize(n2);
    pat.r3.resize(n3);
    for (int i = 0; i < n1; ++i) pat.r1[i] = (mask >> i) & 1;
    for (int i = 0; i < n2; ++i) pat.r2[i] = (mask >> (n1 + i)) & 1;
    for (int i = 0; i < n3; ++i) pat.r3[i] = (mask >> (n1 + n2 + i)) & 1;
    PatternQpResult res = pattern_qp(p, pat);
    if (res.feasible) best = std::max(best, res.solution.leader_profit);
  }
  return best;
}

}  // namespace

TEST_CASE("pattern space dimensions on the default dataset") {
  MarketData data = default_dataset();
  MpecProblem p = build_mpec(data, "l1");
  CHECK(p.index.r1_count() == 60);
  CHECK(p.index.r2_count() == 6);
  CHECK(p.index.r3_count() == 60);
}

TEST_CASE("unknown or non-leading firms are rejected") {
  MarketData data = default_dataset();
  CHECK_THROWS_AS(build_mpec(data, "f3"), UnknownLeader);
  CHECK_THROWS_AS(build_mpec(data, "nobody"), UnknownLeader);
}

TEST_CASE("rival decisions beyond capacity are rejected at build") {
  MarketData data = default_dataset();
  Grid3 rg(data.firm_count(), data.tech_count(), data.periods());
  Grid2 ri(data.firm_count(), data.tech_count());
  const int l2 = data.firm_index("l2");
  rg.at(l2, data.tech_index(TechId::ExistingBaseload), 0) = 5000.0;  // cap 1940
  CHECK_THROWS_AS(build_mpec(data, "l1", rg, ri), ValidationError);
}

TEST_CASE("all-zero pattern shuts the fringe down") {
  MarketData data = duo_market();
  MpecProblem p = build_mpec(data, "lead");
  ComplementarityPattern pat;
  pat.r1.assign(p.index.r1_count(), 0);
  pat.r2.assign(p.index.r2_count(), 0);
  pat.r3.assign(p.index.r3_count(), 0);
  PatternQpResult res = pattern_qp(p, pat);
  REQUIRE(res.feasible);
  for (int t = 0; t < data.tech_count(); ++t) {
    CHECK(res.solution.fringe_gen.at(1, t, 0) == doctest::Approx(0.0));
    CHECK(res.solution.fringe_inv.at(1, t) == doctest::Approx(0.0));
  }
  // the closed stationarity branch caps the price at the cheapest fringe cost
  CHECK(res.solution.prices[0] <= 10.0 + 1e-6);
}

TEST_CASE("impossible branch combination is infeasible") {
  // Leader too small to drive the price down to the fringe marginal cost,
  // yet the pattern demands tight stationarity with a closed dual.
  MarketData data;
  data.technologies = {{TechId::ExistingMidMerit, 10.0, std::nullopt, 0.4, false}};
  data.firms = {
      {"lead", FirmKind::PriceMaking, {{TechId::ExistingMidMerit, 10.0}}, 0.0},
      {"fr", FirmKind::PriceTaking, {{TechId::ExistingMidMerit, 20.0}}, 0.0},
  };
  data.demand.intercepts = {60.0};
  data.demand.slope = 1.0;
  data.demand.weights = {1.0};
  MpecProblem p = build_mpec(data, "lead");
  ComplementarityPattern pat;
  pat.r1 = {1};
  pat.r2 = {};
  pat.r3 = {0};
  PatternQpResult res = pattern_qp(p, pat);
  CHECK_FALSE(res.feasible);
  CHECK(res.report.status == SolveStatus::Infeasible);
}

TEST_CASE("competitive-solution pattern is feasible for the leader problem") {
  MarketData data = default_dataset();
  MarketOutcome mcp = solve_market_mcp(data, CvConfig::all(0.0));
  StrategyProfile profile = StrategyProfile::zeros(data);
  for (int f = 0; f < data.firm_count(); ++f) {
    for (int t = 0; t < data.tech_count(); ++t) {
      for (int per = 0; per < data.periods(); ++per) {
        profile.gen.at(f, t, per) = mcp.gen.at(f, t, per);
        profile.fringe_duals.at(f, t, per) = mcp.capacity_duals.at(f, t, per);
      }
      profile.inv.at(f, t) = mcp.inv.at(f, t);
    }
  }
  profile.clear_prices(data);

  MpecProblem p = build_mpec(data, "l1", profile);
  ComplementarityPattern pat = extract_pattern(p, profile);
  PatternQpResult res = pattern_qp(p, pat);
  REQUIRE(res.feasible);
  // re-optimising the leader inside the same pattern cannot lose money
  const int l1 = data.firm_index("l1");
  CHECK(res.solution.leader_profit >= mcp.profits[l1] - 1e-3);
}

TEST_CASE("monopolist with idle fringe hits the textbook output") {
  MarketData data;
  data.technologies = {{TechId::ExistingMidMerit, 10.0, std::nullopt, 0.4, false}};
  data.firms = {
      {"lead", FirmKind::PriceMaking, {{TechId::ExistingMidMerit, 100.0}}, 0.0},
      {"fr", FirmKind::PriceTaking, {{TechId::ExistingMidMerit, 0.0}}, 0.0},
  };
  data.demand.intercepts = {50.0};
  data.demand.slope = 1.0;
  data.demand.weights = {1.0};
  MpecProblem p = build_mpec(data, "lead");
  MpecSolution sol = solve_mpec(p);
  // max (50 - g - 10) g -> g = 20, price 30, profit 400
  CHECK(sol.leader_gen[0] == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(sol.prices[0] == doctest::Approx(30.0).epsilon(1e-5));
  CHECK(sol.leader_profit == doctest::Approx(400.0).epsilon(1e-6));
  CHECK(sol.report.gap <= 1e-4);
}

TEST_CASE("branch and bound matches exhaustive pattern enumeration") {
  MarketData data = duo_market();
  MpecProblem p = build_mpec(data, "lead");
  const double oracle = enumerate_best_profit(p);
  MpecSolution sol = solve_mpec(p);
  CHECK(sol.leader_profit ==
        doctest::Approx(oracle).epsilon(1e-6));
  CHECK(sol.report.gap <= 1e-4);
  CHECK(sol.big_m_headroom >= 0.01);
}

TEST_CASE("solution satisfies the embedded response optimality") {
  MarketData data = duo_market();
  MpecProblem p = build_mpec(data, "lead");
  MpecSolution sol = solve_mpec(p);
  CHECK(check_lower_level_optimality(p, sol) <= 1e-4);

  // negative control: suppress a profitable fringe response
  MpecSolution corrupted = sol;
  bool zeroed = false;
  for (int t = 0; t < data.tech_count() && !zeroed; ++t) {
    if (corrupted.fringe_gen.at(1, t, 0) > 1.0) {
      corrupted.fringe_gen.at(1, t, 0) = 0.0;
      zeroed = true;
    }
  }
  REQUIRE(zeroed);
  CHECK(check_lower_level_optimality(p, corrupted) > 1e-3);
}

TEST_CASE("competitive outcome passes the lower-level check") {
  MarketData data = default_dataset();
  MarketOutcome mcp = solve_market_mcp(data, CvConfig::all(0.0));
  StrategyProfile profile = StrategyProfile::zeros(data);
  for (int f = 0; f < data.firm_count(); ++f) {
    for (int t = 0; t < data.tech_count(); ++t) {
      for (int per = 0; per < data.periods(); ++per) {
        profile.gen.at(f, t, per) = mcp.gen.at(f, t, per);
        profile.fringe_duals.at(f, t, per) = mcp.capacity_duals.at(f, t, per);
      }
      profile.inv.at(f, t) = mcp.inv.at(f, t);
    }
  }
  profile.clear_prices(data);
  CHECK(check_lower_level_optimality(data, profile) <= 1e-4);
}

TEST_CASE("scaling every structural cap by ten leaves the optimum alone") {
  MarketData data = duo_market();
  MpecProblem p = build_mpec(data, "lead");
  MpecSolution base = solve_mpec(p);
  MpecProblem wide = p;
  wide.big_m.scale = 10.0;
  MpecSolution scaled = solve_mpec(wide);
  CHECK(std::abs(scaled.leader_profit - base.leader_profit) <=
        1e-3 * (1.0 + std::abs(base.leader_profit)));
}

TEST_CASE("leader objective gradient agrees with finite differences") {
  MarketData data = duo_market();
  MpecProblem p = build_mpec(data, "lead");
  const int n = mpec_leader_objective_dim(p);
  VectorXd x(n);
  for (int i = 0; i < n; ++i) x(i) = 3.0 + 0.7 * i;
  auto f = [&p](const VectorXd& v, VectorXd* g) {
    return mpec_leader_objective(p, v, g);
  };
  CHECK(finite_diff_check(f, x) <= 1e-5);
}
