#include <cmath>

#include "doctest.h"
#include "fringe/mcp_model.hpp"

using namespace fringe;

namespace {

MarketData micro_market() {
  MarketData data;
  data.technologies = {{TechId::ExistingBaseload, 10.0, std::nullopt, 0.5, false}};
  data.firms = {{"solo", FirmKind::PriceTaking,
                 {{TechId::ExistingBaseload, 50.0}}, 0.0}};
  data.demand.intercepts = {100.0};
  data.demand.slope = 1.0;
  data.demand.weights = {1.0};
  return data;
}

double total_new_mid_merit(const MarketData& data, const MarketOutcome& out,
                           FirmKind kind) {
  const int nm = data.tech_index(TechId::NewMidMerit);
  double total = 0.0;
  for (int f = 0; f < data.firm_count(); ++f) {
    if (data.firms[f].kind == kind) total += out.inv.at(f, nm);
  }
  return total;
}

}  // namespace

TEST_CASE("market system dimensions for a one-firm micro instance") {
  MarketData data = micro_market();
  LcpProblem lcp = build_market_lcp(data, CvConfig{});
  CHECK(lcp.n() == 2);  // one generation variable, one capacity dual
}

TEST_CASE("cv contributes exactly the own-quantity term") {
  MarketData data = micro_market();
  data.firms[0].kind = FirmKind::PriceMaking;
  MarketLcpOptions opts;
  opts.quad_reg = 0.0;
  LcpProblem zero = build_market_lcp(data, CvConfig::all(0.0), opts);
  LcpProblem one = build_market_lcp(data, CvConfig::all(1.0), opts);
  const double wb = data.demand.weights[0] * data.demand.slope;
  CHECK(zero.M(0, 0) == doctest::Approx(wb));
  CHECK(one.M(0, 0) == doctest::Approx(2.0 * wb));
  // only the generation diagonal differs
  CHECK((one.M - zero.M).cwiseAbs().sum() == doctest::Approx(wb));
}

TEST_CASE("duplicating a firm duplicates its matrix blocks") {
  MarketData data = micro_market();
  data.firms.push_back(data.firms[0]);
  data.firms[1].id = "clone";
  MarketLcpOptions opts;
  opts.quad_reg = 0.0;
  LcpProblem lcp = build_market_lcp(data, CvConfig{}, opts);
  const MarketLcpIndex idx = make_market_index(data);
  // generation rows of both firms are identical up to the dual column
  CHECK(lcp.M(idx.gen(0, 0, 0), idx.gen(0, 0, 0)) ==
        doctest::Approx(lcp.M(idx.gen(1, 0, 0), idx.gen(1, 0, 0))));
  CHECK(lcp.q(idx.gen(0, 0, 0)) == doctest::Approx(lcp.q(idx.gen(1, 0, 0))));
  CHECK(lcp.q(idx.lam(0, 0, 0)) == doctest::Approx(lcp.q(idx.lam(1, 0, 0))));
}

TEST_CASE("welfare oracle: unprofitable market stays dark") {
  MarketData data = micro_market();
  data.demand.intercepts = {5.0};  // below marginal cost
  MarketOutcome out = welfare_lp_oracle(data);
  CHECK(out.gen.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(out.prices[0] == doctest::Approx(5.0));

  MarketOutcome mcp = solve_market_mcp(data, CvConfig{});
  CHECK(mcp.gen.at(0, 0, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(mcp.prices[0] == doctest::Approx(5.0));
}

TEST_CASE("perfect competition equals the welfare optimum") {
  MarketData data = default_dataset();
  MarketOutcome mcp = solve_market_mcp(data, CvConfig::all(0.0));
  MarketOutcome lp = welfare_lp_oracle(data);

  for (int t = 0; t < data.tech_count(); ++t) {
    for (int p = 0; p < data.periods(); ++p) {
      double total_mcp = 0.0, total_lp = 0.0;
      for (int f = 0; f < data.firm_count(); ++f) {
        total_mcp += mcp.gen.at(f, t, p);
        total_lp += lp.gen.at(f, t, p);
      }
      CHECK(std::abs(total_mcp - total_lp) <= 1e-4);
    }
  }
  for (int p = 0; p < data.periods(); ++p) {
    CHECK(std::abs(mcp.prices[p] - lp.prices[p]) <= 1e-4);
  }
}

TEST_CASE("perfect competition: every firm adds the same new mid-merit block") {
  MarketData data = default_dataset();
  MarketOutcome out = solve_market_mcp(data, CvConfig::all(0.0));
  const int nm = data.tech_index(TechId::NewMidMerit);
  const int nb = data.tech_index(TechId::NewBaseload);
  const int np = data.tech_index(TechId::NewPeak);
  for (int f = 0; f < data.firm_count(); ++f) {
    CHECK(std::abs(out.inv.at(f, nm) - 713.0) <= 5.0);
    CHECK(std::abs(out.inv.at(f, nb)) <= 1.0);
    CHECK(std::abs(out.inv.at(f, np)) <= 1.0);
  }
}

TEST_CASE("full conjectural variation reproduces the withdrawal pattern") {
  MarketData data = default_dataset();
  MarketOutcome cv1 = solve_market_mcp(data, CvConfig::all(1.0));
  MarketOutcome cv0 = solve_market_mcp(data, CvConfig::all(0.0));
  const int nm = data.tech_index(TechId::NewMidMerit);

  for (int f = 0; f < data.firm_count(); ++f) {
    if (data.firms[f].kind == FirmKind::PriceMaking) {
      CHECK(std::abs(cv1.inv.at(f, nm)) <= 1.0);
    } else {
      CHECK(std::abs(cv1.inv.at(f, nm) - 1736.0) <= 10.0);
    }
  }
  // the price makers end up worse off than under perfect competition
  const int l1 = data.firm_index("l1");
  CHECK(cv1.profits[l1] < cv0.profits[l1]);
}

TEST_CASE("cv sweep: below-cost operation never appears") {
  MarketData data = default_dataset();
  auto entries = cv_sweep(data, default_cv_grid());
  REQUIRE(entries.size() == 11);
  const int nb = data.tech_index(TechId::NewBaseload);
  const int np = data.tech_index(TechId::NewPeak);
  for (const auto& entry : entries) {
    REQUIRE(entry.error.empty());
    const MarketOutcome& out = *entry.outcome;
    for (int f = 0; f < data.firm_count(); ++f) {
      for (int t = 0; t < data.tech_count(); ++t) {
        for (int p = 0; p < data.periods(); ++p) {
          if (out.gen.at(f, t, p) > 1e-6) {
            CHECK(out.prices[p] >=
                  data.technologies[t].marginal_cost - 1e-6);
          }
        }
      }
      CHECK(std::abs(out.inv.at(f, nb)) <= 1e-3);
      CHECK(std::abs(out.inv.at(f, np)) <= 1e-3);
    }
  }
}

TEST_CASE("singleton sweep delegates to the plain solve") {
  MarketData data = default_dataset();
  auto entries = cv_sweep(data, {0.0});
  REQUIRE(entries.size() == 1);
  MarketOutcome direct = solve_market_mcp(data, CvConfig::all(0.0));
  const MarketOutcome& swept = *entries[0].outcome;
  for (int f = 0; f < data.firm_count(); ++f) {
    CHECK(swept.profits[f] == doctest::Approx(direct.profits[f]));
  }
}

TEST_CASE("market outcome satisfies its own invariants") {
  MarketData data = default_dataset();
  MarketOutcome out = solve_market_mcp(data, CvConfig::all(0.3));
  for (int p = 0; p < data.periods(); ++p) {
    const double implied = data.demand.intercepts[p] -
                           data.demand.slope * out.total_generation(data, p);
    CHECK(std::abs(out.prices[p] - implied) <= 1e-6);
  }
  for (int f = 0; f < data.firm_count(); ++f) {
    double profit = 0.0;
    for (int t = 0; t < data.tech_count(); ++t) {
      const auto& tech = data.technologies[t];
      for (int p = 0; p < data.periods(); ++p) {
        CHECK(out.gen.at(f, t, p) >= -1e-9);
        CHECK(out.gen.at(f, t, p) <=
              data.firms[f].capacity(tech.id) + out.inv.at(f, t) + 1e-6);
        profit += data.demand.weights[p] * out.gen.at(f, t, p) *
                  (out.prices[p] - tech.marginal_cost);
      }
      if (tech.investable) profit -= *tech.invest_cost * out.inv.at(f, t);
    }
    CHECK(profit == doctest::Approx(out.profits[f]).epsilon(1e-4));
  }
}

TEST_CASE("market complementarity residual stays small") {
  MarketData data = default_dataset();
  for (double cv : {0.0, 0.5, 1.0}) {
    LcpProblem lcp = build_market_lcp(data, CvConfig::all(cv));
    LcpSolution sol = lemke_solve(lcp);
    const double scale = 1.0 + lcp.q.cwiseAbs().maxCoeff();
    for (int i = 0; i < lcp.n(); ++i) {
      CHECK(sol.z(i) * sol.w(i) <= 1e-6 * scale);
    }
  }
}
