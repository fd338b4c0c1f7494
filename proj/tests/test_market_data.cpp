#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "fringe/market_data.hpp"

using namespace fringe;

namespace {

bool has_code(const std::vector<Violation>& violations, const std::string& code) {
  for (const auto& v : violations) {
    if (v.code == code) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("default dataset matches the study instance") {
  MarketData data = default_dataset();
  CHECK(data.firm_count() == 4);
  CHECK(data.tech_count() == 6);
  CHECK(data.periods() == 5);

  const Firm& l1 = data.firms[data.firm_index("l1")];
  CHECK(l1.kind == FirmKind::PriceMaking);
  CHECK(l1.capacity(TechId::ExistingBaseload) == doctest::Approx(1947.0));
  CHECK(l1.capacity(TechId::ExistingMidMerit) == doctest::Approx(512.0));
  CHECK(l1.capacity(TechId::ExistingPeak) == doctest::Approx(270.0));
  CHECK(l1.capacity(TechId::NewBaseload) == 0.0);
  CHECK(l1.capacity(TechId::NewMidMerit) == 0.0);
  CHECK(l1.capacity(TechId::NewPeak) == 0.0);

  const Firm& l2 = data.firms[data.firm_index("l2")];
  CHECK(l2.capacity(TechId::ExistingBaseload) == doctest::Approx(1940.0));
  const Firm& f3 = data.firms[data.firm_index("f3")];
  CHECK(f3.kind == FirmKind::PriceTaking);
  CHECK(f3.capacity(TechId::ExistingMidMerit) == doctest::Approx(404.0));
  const Firm& f4 = data.firms[data.firm_index("f4")];
  CHECK(f4.capacity(TechId::ExistingPeak) == doctest::Approx(234.0));

  const Technology& nm = data.technology(TechId::NewMidMerit);
  CHECK(nm.marginal_cost == doctest::Approx(34.00));
  CHECK(*nm.invest_cost == doctest::Approx(67268.0));
  CHECK(nm.emissions_factor == doctest::Approx(0.30));
  CHECK(nm.investable);

  const Technology& eb = data.technology(TechId::ExistingBaseload);
  CHECK(eb.marginal_cost == doctest::Approx(48.87));
  CHECK(eb.emissions_factor == doctest::Approx(1.17));
  CHECK_FALSE(eb.investable);
  CHECK_FALSE(eb.invest_cost.has_value());

  CHECK(data.demand.intercepts[0] == doctest::Approx(25175.993));
  CHECK(data.demand.intercepts[1] == doctest::Approx(26768.307));
  CHECK(data.demand.intercepts[2] == doctest::Approx(30429.701));
  CHECK(data.demand.intercepts[3] == doctest::Approx(34302.196));
  CHECK(data.demand.intercepts[4] == doctest::Approx(37465.783));
  CHECK(data.demand.slope == doctest::Approx(9.091));
  double weight_sum = 0.0;
  for (double w : data.demand.weights) {
    CHECK(w == doctest::Approx(1752.0));
    weight_sum += w;
  }
  CHECK(weight_sum == doctest::Approx(8760.0));

  double total_capacity = 0.0;
  for (const auto& firm : data.firms) {
    for (const auto& [tech, mw] : firm.initial_capacity) total_capacity += mw;
  }
  CHECK(total_capacity == doctest::Approx(5307.0));
}

TEST_CASE("default dataset validates cleanly") {
  CHECK(validate(default_dataset()).empty());
}

TEST_CASE("validate flags out-of-range cv") {
  MarketData data = default_dataset();
  data.firms[0].cv = 1.5;
  CHECK(has_code(validate(data), "CvOutOfRange"));
}

TEST_CASE("validate flags an empty firm list") {
  MarketData data = default_dataset();
  data.firms.clear();
  CHECK(has_code(validate(data), "NoFirms"));
}

TEST_CASE("validate flags undeclared technologies and bad investables") {
  MarketData data = default_dataset();
  data.technologies.erase(data.technologies.begin());  // drop existing_baseload
  auto violations = validate(data);
  CHECK(has_code(violations, "UndeclaredTechnology"));

  data = default_dataset();
  data.technologies[3].invest_cost.reset();  // new_baseload, still investable
  CHECK(has_code(validate(data), "InvestCostInconsistent"));

  data = default_dataset();
  data.firms[0].initial_capacity[TechId::NewMidMerit] = 25.0;
  CHECK(has_code(validate(data), "NewTechNonzeroCapacity"));
}

TEST_CASE("serialize / parse round trip") {
  MarketData data = default_dataset();
  std::string text = serialize_dataset(data);
  MarketData back = parse_dataset(text);
  CHECK(serialize_dataset(back) == text);
}

TEST_CASE("load_dataset round trip through a file") {
  MarketData data = default_dataset();
  const std::string path = "roundtrip_dataset.json";
  save_dataset(data, path);
  MarketData back = load_dataset(path);
  CHECK(serialize_dataset(back) == serialize_dataset(data));
  std::remove(path.c_str());
}

TEST_CASE("negative slope rejects with a named rule") {
  MarketData data = default_dataset();
  data.demand.slope = -1.0;
  std::string text = serialize_dataset(data);
  CHECK_THROWS_WITH_AS(parse_dataset(text),
                       doctest::Contains("demand.slope must be > 0"),
                       ValidationError);
}

TEST_CASE("unknown technology key names the firm and key") {
  MarketData data = default_dataset();
  std::string text = serialize_dataset(data);
  // splice an undeclared technology into l1's capacity map
  auto pos = text.find("\"existing_baseload\": 1947.0");
  REQUIRE(pos != std::string::npos);
  text.insert(pos, "\"nuclear\": 100.0, ");
  try {
    parse_dataset(text);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    CHECK(msg.find("l1") != std::string::npos);
    CHECK(msg.find("nuclear") != std::string::npos);
  }
}

TEST_CASE("malformed json raises ParseError") {
  CHECK_THROWS_AS(parse_dataset("{ not json"), ParseError);
}
