#include "fringe/market_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fringe {

namespace {

const std::vector<std::pair<TechId, const char*>>& tech_names() {
  static const std::vector<std::pair<TechId, const char*>> names = {
      {TechId::ExistingBaseload, "existing_baseload"},
      {TechId::ExistingMidMerit, "existing_midmerit"},
      {TechId::ExistingPeak, "existing_peak"},
      {TechId::NewBaseload, "new_baseload"},
      {TechId::NewMidMerit, "new_midmerit"},
      {TechId::NewPeak, "new_peak"},
  };
  return names;
}

}  // namespace

std::string to_string(TechId id) {
  for (const auto& [tech, name] : tech_names()) {
    if (tech == id) return name;
  }
  throw std::logic_error("unknown TechId");
}

TechId tech_id_from_string(const std::string& name) {
  for (const auto& [tech, tech_name] : tech_names()) {
    if (name == tech_name) return tech;
  }
  throw ParseError("unknown technology id '" + name + "'");
}

std::string to_string(FirmKind kind) {
  return kind == FirmKind::PriceMaking ? "price_making" : "price_taking";
}

FirmKind firm_kind_from_string(const std::string& name) {
  if (name == "price_making") return FirmKind::PriceMaking;
  if (name == "price_taking") return FirmKind::PriceTaking;
  throw ParseError("unknown firm kind '" + name + "'");
}

const Technology& MarketData::technology(TechId id) const {
  for (const auto& t : technologies) {
    if (t.id == id) return t;
  }
  throw std::out_of_range("technology " + to_string(id) + " not declared");
}

bool MarketData::has_technology(TechId id) const {
  return tech_index(id) >= 0;
}

int MarketData::tech_index(TechId id) const {
  for (int i = 0; i < tech_count(); ++i) {
    if (technologies[i].id == id) return i;
  }
  return -1;
}

int MarketData::firm_index(const std::string& id) const {
  for (int i = 0; i < firm_count(); ++i) {
    if (firms[i].id == id) return i;
  }
  return -1;
}

std::vector<int> MarketData::price_maker_indices() const {
  std::vector<int> out;
  for (int i = 0; i < firm_count(); ++i) {
    if (firms[i].kind == FirmKind::PriceMaking) out.push_back(i);
  }
  return out;
}

std::vector<int> MarketData::price_taker_indices() const {
  std::vector<int> out;
  for (int i = 0; i < firm_count(); ++i) {
    if (firms[i].kind == FirmKind::PriceTaking) out.push_back(i);
  }
  return out;
}

std::vector<int> MarketData::investable_tech_indices() const {
  std::vector<int> out;
  for (int i = 0; i < tech_count(); ++i) {
    if (technologies[i].investable) out.push_back(i);
  }
  return out;
}

MarketData default_dataset() {
  MarketData data;
  data.technologies = {
      {TechId::ExistingBaseload, 48.87, std::nullopt, 1.17, false},
      {TechId::ExistingMidMerit, 41.10, std::nullopt, 0.36, false},
      {TechId::ExistingPeak, 63.38, std::nullopt, 0.56, false},
      {TechId::NewBaseload, 31.58, 110769.0, 0.78, true},
      {TechId::NewMidMerit, 34.00, 67268.0, 0.30, true},
      {TechId::NewPeak, 50.50, 40363.0, 0.45, true},
  };

  auto with_new_zeros = [](std::map<TechId, double> caps) {
    caps.emplace(TechId::NewBaseload, 0.0);
    caps.emplace(TechId::NewMidMerit, 0.0);
    caps.emplace(TechId::NewPeak, 0.0);
    return caps;
  };

  data.firms = {
      {"l1",
       FirmKind::PriceMaking,
       with_new_zeros({{TechId::ExistingBaseload, 1947.0},
                       {TechId::ExistingMidMerit, 512.0},
                       {TechId::ExistingPeak, 270.0}}),
       0.0},
      {"l2", FirmKind::PriceMaking,
       with_new_zeros({{TechId::ExistingBaseload, 1940.0}}), 0.0},
      {"f3", FirmKind::PriceTaking,
       with_new_zeros({{TechId::ExistingMidMerit, 404.0}}), 0.0},
      {"f4", FirmKind::PriceTaking,
       with_new_zeros({{TechId::ExistingPeak, 234.0}}), 0.0},
  };

  data.demand.intercepts = {25175.993, 26768.307, 30429.701, 34302.196,
                            37465.783};
  data.demand.slope = 9.091;
  data.demand.weights = std::vector<double>(5, 8760.0 / 5.0);
  return data;
}

MarketData parse_dataset(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed dataset: ") + e.what());
  }

  MarketData data;
  try {
    for (const auto& jt : doc.at("technologies")) {
      Technology tech;
      tech.id = tech_id_from_string(jt.at("id").get<std::string>());
      tech.marginal_cost = jt.at("marginal_cost").get<double>();
      tech.emissions_factor = jt.at("emissions_factor").get<double>();
      if (jt.contains("invest_cost") && !jt["invest_cost"].is_null()) {
        tech.invest_cost = jt["invest_cost"].get<double>();
      }
      tech.investable = tech.invest_cost.has_value() && *tech.invest_cost > 0.0;
      data.technologies.push_back(tech);
    }
    for (const auto& jf : doc.at("firms")) {
      Firm firm;
      firm.id = jf.at("id").get<std::string>();
      firm.kind = firm_kind_from_string(jf.at("kind").get<std::string>());
      if (jf.contains("cv") && !jf["cv"].is_null()) {
        firm.cv = jf["cv"].get<double>();
      }
      if (jf.contains("initial_capacity")) {
        for (const auto& [key, value] : jf["initial_capacity"].items()) {
          TechId tech;
          try {
            tech = tech_id_from_string(key);
          } catch (const ParseError&) {
            throw ValidationError("firm " + firm.id +
                                  ": initial_capacity references undeclared "
                                  "technology '" +
                                  key + "'");
          }
          firm.initial_capacity[tech] = value.get<double>();
        }
      }
      data.firms.push_back(firm);
    }
    const auto& jd = doc.at("demand");
    data.demand.intercepts = jd.at("intercepts").get<std::vector<double>>();
    data.demand.slope = jd.at("slope").get<double>();
    data.demand.weights = jd.at("weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset schema error: ") + e.what());
  }

  validate_or_throw(data);
  return data;
}

MarketData load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str());
}

std::string serialize_dataset(const MarketData& data) {
  nlohmann::json doc;
  doc["technologies"] = nlohmann::json::array();
  for (const auto& tech : data.technologies) {
    nlohmann::json jt;
    jt["id"] = to_string(tech.id);
    jt["marginal_cost"] = tech.marginal_cost;
    if (tech.invest_cost) jt["invest_cost"] = *tech.invest_cost;
    jt["emissions_factor"] = tech.emissions_factor;
    doc["technologies"].push_back(jt);
  }
  doc["firms"] = nlohmann::json::array();
  for (const auto& firm : data.firms) {
    nlohmann::json jf;
    jf["id"] = firm.id;
    jf["kind"] = to_string(firm.kind);
    jf["cv"] = firm.cv;
    nlohmann::json caps;
    for (const auto& [tech, mw] : firm.initial_capacity) {
      caps[to_string(tech)] = mw;
    }
    jf["initial_capacity"] = caps;
    doc["firms"].push_back(jf);
  }
  doc["demand"]["intercepts"] = data.demand.intercepts;
  doc["demand"]["slope"] = data.demand.slope;
  doc["demand"]["weights"] = data.demand.weights;
  return doc.dump(2);
}

void save_dataset(const MarketData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write dataset file '" + path + "'");
  out << serialize_dataset(data) << "\n";
}

std::vector<Violation> validate(const MarketData& data) {
  std::vector<Violation> out;
  auto add = [&out](std::string code, std::string message) {
    out.push_back({std::move(code), std::move(message)});
  };

  if (data.firms.empty()) add("NoFirms", "dataset declares no firms");
  if (data.technologies.empty())
    add("NoTechnologies", "dataset declares no technologies");
  if (data.demand.intercepts.empty())
    add("NoPeriods", "demand.intercepts is empty");

  std::set<TechId> seen_techs;
  for (const auto& tech : data.technologies) {
    const std::string name = to_string(tech.id);
    if (!seen_techs.insert(tech.id).second) {
      add("DuplicateTechnology", "technology " + name + " declared twice");
    }
    if (!(tech.marginal_cost > 0.0)) {
      add("NonPositiveMarginalCost",
          "technology " + name + ": marginal_cost must be > 0");
    }
    if (tech.emissions_factor < 0.0) {
      add("NegativeEmissions",
          "technology " + name + ": emissions_factor must be >= 0");
    }
    const bool has_positive_cost =
        tech.invest_cost.has_value() && *tech.invest_cost > 0.0;
    if (tech.investable != has_positive_cost) {
      add("InvestCostInconsistent",
          "technology " + name +
              ": investable must hold exactly when invest_cost is present "
              "and > 0");
    }
  }

  std::set<std::string> seen_firms;
  int price_makers = 0, price_takers = 0;
  for (const auto& firm : data.firms) {
    if (!seen_firms.insert(firm.id).second) {
      add("DuplicateFirmId", "firm id '" + firm.id + "' declared twice");
    }
    (firm.kind == FirmKind::PriceMaking ? price_makers : price_takers) += 1;
    if (firm.cv < 0.0 || firm.cv > 1.0) {
      add("CvOutOfRange", "firm " + firm.id + ": cv must lie in [0, 1]");
    }
    for (const auto& [tech, mw] : firm.initial_capacity) {
      const std::string key = to_string(tech);
      if (!data.has_technology(tech)) {
        add("UndeclaredTechnology",
            "firm " + firm.id + ": initial_capacity references undeclared "
            "technology '" + key + "'");
        continue;
      }
      if (mw < 0.0) {
        add("NegativeCapacity",
            "firm " + firm.id + ": initial_capacity[" + key + "] must be >= 0");
      }
      if (data.technology(tech).investable && mw != 0.0) {
        add("NewTechNonzeroCapacity",
            "firm " + firm.id + ": initial_capacity[" + key +
                "] must be 0 for investable technologies");
      }
    }
  }
  if (!data.firms.empty()) {
    if (price_makers == 0)
      add("NoPriceMakingFirm", "equilibrium modes need a price-making firm");
    if (price_takers == 0)
      add("NoPriceTakingFirm", "equilibrium modes need a price-taking firm");
  }

  if (data.demand.intercepts.size() != data.demand.weights.size()) {
    add("PeriodCountMismatch",
        "demand.intercepts and demand.weights must have equal length");
  }
  for (double a : data.demand.intercepts) {
    if (!(a > 0.0)) {
      add("NonPositiveIntercept", "demand.intercepts must be > 0");
      break;
    }
  }
  if (!(data.demand.slope > 0.0)) {
    add("NonPositiveSlope", "demand.slope must be > 0");
  }
  for (double w : data.demand.weights) {
    if (!(w > 0.0)) {
      add("NonPositiveWeight", "demand.weights must be > 0");
      break;
    }
  }
  return out;
}

void validate_or_throw(const MarketData& data, bool require_firm_mix) {
  std::vector<Violation> violations = validate(data);
  if (!require_firm_mix) {
    violations.erase(
        std::remove_if(violations.begin(), violations.end(),
                       [](const Violation& v) {
                         return v.code == "NoPriceMakingFirm" ||
                                v.code == "NoPriceTakingFirm";
                       }),
        violations.end());
  }
  if (violations.empty()) return;
  std::string message;
  for (const auto& v : violations) {
    if (!message.empty()) message += "; ";
    message += v.message;
  }
  throw ValidationError(message);
}

}  // namespace fringe
