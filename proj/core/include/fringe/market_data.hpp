#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fringe {

/// Generating technology identifiers. "Existing" units belong to a firm's
/// initial portfolio; "new" units only come into existence through investment.
enum class TechId {
  ExistingBaseload,
  ExistingMidMerit,
  ExistingPeak,
  NewBaseload,
  NewMidMerit,
  NewPeak,
};

std::string to_string(TechId id);
TechId tech_id_from_string(const std::string& name);

struct Technology {
  TechId id = TechId::ExistingBaseload;
  double marginal_cost = 0.0;         // EUR/MWh
  std::optional<double> invest_cost;  // EUR/MW/year; absent for existing units
  double emissions_factor = 0.0;      // tCO2/MWh
  bool investable = false;
};

enum class FirmKind { PriceMaking, PriceTaking };

std::string to_string(FirmKind kind);
FirmKind firm_kind_from_string(const std::string& name);

struct Firm {
  std::string id;
  FirmKind kind = FirmKind::PriceTaking;
  std::map<TechId, double> initial_capacity;  // MW per technology
  double cv = 0.0;  // conjectural variation, only meaningful for price makers

  double capacity(TechId t) const {
    auto it = initial_capacity.find(t);
    return it == initial_capacity.end() ? 0.0 : it->second;
  }
};

/// Linear inverse demand per period: price = intercept - slope * total supply.
/// Each period carries a weight (hours represented by that period).
struct DemandCurve {
  std::vector<double> intercepts;  // EUR/MWh at zero quantity, one per period
  double slope = 0.0;              // EUR/MWh per MW
  std::vector<double> weights;     // hours per period
};

struct MarketData {
  std::vector<Firm> firms;
  std::vector<Technology> technologies;
  DemandCurve demand;

  int periods() const { return static_cast<int>(demand.intercepts.size()); }
  int tech_count() const { return static_cast<int>(technologies.size()); }
  int firm_count() const { return static_cast<int>(firms.size()); }

  const Technology& technology(TechId id) const;
  bool has_technology(TechId id) const;
  int tech_index(TechId id) const;  // -1 if not declared
  int firm_index(const std::string& id) const;  // -1 if unknown

  std::vector<int> price_maker_indices() const;
  std::vector<int> price_taker_indices() const;
  /// Indices (into `technologies`) of the investable technologies, in
  /// declaration order.
  std::vector<int> investable_tech_indices() const;
};

struct Violation {
  std::string code;
  std::string message;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The built-in four-firm / six-technology / five-period study instance.
MarketData default_dataset();

MarketData load_dataset(const std::string& path);
MarketData parse_dataset(const std::string& json_text);
std::string serialize_dataset(const MarketData& data);
void save_dataset(const MarketData& data, const std::string& path);

/// Structural checks. Returns one entry per violated invariant; an empty
/// list means the instance is well formed. `NoPriceMakingFirm` and
/// `NoPriceTakingFirm` are advisory for the equilibrium solvers; the
/// complementarity market model tolerates any firm mix.
std::vector<Violation> validate(const MarketData& data);

/// Throws ValidationError listing every violation. `require_firm_mix`
/// additionally insists on at least one price maker and one price taker.
void validate_or_throw(const MarketData& data, bool require_firm_mix = false);

}  // namespace fringe
