#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "prodloom/panel.hpp"

namespace prodloom {

// Fraction of an input code's purchase value bought by machinery-sector
// plants, per year (or pooled across years).
struct PurchaseShareRow {
  std::string input_code;
  int year = 0;  // 0 when pooled
  double machinery_share = 0.0;
};

using PurchaseShareTable = std::vector<PurchaseShareRow>;

PurchaseShareTable compute_purchase_shares(const std::vector<InputPurchase>& purchases,
                                           const std::unordered_map<std::string, Sector>& sector_tags,
                                           bool pooled = false);

// Input codes whose machinery purchase share is <= tau.
struct RetainedCodeSet {
  bool pooled = false;
  std::set<std::string> codes;                      // pooled mode
  std::set<std::pair<std::string, int>> code_years;  // per-year mode

  bool contains(const std::string& code, int year) const {
    return pooled ? codes.count(code) > 0 : code_years.count({code, year}) > 0;
  }
  std::size_t size() const { return pooled ? codes.size() : code_years.size(); }
};

RetainedCodeSet filter_input_codes(const PurchaseShareTable& table, double tau);

// Average log input-price growth facing reference plants producing nest g.
struct InstrumentRow {
  std::string nest5;
  int year = 0;
  double Z = 0.0;
  int n_contributing = 0;  // (plant, input_code) growth terms averaged
};

using InstrumentTable = std::vector<InstrumentRow>;

struct IvConfig {
  enum class Reference { SingleProduct, NonMachinery };
  Reference reference = Reference::SingleProduct;
  int min_contributors = 1;
  bool value_weighted = false;
};

InstrumentTable build_price_growth_iv(const Panel& panel, const RetainedCodeSet& retained,
                                      const IvConfig& config = {});

std::string instruments_to_csv(const InstrumentTable& table);

}  // namespace prodloom
