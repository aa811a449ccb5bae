#include "prodloom/instruments.hpp"

#include <algorithm>
#include <cmath>

#include "prodloom/csv.hpp"

namespace prodloom {

PurchaseShareTable compute_purchase_shares(const std::vector<InputPurchase>& purchases,
                                           const std::unordered_map<std::string, Sector>& sector_tags,
                                           bool pooled) {
  // (code, year) -> (machinery value, total value); year 0 pools all years
  std::map<std::pair<std::string, int>, std::pair<double, double>> acc;
  for (const auto& p : purchases) {
    auto it = sector_tags.find(p.plant_id);
    if (it == sector_tags.end()) {
      throw Error(ErrorKind::Schema, "no sector tag for purchasing plant " + p.plant_id);
    }
    bool machinery = it->second == Sector::Machinery;
    auto& cell = acc[{p.input_code, pooled ? 0 : p.year}];
    if (machinery) cell.first += p.value;
    cell.second += p.value;
  }
  PurchaseShareTable table;
  table.reserve(acc.size());
  for (const auto& [key, vals] : acc) {
    if (vals.second <= 0.0) continue;  // zero total value: row omitted
    table.push_back({key.first, key.second, vals.first / vals.second});
  }
  return table;
}

RetainedCodeSet filter_input_codes(const PurchaseShareTable& table, double tau) {
  if (tau < 0.0 || tau > 1.0) {
    throw Error(ErrorKind::Config, "threshold tau must lie in [0,1], got " + fmt_double(tau));
  }
  RetainedCodeSet set;
  set.pooled = !table.empty() && table.front().year == 0;
  for (const auto& row : table) {
    if (row.machinery_share <= tau) {
      if (set.pooled) {
        set.codes.insert(row.input_code);
      } else {
        set.code_years.insert({row.input_code, row.year});
      }
    }
  }
  return set;
}

InstrumentTable build_price_growth_iv(const Panel& panel, const RetainedCodeSet& retained,
                                      const IvConfig& config) {
  // reference plants per year
  auto is_reference = [&](const std::string& plant, int year) {
    if (config.reference == IvConfig::Reference::SingleProduct) {
      return panel.product_count(plant, year) == 1;
    }
    auto it = panel.sector_tags.find(plant);
    return it != panel.sector_tags.end() && it->second == Sector::Other;
  };

  // (plant, code, year) -> (unit value, value) for growth computation
  std::map<std::tuple<std::string, std::string, int>, std::pair<double, double>> uv;
  for (const auto& p : panel.purchases) {
    uv[{p.plant_id, p.input_code, p.year}] = {p.unit_value, p.value};
  }

  // per-plant growth at t: mean over retained codes of delta log unit value
  struct PlantGrowth {
    double growth = 0.0;
    double weight = 0.0;  // purchase value at t (value-weighted mode)
    int n_terms = 0;
  };
  std::map<std::pair<std::string, int>, PlantGrowth> plant_growth;
  for (const auto& p : panel.purchases) {
    if (!retained.contains(p.input_code, p.year)) continue;
    auto prev = uv.find({p.plant_id, p.input_code, p.year - 1});
    if (prev == uv.end()) continue;
    if (!(p.unit_value > 0.0) || !(prev->second.first > 0.0)) continue;
    double g = std::log(p.unit_value) - std::log(prev->second.first);
    auto& acc = plant_growth[{p.plant_id, p.year}];
    double w = config.value_weighted ? p.value : 1.0;
    acc.growth += w * g;
    acc.weight += w;
    acc.n_terms += 1;
  }

  // nest-level average over reference plants producing the nest at t
  struct NestAcc {
    double sum = 0.0;
    double weight = 0.0;
    int n_terms = 0;
  };
  std::map<std::pair<std::string, int>, NestAcc> nest_acc;
  std::set<std::tuple<std::string, std::string, int>> seen;  // (plant, nest, year)
  for (const auto& o : panel.observations) {
    if (!is_reference(o.plant_id, o.year)) continue;
    if (!seen.insert({o.plant_id, o.product.nest5(), o.year}).second) continue;
    auto it = plant_growth.find({o.plant_id, o.year});
    if (it == plant_growth.end() || it->second.weight <= 0.0) continue;
    double g = it->second.growth / it->second.weight;
    auto& acc = nest_acc[{o.product.nest5(), o.year}];
    double w = config.value_weighted ? it->second.weight : 1.0;
    acc.sum += w * g;
    acc.weight += w;
    acc.n_terms += it->second.n_terms;
  }

  InstrumentTable table;
  table.reserve(nest_acc.size());
  for (const auto& [key, acc] : nest_acc) {
    if (acc.n_terms < config.min_contributors) continue;
    double z = acc.sum / acc.weight;
    if (!std::isfinite(z)) continue;
    table.push_back({key.first, key.second, z, acc.n_terms});
  }
  return table;
}

std::string instruments_to_csv(const InstrumentTable& table) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(table.size());
  for (const auto& r : table) {
    rows.push_back({r.nest5, fmt_int(r.year), fmt_double(r.Z), fmt_int(r.n_contributing)});
  }
  return csv_to_string({"nest5", "year", "Z", "n_contributing"}, rows);
}

}  // namespace prodloom
