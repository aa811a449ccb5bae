#include "prodloom/panel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "prodloom/csv.hpp"

namespace prodloom {

const PlantInputTotals* Panel::find_inputs(const std::string& plant, int year) const {
  PlantInputTotals key;
  key.plant_id = plant;
  key.year = year;
  auto it = std::lower_bound(inputs.begin(), inputs.end(), key,
                             [](const PlantInputTotals& a, const PlantInputTotals& b) {
                               return std::tie(a.plant_id, a.year) < std::tie(b.plant_id, b.year);
                             });
  if (it != inputs.end() && it->plant_id == plant && it->year == year) return &*it;
  return nullptr;
}

int Panel::product_count(const std::string& plant, int year) const {
  auto it = product_counts.find({plant, year});
  return it == product_counts.end() ? 0 : it->second;
}

std::string IngestLog::to_string() const {
  std::ostringstream out;
  for (const auto& l : lines) out << l << '\n';
  return out.str();
}

static void validate_code(const std::string& code, const IngestConfig& config,
                          const std::string& context) {
  if (code.size() != 5) {
    throw Error(ErrorKind::Schema,
                context + ": product code '" + code + "' must have exactly 5 characters");
  }
  for (char c : code) {
    if (config.code_alphabet.find(c) == std::string::npos) {
      throw Error(ErrorKind::Schema, context + ": product code '" + code +
                                         "' contains character outside the configured alphabet");
    }
  }
}

Panel make_panel(std::vector<PlantProductObs> observations, std::vector<PlantInputTotals> inputs,
                 std::vector<InputPurchase> purchases,
                 std::unordered_map<std::string, Sector> sector_tags) {
  Panel p;
  p.observations = std::move(observations);
  p.inputs = std::move(inputs);
  p.purchases = std::move(purchases);
  p.sector_tags = std::move(sector_tags);

  std::sort(p.observations.begin(), p.observations.end(),
            [](const PlantProductObs& a, const PlantProductObs& b) {
              return std::tie(a.plant_id, a.year, a.product.code5) <
                     std::tie(b.plant_id, b.year, b.product.code5);
            });
  std::sort(p.inputs.begin(), p.inputs.end(),
            [](const PlantInputTotals& a, const PlantInputTotals& b) {
              return std::tie(a.plant_id, a.year) < std::tie(b.plant_id, b.year);
            });
  std::sort(p.purchases.begin(), p.purchases.end(),
            [](const InputPurchase& a, const InputPurchase& b) {
              return std::tie(a.plant_id, a.year, a.input_code) <
                     std::tie(b.plant_id, b.year, b.input_code);
            });

  std::string dups;
  for (std::size_t i = 1; i < p.observations.size(); ++i) {
    const auto& a = p.observations[i - 1];
    const auto& b = p.observations[i];
    if (a.plant_id == b.plant_id && a.year == b.year && a.product.code5 == b.product.code5) {
      if (!dups.empty()) dups += ", ";
      dups += "(" + a.plant_id + ", " + fmt_int(a.year) + ", " + a.product.code5 + ")";
    }
  }
  if (!dups.empty()) {
    throw Error(ErrorKind::DuplicateKey, "duplicate (plant, year, product) keys: " + dups);
  }

  for (const auto& o : p.observations) {
    p.product_counts[{o.plant_id, o.year}] += 1;
  }
  return p;
}

LoadResult load_panel(const std::string& outputs_path, const std::string& inputs_path,
                      const std::string& purchases_path, const IngestConfig& config) {
  IngestLog log;

  auto deflator = [&](int year) {
    auto it = config.deflators.find(year);
    return it == config.deflators.end() ? 1.0 : it->second;
  };

  CsvTable tout = read_csv(outputs_path);
  std::size_t c_plant = tout.col("plant_id"), c_year = tout.col("year"),
              c_code = tout.col("product_code"), c_qty = tout.col("quantity"),
              c_rev = tout.col("revenue");
  std::vector<PlantProductObs> obs;
  obs.reserve(tout.rows.size());
  for (std::size_t i = 0; i < tout.rows.size(); ++i) {
    const auto& row = tout.rows[i];
    std::string ctx = outputs_path + " row " + fmt_int(static_cast<long long>(i + 2));
    PlantProductObs o;
    o.plant_id = row[c_plant];
    o.year = parse_int(row[c_year], ctx);
    o.product.code5 = row[c_code];
    validate_code(o.product.code5, config, ctx);
    o.quantity = parse_double(row[c_qty], ctx);
    o.revenue = parse_double(row[c_rev], ctx) / deflator(o.year);
    if (!(o.quantity > 0.0) || !(o.revenue > 0.0)) {
      log.lines.push_back("DROP outputs " + o.plant_id + " " + fmt_int(o.year) + " " +
                          o.product.code5 + " nonpositive quantity or revenue");
      log.dropped += 1;
      continue;
    }
    o.unit_price = o.revenue / o.quantity;
    obs.push_back(std::move(o));
  }

  CsvTable tin = read_csv(inputs_path);
  std::size_t i_plant = tin.col("plant_id"), i_year = tin.col("year"), i_l = tin.col("labor"),
              i_k = tin.col("capital"), i_m = tin.col("materials"), i_s = tin.col("sector");
  std::vector<PlantInputTotals> inputs;
  std::unordered_map<std::string, Sector> tags;
  inputs.reserve(tin.rows.size());
  for (std::size_t i = 0; i < tin.rows.size(); ++i) {
    const auto& row = tin.rows[i];
    std::string ctx = inputs_path + " row " + fmt_int(static_cast<long long>(i + 2));
    PlantInputTotals r;
    r.plant_id = row[i_plant];
    r.year = parse_int(row[i_year], ctx);
    double d = deflator(r.year);
    r.labor = parse_double(row[i_l], ctx);
    r.capital = parse_double(row[i_k], ctx) / d;
    r.materials = parse_double(row[i_m], ctx) / d;
    Sector s = row[i_s] == "machinery" ? Sector::Machinery : Sector::Other;
    auto it = tags.find(r.plant_id);
    if (it == tags.end()) {
      tags.emplace(r.plant_id, s);
    } else if (it->second != s) {
      log.lines.push_back("SECTOR " + r.plant_id + " conflicting sector tags, keeping first");
    }
    inputs.push_back(std::move(r));
  }

  CsvTable tp = read_csv(purchases_path);
  std::size_t p_plant = tp.col("plant_id"), p_year = tp.col("year"), p_code = tp.col("input_code"),
              p_qty = tp.col("quantity"), p_val = tp.col("value");
  std::vector<InputPurchase> purchases;
  purchases.reserve(tp.rows.size());
  for (std::size_t i = 0; i < tp.rows.size(); ++i) {
    const auto& row = tp.rows[i];
    std::string ctx = purchases_path + " row " + fmt_int(static_cast<long long>(i + 2));
    InputPurchase r;
    r.plant_id = row[p_plant];
    r.year = parse_int(row[p_year], ctx);
    r.input_code = row[p_code];
    r.quantity = parse_double(row[p_qty], ctx);
    r.value = parse_double(row[p_val], ctx) / deflator(r.year);
    if (!(r.quantity > 0.0) || r.value < 0.0) {
      log.lines.push_back("DROP purchases " + r.plant_id + " " + fmt_int(r.year) + " " +
                          r.input_code + " nonpositive quantity or negative value");
      log.dropped += 1;
      continue;
    }
    r.unit_value = r.value / r.quantity;
    purchases.push_back(std::move(r));
  }

  LoadResult result;
  result.panel = make_panel(std::move(obs), std::move(inputs), std::move(purchases), std::move(tags));
  result.log = std::move(log);
  return result;
}

void save_panel(const Panel& panel, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(panel.observations.size());
    for (const auto& o : panel.observations) {
      rows.push_back({o.plant_id, fmt_int(o.year), o.product.code5, fmt_double(o.quantity),
                      fmt_double(o.revenue)});
    }
    write_csv(dir + "/outputs.csv", {"plant_id", "year", "product_code", "quantity", "revenue"},
              rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(panel.inputs.size());
    for (const auto& r : panel.inputs) {
      auto it = panel.sector_tags.find(r.plant_id);
      std::string sector =
          (it != panel.sector_tags.end() && it->second == Sector::Machinery) ? "machinery"
                                                                             : "non-machinery";
      rows.push_back({r.plant_id, fmt_int(r.year), fmt_double(r.labor), fmt_double(r.capital),
                      fmt_double(r.materials), sector});
    }
    write_csv(dir + "/inputs.csv",
              {"plant_id", "year", "labor", "capital", "materials", "sector"}, rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(panel.purchases.size());
    for (const auto& r : panel.purchases) {
      rows.push_back({r.plant_id, fmt_int(r.year), r.input_code, fmt_double(r.quantity),
                      fmt_double(r.value)});
    }
    write_csv(dir + "/purchases.csv", {"plant_id", "year", "input_code", "quantity", "value"},
              rows);
  }
}

Concordance load_concordance(const std::string& path) {
  CsvTable t = read_csv(path);
  std::size_t c_src = t.col("source_code"), c_dst = t.col("target_code");
  Concordance map;
  for (const auto& row : t.rows) map[row[c_src]] = row[c_dst];
  return map;
}

Panel apply_concordance(const Panel& panel, const Concordance& mapping, bool strict) {
  std::set<std::string> missing;
  for (const auto& o : panel.observations) {
    if (!mapping.count(o.product.code5)) missing.insert(o.product.code5);
  }
  if (!missing.empty() && strict) {
    std::string list;
    for (const auto& c : missing) {
      if (!list.empty()) list += ", ";
      list += c;
    }
    throw Error(ErrorKind::MissingMapping, "codes without concordance mapping: " + list);
  }

  // (plant, year, target code) -> merged quantity/revenue
  std::map<std::tuple<std::string, int, std::string>, std::pair<double, double>> merged;
  for (const auto& o : panel.observations) {
    auto it = mapping.find(o.product.code5);
    if (it == mapping.end()) continue;  // permissive mode drops unmapped codes
    auto& acc = merged[{o.plant_id, o.year, it->second}];
    acc.first += o.quantity;
    acc.second += o.revenue;
  }

  std::vector<PlantProductObs> obs;
  obs.reserve(merged.size());
  for (const auto& [key, qr] : merged) {
    PlantProductObs o;
    o.plant_id = std::get<0>(key);
    o.year = std::get<1>(key);
    o.product.code5 = std::get<2>(key);
    o.quantity = qr.first;
    o.revenue = qr.second;
    o.unit_price = o.revenue / o.quantity;
    obs.push_back(std::move(o));
  }
  return make_panel(std::move(obs), panel.inputs, panel.purchases, panel.sector_tags);
}

std::string ValidationReport::to_string() const {
  std::ostringstream out;
  for (const auto& f : findings) out << f.code << ' ' << f.message << '\n';
  return out.str();
}

ValidationReport validate_panel(const Panel& panel) {
  ValidationReport report;
  for (const auto& o : panel.observations) {
    std::string ref = o.plant_id + " " + fmt_int(o.year) + " " + o.product.code5;
    if (!(o.quantity > 0.0) || !(o.revenue > 0.0)) {
      report.findings.push_back({"POSITIVITY", ref + " nonpositive quantity or revenue"});
    } else if (std::abs(o.unit_price * o.quantity - o.revenue) > 1e-9 * std::abs(o.revenue)) {
      report.findings.push_back({"PRICE", ref + " unit_price * quantity != revenue"});
    }
    if (!panel.find_inputs(o.plant_id, o.year)) {
      report.findings.push_back({"ORPHAN", ref + " no matching input totals row"});
    }
  }
  for (const auto& r : panel.inputs) {
    if (!(r.labor > 0.0) || !(r.capital > 0.0) || !(r.materials > 0.0)) {
      report.findings.push_back(
          {"POSITIVITY", r.plant_id + " " + fmt_int(r.year) + " nonpositive input totals"});
    }
  }
  std::map<std::pair<std::string, int>, int> recount;
  for (const auto& o : panel.observations) recount[{o.plant_id, o.year}] += 1;
  if (recount != panel.product_counts) {
    report.findings.push_back({"COUNT", "product_counts inconsistent with observations"});
  }
  return report;
}

}  // namespace prodloom
