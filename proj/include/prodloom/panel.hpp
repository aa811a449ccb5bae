#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "prodloom/common.hpp"

namespace prodloom {

// 5-character product code. The first 3 characters identify the market h(j),
// the full 5 the nest g(j).
struct ProductCode {
  std::string code5;

  std::string market3() const { return code5.substr(0, 3); }
  const std::string& nest5() const { return code5; }

  bool operator==(const ProductCode& o) const { return code5 == o.code5; }
  bool operator<(const ProductCode& o) const { return code5 < o.code5; }
};

struct PlantProductObs {
  std::string plant_id;
  int year = 0;
  ProductCode product;
  double quantity = 0.0;
  double revenue = 0.0;
  double unit_price = 0.0;  // revenue / quantity
};

struct PlantInputTotals {
  std::string plant_id;
  int year = 0;
  double labor = 0.0;
  double capital = 0.0;
  double materials = 0.0;
};

struct InputPurchase {
  std::string plant_id;
  int year = 0;
  std::string input_code;
  double value = 0.0;
  double quantity = 0.0;
  double unit_value = 0.0;  // value / quantity
};

enum class Sector { Machinery, Other };

struct IngestConfig {
  // Allowed product-code characters.
  std::string code_alphabet = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";
  // Optional year -> deflator. Currency columns are divided by it. Off by
  // default; the default leaves values as given.
  std::map<int, double> deflators;
};

// Immutable analysis panel. Construct through load_panel / make_panel and do
// not mutate afterwards; concurrent readers are safe.
struct Panel {
  std::vector<PlantProductObs> observations;   // sorted (plant, year, code)
  std::vector<PlantInputTotals> inputs;        // sorted (plant, year)
  std::vector<InputPurchase> purchases;        // sorted (plant, year, code)
  std::unordered_map<std::string, Sector> sector_tags;
  std::map<std::pair<std::string, int>, int> product_counts;  // (plant, year) -> #products

  const PlantInputTotals* find_inputs(const std::string& plant, int year) const;
  int product_count(const std::string& plant, int year) const;
};

struct IngestLog {
  std::vector<std::string> lines;  // "DROP ...", "DUP ...", "ORPHAN ..."
  int dropped = 0;

  std::string to_string() const;
};

struct LoadResult {
  Panel panel;
  IngestLog log;
};

// Assembles a Panel from already-parsed records: sorts, rejects duplicate
// (plant, year, product) keys, rebuilds product counts.
Panel make_panel(std::vector<PlantProductObs> observations,
                 std::vector<PlantInputTotals> inputs,
                 std::vector<InputPurchase> purchases,
                 std::unordered_map<std::string, Sector> sector_tags);

LoadResult load_panel(const std::string& outputs_path, const std::string& inputs_path,
                      const std::string& purchases_path, const IngestConfig& config = {});

// Writes the panel back out in the ingestion schemas (outputs.csv,
// inputs.csv, purchases.csv under dir). load_panel on the result reproduces
// the panel exactly.
void save_panel(const Panel& panel, const std::string& dir);

using Concordance = std::unordered_map<std::string, std::string>;

Concordance load_concordance(const std::string& path);

// Rewrites product codes through the mapping. Codes colliding within a
// (plant, year) merge by summing quantity and revenue. strict = false drops
// unmapped codes instead of failing.
Panel apply_concordance(const Panel& panel, const Concordance& mapping, bool strict = true);

struct Finding {
  std::string code;  // ORPHAN, POSITIVITY, PRICE, COUNT
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;
  bool empty() const { return findings.empty(); }
  std::string to_string() const;
};

ValidationReport validate_panel(const Panel& panel);

}  // namespace prodloom
