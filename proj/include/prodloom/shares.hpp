#pragma once

#include <map>
#include <string>
#include <vector>

#include "prodloom/panel.hpp"

namespace prodloom {

// Log revenue-share variables of the nested logit, one row per observation.
//   rs_j      = ln(R_j / I_h)        market share of the product
//   rs_within = ln(R_j / Lambda_g)   share within the 5-digit nest
//   rs_0      = ln(R_0 / I_h)        outside share of market h in year t
struct ShareRow {
  std::string plant_id;
  int year = 0;
  ProductCode product;
  double rs_j = 0.0;
  double rs_within = 0.0;
  double rs_0 = 0.0;
  double log_price = 0.0;
};

struct ShareTable {
  std::vector<ShareRow> rows;  // ordered by (market, year, plant, product)
};

// Market size I_{h,t}. The default multiplies inside revenue by kappa; an
// explicit (market3, year) -> size map overrides it where present.
struct MarketSizeRule {
  double kappa = 2.0;
  std::map<std::pair<std::string, int>, double> explicit_size;
};

MarketSizeRule load_market_size(const std::string& path);

ShareTable compute_revenue_shares(const Panel& panel, const MarketSizeRule& rule = {});

}  // namespace prodloom
