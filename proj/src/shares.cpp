#include "prodloom/shares.hpp"

#include <algorithm>
#include <cmath>

#include "prodloom/csv.hpp"

namespace prodloom {

MarketSizeRule load_market_size(const std::string& path) {
  CsvTable t = read_csv(path);
  std::size_t c_m = t.col("market3"), c_y = t.col("year"), c_s = t.col("market_size");
  MarketSizeRule rule;
  for (const auto& row : t.rows) {
    std::string ctx = path;
    rule.explicit_size[{row[c_m], parse_int(row[c_y], ctx)}] = parse_double(row[c_s], ctx);
  }
  return rule;
}

ShareTable compute_revenue_shares(const Panel& panel, const MarketSizeRule& rule) {
  if (rule.kappa <= 1.0) {
    throw Error(ErrorKind::Config,
                "market size multiplier kappa must exceed 1 (outside share would be non-positive), got " +
                    fmt_double(rule.kappa));
  }

  // total inside revenue per (market, year) and per (nest, year)
  std::map<std::pair<std::string, int>, double> market_rev;
  std::map<std::pair<std::string, int>, double> nest_rev;
  for (const auto& o : panel.observations) {
    market_rev[{o.product.market3(), o.year}] += o.revenue;
    nest_rev[{o.product.nest5(), o.year}] += o.revenue;
  }

  ShareTable table;
  table.rows.reserve(panel.observations.size());
  for (const auto& o : panel.observations) {
    double inside = market_rev.at({o.product.market3(), o.year});
    double size = rule.kappa * inside;
    auto it = rule.explicit_size.find({o.product.market3(), o.year});
    if (it != rule.explicit_size.end()) size = it->second;
    if (!(size > inside)) {
      throw Error(ErrorKind::Config, "market size for " + o.product.market3() + " " +
                                         fmt_int(o.year) +
                                         " does not exceed inside revenue; outside share non-positive");
    }
    ShareRow r;
    r.plant_id = o.plant_id;
    r.year = o.year;
    r.product = o.product;
    r.rs_j = std::log(o.revenue / size);
    r.rs_within = std::log(o.revenue / nest_rev.at({o.product.nest5(), o.year}));
    r.rs_0 = std::log((size - inside) / size);
    r.log_price = std::log(o.unit_price);
    table.rows.push_back(std::move(r));
  }

  std::sort(table.rows.begin(), table.rows.end(), [](const ShareRow& a, const ShareRow& b) {
    auto am = a.product.market3(), bm = b.product.market3();
    return std::tie(am, a.year, a.plant_id, a.product.code5) <
           std::tie(bm, b.year, b.plant_id, b.product.code5);
  });
  return table;
}

}  // namespace prodloom
