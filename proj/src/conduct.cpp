#include "prodloom/conduct.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "prodloom/csv.hpp"

namespace prodloom {

Eigen::MatrixXd share_derivatives(double alpha, double sigma, const Eigen::VectorXd& share,
                                  const Eigen::VectorXd& share_within,
                                  const std::vector<int>& nest) {
  if (!(alpha > 0.0) || !(sigma > 0.0) || !(sigma < 1.0)) {
    throw Error(ErrorKind::Config, "share derivatives require an admissible (alpha, sigma); got alpha=" +
                                       fmt_double(alpha) + " sigma=" + fmt_double(sigma));
  }
  const Eigen::Index n = share.size();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(share[j] > 0.0) || !(share[j] < 1.0) || !(share_within[j] > 0.0) ||
        !(share_within[j] <= 1.0)) {
      throw Error(ErrorKind::SingularDesign,
                  "boundary share at product index " + fmt_int(j) + "; derivatives undefined");
    }
  }

  // With mu_j = -alpha p_j + eta_j:
  //   d ln s_j / d mu_j = 1/sigma - ((1-sigma)/sigma) s_{j|g} - s_j
  //   d ln s_j / d mu_k = -((1-sigma)/sigma) s_{k|g} - s_k   (same nest)
  //   d ln s_j / d mu_k = -s_k                               (other nest)
  // and d/dp_k = -alpha d/dmu_k, J(k,j) = s_j d ln s_j / d p_k.
  const double w = (1.0 - sigma) / sigma;
  Eigen::MatrixXd J(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double dln;
      if (k == j) {
        dln = 1.0 / sigma - w * share_within[j] - share[j];
      } else if (nest[static_cast<std::size_t>(k)] == nest[static_cast<std::size_t>(j)]) {
        dln = -w * share_within[k] - share[k];
      } else {
        dln = -share[k];
      }
      J(k, j) = share[j] * (-alpha) * dln;
    }
  }
  return J;
}

LernerResult solve_lerner(const Eigen::MatrixXd& J, const Eigen::VectorXd& share,
                          const std::vector<std::string>& plant, const std::string& context) {
  const Eigen::Index n = share.size();
  LernerResult out;
  out.lerner.resize(n);

  // plant -> product indices, ordered by plant id
  std::map<std::string, std::vector<Eigen::Index>> blocks;
  for (Eigen::Index j = 0; j < n; ++j) blocks[plant[static_cast<std::size_t>(j)]].push_back(j);

  for (const auto& [owner, idx] : blocks) {
    const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd A(m, m);
    Eigen::VectorXd b(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index c = 0; c < m; ++c) {
        A(a, c) = J(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(c)]);
      }
      A(a, a) -= share[idx[static_cast<std::size_t>(a)]];
      b[a] = -share[idx[static_cast<std::size_t>(a)]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) {
      throw Error(ErrorKind::ConductInversion,
                  "singular conduct block for plant " + owner + " in " + context);
    }
    Eigen::VectorXd nu = lu.solve(b);
    out.block_residual.push_back((A * nu - b).cwiseAbs().maxCoeff());
    for (Eigen::Index a = 0; a < m; ++a) {
      out.lerner[idx[static_cast<std::size_t>(a)]] = nu[a];
    }
  }
  return out;
}

MarkupResult recover_marginal_costs(const Eigen::MatrixXd& J, const MarketCell& cell) {
  LernerResult lr = solve_lerner(J, cell.share, cell.plant,
                                 "market " + cell.market3 + " year " + fmt_int(cell.year));
  MarkupResult out;
  out.lerner = lr.lerner;
  out.mc = cell.price.cwiseProduct(Eigen::VectorXd::Ones(cell.price.size()) - lr.lerner);
  out.block_residual = std::move(lr.block_residual);
  return out;
}

Eigen::VectorXd input_allocation_shares(const Eigen::VectorXd& mc, const Eigen::VectorXd& quantity) {
  for (Eigen::Index j = 0; j < mc.size(); ++j) {
    if (!(mc[j] > 0.0)) {
      throw Error(ErrorKind::ConductInversion,
                  "non-positive marginal cost at index " + fmt_int(j) + "; allocation undefined");
    }
    if (!(quantity[j] > 0.0)) {
      throw Error(ErrorKind::ConductInversion, "non-positive quantity at index " + fmt_int(j));
    }
  }
  Eigen::VectorXd cost = mc.cwiseProduct(quantity);
  return cost / cost.sum();
}

std::vector<MarketCell> build_market_cells(const Panel& panel, const ShareTable& shares) {
  std::vector<MarketCell> cells;
  // share rows are ordered by (market, year, ...) so cells are contiguous
  std::size_t i = 0;
  while (i < shares.rows.size()) {
    std::string market = shares.rows[i].product.market3();
    int year = shares.rows[i].year;
    MarketCell cell;
    cell.market3 = market;
    cell.year = year;
    std::map<std::string, int> nest_ids;
    std::vector<double> s, sw, p;
    std::size_t begin = i;
    while (i < shares.rows.size() && shares.rows[i].product.market3() == market &&
           shares.rows[i].year == year) {
      const auto& r = shares.rows[i];
      cell.obs_index.push_back(static_cast<int>(i));
      cell.plant.push_back(r.plant_id);
      auto [it, inserted] = nest_ids.emplace(r.product.nest5(), static_cast<int>(nest_ids.size()));
      (void)inserted;
      cell.nest.push_back(it->second);
      s.push_back(std::exp(r.rs_j));
      sw.push_back(std::exp(r.rs_within));
      p.push_back(std::exp(r.log_price));
      ++i;
    }
    cell.share = Eigen::Map<Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    cell.share_within = Eigen::Map<Eigen::VectorXd>(sw.data(), static_cast<Eigen::Index>(sw.size()));
    cell.price = Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    cell.outside_share = std::exp(shares.rows[begin].rs_0);
    cells.push_back(std::move(cell));
  }
  (void)panel;
  return cells;
}

AllocationResult compute_cost_allocations(const Panel& panel, const ShareTable& shares,
                                          double alpha, double sigma) {
  AllocationResult result;
  auto cells = build_market_cells(panel, shares);

  // (plant, year) -> rows, for the Eq. (2) allocation pass
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> by_plant_year;

  for (const auto& cell : cells) {
    Eigen::MatrixXd J = share_derivatives(alpha, sigma, cell.share, cell.share_within, cell.nest);
    MarkupResult mr = recover_marginal_costs(J, cell);

    std::map<std::string, bool> seen_plant;
    std::size_t block_i = 0;
    std::map<std::string, std::vector<Eigen::Index>> blocks;
    for (Eigen::Index j = 0; j < cell.share.size(); ++j) {
      blocks[cell.plant[static_cast<std::size_t>(j)]].push_back(j);
    }
    for (const auto& [plant, idx] : blocks) {
      (void)idx;
      result.blocks.push_back({plant, cell.market3, cell.year, mr.block_residual[block_i]});
      ++block_i;
    }

    for (Eigen::Index j = 0; j < cell.share.size(); ++j) {
      const auto& srow = shares.rows[static_cast<std::size_t>(cell.obs_index[static_cast<std::size_t>(j)])];
      CostAllocation a;
      a.plant_id = srow.plant_id;
      a.year = srow.year;
      a.product = srow.product;
      a.mc = mr.mc[j];
      a.lerner = mr.lerner[j];
      a.flagged = !(mr.lerner[j] > 0.0 && mr.lerner[j] < 1.0);
      a.S = 0.0;  // filled below
      by_plant_year[{a.plant_id, a.year}].push_back(result.rows.size());
      result.rows.push_back(std::move(a));
    }
  }

  // quantities for Eq. (2)
  std::map<std::tuple<std::string, int, std::string>, double> qty;
  for (const auto& o : panel.observations) qty[{o.plant_id, o.year, o.product.code5}] = o.quantity;

  for (auto& [key, rows] : by_plant_year) {
    (void)key;
    Eigen::VectorXd mc(static_cast<Eigen::Index>(rows.size()));
    Eigen::VectorXd q(static_cast<Eigen::Index>(rows.size()));
    bool usable = true;
    for (std::size_t a = 0; a < rows.size(); ++a) {
      const auto& r = result.rows[rows[a]];
      mc[static_cast<Eigen::Index>(a)] = r.mc;
      q[static_cast<Eigen::Index>(a)] = qty.at({r.plant_id, r.year, r.product.code5});
      if (!(r.mc > 0.0)) usable = false;
    }
    if (!usable) {
      // A markup outside (0,1) somewhere in the plant-year; Eq. (2) shares
      // are undefined, so the whole plant-year is flagged with missing S.
      for (std::size_t a = 0; a < rows.size(); ++a) {
        result.rows[rows[a]].S = std::numeric_limits<double>::quiet_NaN();
        result.rows[rows[a]].flagged = true;
      }
      continue;
    }
    Eigen::VectorXd S = input_allocation_shares(mc, q);
    for (std::size_t a = 0; a < rows.size(); ++a) {
      result.rows[rows[a]].S = S[static_cast<Eigen::Index>(a)];
    }
  }

  std::sort(result.rows.begin(), result.rows.end(),
            [](const CostAllocation& a, const CostAllocation& b) {
              return std::tie(a.plant_id, a.year, a.product.code5) <
                     std::tie(b.plant_id, b.year, b.product.code5);
            });
  std::sort(result.blocks.begin(), result.blocks.end(),
            [](const BlockDiagnostic& a, const BlockDiagnostic& b) {
              return std::tie(a.plant_id, a.market3, a.year) <
                     std::tie(b.plant_id, b.market3, b.year);
            });
  return result;
}

std::string allocations_to_csv(const std::vector<CostAllocation>& rows) {
  std::vector<std::vector<std::string>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back({r.plant_id, fmt_int(r.year), r.product.code5, fmt_double(r.mc),
                   fmt_double(r.lerner), fmt_double(r.S), r.flagged ? "1" : "0"});
  }
  return csv_to_string({"plant_id", "year", "product_code", "mc", "lerner", "S", "flag"}, out);
}

}  // namespace prodloom
