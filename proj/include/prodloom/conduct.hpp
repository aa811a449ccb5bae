#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prodloom/panel.hpp"
#include "prodloom/shares.hpp"

namespace prodloom {

// Inside products of one market-year cell, in a fixed order.
struct MarketCell {
  std::string market3;
  int year = 0;
  std::vector<int> obs_index;        // into the source ShareTable rows
  std::vector<std::string> plant;    // owner of each product
  std::vector<int> nest;             // dense nest id within the cell
  Eigen::VectorXd share;             // revenue market share s_j
  Eigen::VectorXd share_within;      // within-nest share s_{j|g}
  Eigen::VectorXd price;             // price level P_j
  double outside_share = 0.0;
};

// J(k, j) = d s_j / d p_k, the derivative of the revenue market share of
// product j with respect to the log price of product k.
struct ShareJacobian {
  std::string market3;
  int year = 0;
  Eigen::MatrixXd J;
};

Eigen::MatrixXd share_derivatives(double alpha, double sigma, const Eigen::VectorXd& share,
                                  const Eigen::VectorXd& share_within,
                                  const std::vector<int>& nest);

struct CostAllocation {
  std::string plant_id;
  int year = 0;
  ProductCode product;
  double mc = 0.0;
  double lerner = 0.0;
  double S = 0.0;
  bool flagged = false;  // lerner outside (0,1)
};

struct BlockDiagnostic {
  std::string plant_id;
  std::string market3;
  int year = 0;
  double solver_residual = 0.0;
};

struct MarkupResult {
  Eigen::VectorXd lerner;
  Eigen::VectorXd mc;
  std::vector<double> block_residual;  // per plant block, sorted by plant id
};

// Solves the Bertrand-Nash first-order conditions per plant block:
//   (J_F - diag(s_F)) nu = -s_F
// for the Lerner vector nu. `context` tags error messages.
struct LernerResult {
  Eigen::VectorXd lerner;
  std::vector<double> block_residual;
};
LernerResult solve_lerner(const Eigen::MatrixXd& J, const Eigen::VectorXd& share,
                          const std::vector<std::string>& plant, const std::string& context);

// mc_j = P_j (1 - nu_j) on a full market cell.
MarkupResult recover_marginal_costs(const Eigen::MatrixXd& J, const MarketCell& cell);

// S_j = mc_j Y_j / sum_k mc_k Y_k over the products of one plant-year.
Eigen::VectorXd input_allocation_shares(const Eigen::VectorXd& mc, const Eigen::VectorXd& quantity);

struct AllocationResult {
  std::vector<CostAllocation> rows;  // sorted (plant, year, product)
  std::vector<BlockDiagnostic> blocks;
};

// Full conduct stage: build market cells from the share table, invert the
// FOCs at (alpha, sigma), then allocate plant inputs across products.
AllocationResult compute_cost_allocations(const Panel& panel, const ShareTable& shares,
                                          double alpha, double sigma);

std::vector<MarketCell> build_market_cells(const Panel& panel, const ShareTable& shares);

std::string allocations_to_csv(const std::vector<CostAllocation>& rows);

}  // namespace prodloom
