#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prodloom/instruments.hpp"
#include "prodloom/shares.hpp"

namespace prodloom {

struct DemandSpec {
  // fixed effects absorbed by within-transformation
  bool fe_year = true;
  bool fe_market = true;
  bool fe_nest = false;         // 5-digit nest dummies instead of market dummies
  bool fe_market_year = false;  // replaces the additive pair when set

  bool use_lag_instrument = true;      // Z_{t-1} alongside Z_t
  bool nest_count_instrument = false;  // optional extra: products in the nest

  // extra exogenous controls, aligned with ShareTable rows
  std::vector<std::string> extra_control_names;
  std::vector<std::vector<double>> extra_controls;
};

// Assembled regression matrices after the instrument join, before any
// transformation. Row i of every matrix refers to share_rows[i].
struct IvDesign {
  Eigen::VectorXd y;        // rs_j - rs_0
  Eigen::MatrixXd X;        // endogenous: [p, rs_within]
  Eigen::MatrixXd Z;        // excluded instruments
  Eigen::MatrixXd W;        // extra exogenous controls (may have 0 columns)
  std::vector<std::string> z_names;
  std::vector<std::vector<int>> fe_groups;
  std::vector<int> cluster_plant;
  std::vector<int> cluster_product;
  std::vector<int> share_rows;  // indices into ShareTable.rows
};

IvDesign assemble_demand_design(const ShareTable& shares, const InstrumentTable& instruments,
                                const DemandSpec& spec);

struct DemandEstimate {
  double alpha = 0.0;            // price coefficient, reported as -coef(p)
  double one_minus_sigma = 0.0;  // coefficient on rs_within
  double sigma = 0.0;
  Eigen::MatrixXd vcov;  // coefficient order: p, rs_within, then extras
  double se_alpha = 0.0;
  double se_sigma = 0.0;
  double F_p = 0.0;
  double F_rs = 0.0;
  int n_obs = 0;
  bool admissible = false;
  bool vcov_repaired = false;
  double r_squared = 0.0;
  Eigen::VectorXd residual;     // structural residual eta, within-transformed scale
  std::vector<int> share_rows;  // rows of the ShareTable used
  std::vector<double> extra_coef;
};

DemandEstimate estimate_demand_2sls(const ShareTable& shares, const InstrumentTable& instruments,
                                    const DemandSpec& spec);

// Sanderson-Windmeijer conditional first-stage F statistics, one per
// endogenous column. The design must already be within-transformed and have
// controls partialled out.
std::vector<double> sw_first_stage_f(const Eigen::MatrixXd& X_endog, const Eigen::MatrixXd& Z);

bool check_admissibility(const DemandEstimate& est);

std::string demand_estimate_to_csv(const DemandEstimate& est, double tau,
                                   const std::string& spec_hash);

}  // namespace prodloom
