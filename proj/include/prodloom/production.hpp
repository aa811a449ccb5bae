#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prodloom/conduct.hpp"
#include "prodloom/instruments.hpp"
#include "prodloom/panel.hpp"

namespace prodloom {

struct ProductInputRow {
  std::string plant_id;
  int year = 0;
  ProductCode product;
  double y = 0.0;            // ln quantity
  double log_revenue = 0.0;  // ln revenue, for TFPR
  double l = 0.0;            // ln(S * L_it)
  double k = 0.0;            // ln(S * K_it)
  double m = 0.0;            // ln(S * M_it)
  double S = 0.0;
  std::optional<double> m_lag;  // m at t-1 for the same plant-product
  std::optional<double> z_t;    // nest instrument at t
  std::optional<double> z_lag;  // nest instrument at t-1
};

struct ProductInputTable {
  std::vector<ProductInputRow> rows;
  int skipped_flagged = 0;  // plant-years with undefined allocation shares
};

ProductInputTable build_product_inputs(const Panel& panel,
                                       const std::vector<CostAllocation>& allocations,
                                       const InstrumentTable& instruments);

struct MomentSpec {
  // Instrument menus per the three GMM presets:
  //   Col1: l, k self-instrumenting; m_{t-1}; Z_t, Z_{t-1}
  //   Col2: l, k self-instrumenting; m_{t-1}
  //   Col3: l, k self-instrumenting; Z_t, Z_{t-1}
  enum class Preset { Col1, Col2, Col3 };
  Preset preset = Preset::Col3;
  bool include_constant = true;
};

const char* preset_name(MomentSpec::Preset p);

struct ProductionEstimate {
  double beta_L = 0.0;
  double beta_K = 0.0;
  double beta_M = 0.0;
  Eigen::VectorXd coef;  // l, k, m, then constant when included
  std::vector<std::string> coef_names;
  Eigen::MatrixXd vcov_analytic;
  std::vector<double> se_bootstrap;  // empty until block_bootstrap fills it
  double J_stat = 0.0;               // overidentification statistic
  int J_dof = 0;
  int n_obs = 0;
  double ridge_eps = 0.0;  // weighting-matrix repair magnitude, 0 when clean
};

ProductionEstimate estimate_gmm(const ProductInputTable& data, const MomentSpec& spec);

// Objective (Z'u)' W (Z'u) at an arbitrary beta, for optimality probes.
double gmm_objective(const ProductInputTable& data, const MomentSpec& spec,
                     const Eigen::VectorXd& beta);

enum class BootstrapMode { Nonparametric, SemiParametric };

// Re-estimates the pipeline on a plant resample. Returns the parameter
// vector, or nullopt when the replication fails. The optional argument
// carries the (alpha, sigma) draw in semi-parametric mode.
using PipelineClosure =
    std::function<std::optional<std::vector<double>>(const Panel&,
                                                     const std::optional<std::pair<double, double>>&)>;

struct BootstrapSpec {
  int B = 1000;
  std::uint64_t seed = 0;
  BootstrapMode mode = BootstrapMode::Nonparametric;
  double max_failure_frac = 0.2;
  unsigned jobs = 1;
};

// Demand-parameter sampling input for semi-parametric mode.
struct DemandDraw {
  double alpha = 0.0;
  double sigma = 0.0;
  Eigen::Matrix2d vcov;  // of (coef_p, coef_rs_within)
};

struct BootstrapResult {
  std::vector<std::string> param_names;
  std::vector<double> se;
  // (replication index, parameter values) for successful replications
  std::vector<std::pair<int, std::vector<double>>> draws;
  int n_failed = 0;
};

BootstrapResult block_bootstrap(const Panel& panel, const PipelineClosure& pipeline,
                                const std::vector<std::string>& param_names,
                                const BootstrapSpec& spec,
                                const std::optional<DemandDraw>& demand = std::nullopt);

// Resample plants with replacement; draw d of a plant re-enters as a new
// pseudo-plant id so block structure is preserved.
Panel resample_plants(const Panel& panel, std::uint64_t seed);

std::string production_estimate_to_csv(const ProductionEstimate& est, const std::string& preset,
                                       const std::string& spec_hash);
std::string bootstrap_draws_to_csv(const BootstrapResult& result);

}  // namespace prodloom
