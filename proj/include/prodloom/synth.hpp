#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prodloom/panel.hpp"
#include "prodloom/shares.hpp"

namespace prodloom {

// Closed-form nested logit share map. With mu_j = -alpha p_j + eta_j and
// D_g = sum_{j in g} exp(mu_j / sigma):
//   s_{j|g} = exp(mu_j/sigma) / D_g
//   s_0     = 1 / (1 + sum_g D_g^sigma)
//   s_g     = s_0 D_g^sigma
//   s_j     = s_{j|g} s_g
// which gives ln s_j - ln s_0 = (1-sigma) ln s_{j|g} + mu_j exactly; this is
// the unique system solving that equation together with within-nest
// adding-up, obtained by exponentiating and summing within nests.
struct ShareMapResult {
  Eigen::VectorXd share;         // s_j
  Eigen::VectorXd share_within;  // s_{j|g}
  double outside = 0.0;          // s_0
  Eigen::VectorXd log_share;
  Eigen::VectorXd log_share_within;
  double log_outside = 0.0;
};

ShareMapResult nested_share_map(const Eigen::VectorXd& log_price, const Eigen::VectorXd& appeal,
                                double alpha, double sigma, const std::vector<int>& nest);

// Bertrand-Nash equilibrium log prices for one market cell: the fixed point
// of p = ln mc - ln(1 - nu(p)) with nu solved from the plant-wise FOCs.
struct EquilibriumOptions {
  double tol = 1e-12;     // sup-norm change in log prices
  int max_iter = 10000;
  double damping = 1.0;
};

Eigen::VectorXd solve_price_equilibrium(const Eigen::VectorXd& mc, const Eigen::VectorXd& appeal,
                                        double alpha, double sigma, const std::vector<int>& nest,
                                        const std::vector<std::string>& plant,
                                        const EquilibriumOptions& opts = {});

struct SynthConfig {
  int n_plants = 100;
  int n_years = 6;
  int n_markets = 6;
  int nests_per_market = 8;
  int max_products = 5;        // products per plant uniform on 1..max_products
  double same_market_frac = 0.6;
  double machinery_frac = 0.25;
  double machinery_spread = 0.9;  // cross-nest spread of machinery affinity
  int first_year = 2000;

  double alpha = 0.5;
  double sigma = 0.4;
  double beta_L = 0.6;
  double beta_K = 0.2;
  double beta_M = 0.2;

  double eta_sd = 0.3;         // appeal dispersion
  double endogeneity = 0.0;    // rho: loading of appeal on the plant cost shock
  double omega_sd = 0.12;      // TFPQ dispersion
  double outside_share_target = 0.5;

  // Cost-shock process feeding instruments and marginal costs. The current
  // market-level factor moves every cost in the market together (relevant
  // for prices, cancels within nests); the lagged nest-level factor scales
  // plant cost heterogeneity (moves within-nest share dispersion).
  double market_factor_sd = 0.3;   // h_{m,t}
  double nest_factor_sd = 0.3;     // g_{G,t}
  double cost_load_t = 1.0;        // loading of plant cost on h_{m,t}
  double cost_load_lag = 0.0;      // heterogeneous loading on g_{G,t-1}
  double cost_het_base = 0.7;      // base of the heterogeneous loading
  double cost_het_sd = 0.35;        // plant dispersion of the heterogeneous loading
  double plant_shock_sd = 0.25;
  double factor_price_noise_sd = 0.15;  // factor-specific price noise, breaks L/K/M proportionality
  // Materials prices load on the current factors (h + g), the same movement
  // the purchase-price instruments measure, so Z shifts the materials margin
  // relative to labor and capital.
  double material_price_load = 0.8;
  int codes_per_nest = 3;
  double code_noise_sd = 0.03;      // idiosyncratic input-code price noise
  double purchase_noise_sd = 0.04;  // plant-level purchase unit-value noise
  int basket_extra = 2;             // extra input codes beyond the primary nest's

  double market_size_log_mean = 13.0;
  double market_size_log_sd = 0.25;
  // Exogenous permanent product discontinuation hazard per year.
  double drop_rate = 0.05;
  // Transient participation margin: a non-primary product sits out year t
  // when pi_j + participation_cost_slope * g_{G,t-1} exceeds the cutoff
  // implied by participation_rate. Ties nest size to lagged input costs (a
  // first-order channel from Z_{t-1} into within-nest shares); a zero slope
  // makes presence fully exogenous.
  double participation_rate = 0.8;
  double participation_cost_slope = 2.0;

  std::uint64_t seed = 1;
};

struct TruthRow {
  std::string plant_id;
  int year = 0;
  std::string code5;
  double eta = 0.0;    // structural appeal, Eq. (3) residual
  double omega = 0.0;  // TFPQ
  double mc = 0.0;
  double log_price = 0.0;
  double share = 0.0;
  double share_within = 0.0;
  double outside_share = 0.0;
};

struct SynthTruth {
  std::vector<TruthRow> rows;  // aligned with panel.observations
  double alpha = 0.0;
  double sigma = 0.0;
  double beta_L = 0.0;
  double beta_K = 0.0;
  double beta_M = 0.0;
};

struct SynthData {
  Panel panel;
  SynthTruth truth;
  MarketSizeRule market_size;  // explicit true market sizes
};

SynthData generate_synthetic(const SynthConfig& config);

// Writes outputs.csv, inputs.csv, purchases.csv, market_size.csv, truth.csv,
// truth_params.csv under dir.
void write_synth(const SynthData& data, const std::string& dir);

}  // namespace prodloom
