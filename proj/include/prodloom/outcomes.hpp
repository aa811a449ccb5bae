#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prodloom/conduct.hpp"
#include "prodloom/panel.hpp"
#include "prodloom/production.hpp"

namespace prodloom {

struct TfprRow {
  std::string plant_id;
  int year = 0;
  ProductCode product;
  double tfpr = 0.0;    // ln revenue - beta_L l - beta_K k - beta_M m
  double tfpr_z = 0.0;  // standardized over the estimation sample
};

std::vector<TfprRow> compute_tfpr(const ProductInputTable& inputs, double beta_L, double beta_K,
                                  double beta_M);

struct GainBounds {
  std::string plant_id;
  int year = 0;
  double gain_lower = 0.0;  // percent
  double gain_upper = 0.0;  // percent
  int n_products = 0;
};

// Bounds on the plant-level efficiency gain from dropping the lowest-TFPR
// product, for plants producing 2..10 products. The plant index is
// Omega = sum_j S_j exp(tfpr_j); the lower bound reallocates the dropped
// share proportionally, the upper bound gives it to the best product.
std::vector<GainBounds> efficiency_gain_bounds(const std::vector<TfprRow>& tfpr,
                                               const std::vector<CostAllocation>& allocations);

struct ProbitResult {
  std::vector<std::string> names;
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;  // cluster-robust sandwich by plant
  double loglik = 0.0;
  int iterations = 0;
  int n_obs = 0;
  std::vector<double> loglik_trace;  // per accepted Newton step
};

// Probit fit plus the pieces the marginal-effect computation needs.
struct ProbitFit {
  ProbitResult result;
  Eigen::VectorXd x_mean;   // sample means of the covariates
  Eigen::MatrixXd X;        // design (marginal effects may average over it)
  Eigen::VectorXd y;        // drop outcomes, for independent score checks
  int tfpr_col = 1;         // column of tfpr_z in the design
};

// MLE probit via damped Newton iterations (gradient sup-norm < 1e-10),
// covariates: intercept, tfpr_z, log plant revenue, product count, year
// dummies. Outcome: the product is absent at t+1 while the plant survives.
ProbitFit probit_product_drop(const Panel& panel, const std::vector<TfprRow>& tfpr);

// General probit MLE used by probit_product_drop; exposed for oracle tests.
ProbitResult probit_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const std::vector<int>& cluster, const std::vector<std::string>& names,
                        int max_iter = 200, double grad_tol = 1e-10);

struct MarginalEffect {
  double me = 0.0;  // percentage points
  double se = 0.0;
};

// Effect of a one-standard-deviation *decline* in tfpr_z on the drop
// probability, in percentage points. at_means evaluates at covariate means;
// otherwise the average marginal effect over the sample.
MarginalEffect marginal_effect_1sd(const ProbitFit& fit, bool at_means = true);

std::string tfpr_to_csv(const std::vector<TfprRow>& rows, const std::string& spec_hash);
std::string gains_to_csv(const std::vector<GainBounds>& rows, const std::string& spec_hash);
std::string probit_to_csv(const ProbitFit& fit, const MarginalEffect& me,
                          const std::string& spec_hash);

}  // namespace prodloom
