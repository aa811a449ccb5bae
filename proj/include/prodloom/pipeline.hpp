#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prodloom/conduct.hpp"
#include "prodloom/demand.hpp"
#include "prodloom/instruments.hpp"
#include "prodloom/outcomes.hpp"
#include "prodloom/panel.hpp"
#include "prodloom/production.hpp"
#include "prodloom/shares.hpp"

namespace prodloom {

struct PipelineConfig {
  double tau = 0.3;
  MarketSizeRule market_size;
  IvConfig iv;
  DemandSpec demand;
  MomentSpec gmm;
  bool purchase_shares_pooled = false;
  bool probit_at_means = true;
  // fixes (alpha, sigma) instead of estimating them
  std::optional<std::pair<double, double>> calibrate;

  std::string hash() const;  // stable digest of every knob above
};

struct PipelineResult {
  double tau = 0.3;
  InstrumentTable instruments;
  ShareTable shares;

  std::optional<DemandEstimate> demand;  // present in estimate mode
  double alpha = 0.0;                    // parameters used downstream
  double sigma = 0.0;
  double F_p = 0.0;
  double F_rs = 0.0;
  int n_obs = 0;
  bool admissible = false;

  // downstream stages, only run on admissible demand
  std::optional<AllocationResult> allocations;
  std::optional<ProductInputTable> product_inputs;
  std::optional<ProductionEstimate> production;
  std::vector<TfprRow> tfpr;
  std::vector<GainBounds> gains;
  std::optional<ProbitFit> probit;
  std::optional<MarginalEffect> me;

  std::string note;  // first downstream failure, empty when clean
};

PipelineResult run_pipeline(const Panel& panel, const PipelineConfig& config);

// Closure for block_bootstrap: re-runs the pipeline on a resampled panel and
// returns (beta_L, beta_K, beta_M). The optional pair carries a fixed
// (alpha, sigma); when absent the demand stage is re-estimated (or the
// config's calibration used).
PipelineClosure make_production_closure(const PipelineConfig& config);

}  // namespace prodloom
