#include "prodloom/pipeline.hpp"

#include <sstream>

#include "prodloom/regress.hpp"

namespace prodloom {

std::string PipelineConfig::hash() const {
  std::ostringstream s;
  s << "tau=" << fmt_double(tau) << ";kappa=" << fmt_double(market_size.kappa);
  for (const auto& [key, v] : market_size.explicit_size) {
    s << ";ms:" << key.first << ":" << key.second << "=" << fmt_double(v);
  }
  s
    << ";iv_ref=" << (iv.reference == IvConfig::Reference::SingleProduct ? "single" : "nonmach")
    << ";iv_min=" << iv.min_contributors << ";iv_vw=" << iv.value_weighted
    << ";fe_year=" << demand.fe_year << ";fe_market=" << demand.fe_market
    << ";fe_nest=" << demand.fe_nest << ";fe_my=" << demand.fe_market_year << ";zlag=" << demand.use_lag_instrument
    << ";zcount=" << demand.nest_count_instrument << ";extras=" << demand.extra_controls.size()
    << ";preset=" << preset_name(gmm.preset) << ";const=" << gmm.include_constant
    << ";pooled=" << purchase_shares_pooled << ";at_means=" << probit_at_means;
  if (calibrate) {
    s << ";cal_a=" << fmt_double(calibrate->first) << ";cal_s=" << fmt_double(calibrate->second);
  }
  return hash_hex(fnv1a(s.str()));
}

PipelineResult run_pipeline(const Panel& panel, const PipelineConfig& config) {
  PipelineResult res;
  res.tau = config.tau;

  auto pshares =
      compute_purchase_shares(panel.purchases, panel.sector_tags, config.purchase_shares_pooled);
  auto retained = filter_input_codes(pshares, config.tau);
  res.instruments = build_price_growth_iv(panel, retained, config.iv);
  res.shares = compute_revenue_shares(panel, config.market_size);

  if (config.calibrate) {
    double a = config.calibrate->first, s = config.calibrate->second;
    if (!(a > 0.0) || !(s > 0.0) || !(s < 1.0)) {
      throw Error(ErrorKind::Config, "calibrated demand parameters must be admissible: alpha=" +
                                         fmt_double(a) + " sigma=" + fmt_double(s));
    }
    res.alpha = a;
    res.sigma = s;
    res.admissible = true;
    // the sample and instrument strength still vary with tau
    IvDesign d = assemble_demand_design(res.shares, res.instruments, config.demand);
    res.n_obs = static_cast<int>(d.y.size());
    if (res.n_obs > 0 && d.Z.cols() >= 2) {
      Eigen::MatrixXd all(d.y.size(), 2 + d.Z.cols());
      all.leftCols(2) = d.X;
      all.rightCols(d.Z.cols()) = d.Z;
      demean_by_groups(all, d.fe_groups);
      try {
        auto fs = sw_first_stage_f(all.leftCols(2), all.rightCols(d.Z.cols()));
        res.F_p = fs[0];
        res.F_rs = fs[1];
      } catch (const Error&) {
        res.F_p = res.F_rs = 0.0;
      }
    }
  } else {
    res.demand = estimate_demand_2sls(res.shares, res.instruments, config.demand);
    res.alpha = res.demand->alpha;
    res.sigma = res.demand->sigma;
    res.F_p = res.demand->F_p;
    res.F_rs = res.demand->F_rs;
    res.n_obs = res.demand->n_obs;
    res.admissible = res.demand->admissible;
  }

  if (!res.admissible) return res;

  try {
    res.allocations = compute_cost_allocations(panel, res.shares, res.alpha, res.sigma);
    res.product_inputs = build_product_inputs(panel, res.allocations->rows, res.instruments);
    res.production = estimate_gmm(*res.product_inputs, config.gmm);
    res.tfpr = compute_tfpr(*res.product_inputs, res.production->beta_L, res.production->beta_K,
                            res.production->beta_M);
    res.gains = efficiency_gain_bounds(res.tfpr, res.allocations->rows);
    res.probit = probit_product_drop(panel, res.tfpr);
    res.me = marginal_effect_1sd(*res.probit, config.probit_at_means);
  } catch (const Error& e) {
    res.note = std::string(error_kind_name(e.kind())) + ": " + e.what();
  }
  return res;
}

PipelineClosure make_production_closure(const PipelineConfig& config) {
  return [config](const Panel& panel, const std::optional<std::pair<double, double>>& draw)
             -> std::optional<std::vector<double>> {
    PipelineConfig cfg = config;
    if (draw) cfg.calibrate = draw;
    PipelineResult r = run_pipeline(panel, cfg);
    if (!r.admissible || !r.production) return std::nullopt;
    return std::vector<double>{r.production->beta_L, r.production->beta_K, r.production->beta_M};
  };
}

}  // namespace prodloom
