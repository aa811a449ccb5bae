#include "prodloom/demand.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "prodloom/csv.hpp"
#include "prodloom/regress.hpp"

namespace prodloom {

IvDesign assemble_demand_design(const ShareTable& shares, const InstrumentTable& instruments,
                                const DemandSpec& spec) {
  std::map<std::pair<std::string, int>, double> z;
  for (const auto& r : instruments) z[{r.nest5, r.year}] = r.Z;

  std::map<std::pair<std::string, int>, int> nest_count;
  if (spec.nest_count_instrument) {
    for (const auto& r : shares.rows) nest_count[{r.product.nest5(), r.year}] += 1;
  }

  for (const auto& col : spec.extra_controls) {
    if (col.size() != shares.rows.size()) {
      throw Error(ErrorKind::Config,
                  "extra control column length does not match the share table");
    }
  }

  // rows with a complete instrument set
  std::vector<int> keep;
  for (std::size_t i = 0; i < shares.rows.size(); ++i) {
    const auto& r = shares.rows[i];
    if (!z.count({r.product.nest5(), r.year})) continue;
    if (spec.use_lag_instrument && !z.count({r.product.nest5(), r.year - 1})) continue;
    keep.push_back(static_cast<int>(i));
  }

  IvDesign d;
  const Eigen::Index n = static_cast<Eigen::Index>(keep.size());
  int kz = 1 + (spec.use_lag_instrument ? 1 : 0) + (spec.nest_count_instrument ? 1 : 0);
  d.y.resize(n);
  d.X.resize(n, 2);
  d.Z.resize(n, kz);
  d.W.resize(n, static_cast<Eigen::Index>(spec.extra_controls.size()));
  d.z_names.push_back("Z_t");
  if (spec.use_lag_instrument) d.z_names.push_back("Z_t-1");
  if (spec.nest_count_instrument) d.z_names.push_back("nest_count");
  d.share_rows = keep;

  std::map<std::string, int> plant_ids, product_ids, market_ids, year_ids, my_ids, nest_ids;
  d.cluster_plant.resize(keep.size());
  d.cluster_product.resize(keep.size());
  std::vector<int> g_year(keep.size()), g_market(keep.size()), g_my(keep.size()),
      g_nest(keep.size());

  for (std::size_t a = 0; a < keep.size(); ++a) {
    const auto& r = shares.rows[static_cast<std::size_t>(keep[a])];
    Eigen::Index i = static_cast<Eigen::Index>(a);
    d.y[i] = r.rs_j - r.rs_0;
    d.X(i, 0) = r.log_price;
    d.X(i, 1) = r.rs_within;
    int c = 0;
    d.Z(i, c++) = z.at({r.product.nest5(), r.year});
    if (spec.use_lag_instrument) d.Z(i, c++) = z.at({r.product.nest5(), r.year - 1});
    if (spec.nest_count_instrument) {
      d.Z(i, c++) = static_cast<double>(nest_count.at({r.product.nest5(), r.year}));
    }
    for (std::size_t w = 0; w < spec.extra_controls.size(); ++w) {
      d.W(i, static_cast<Eigen::Index>(w)) = spec.extra_controls[w][static_cast<std::size_t>(keep[a])];
    }
    auto id = [](std::map<std::string, int>& m, const std::string& k) {
      return m.emplace(k, static_cast<int>(m.size())).first->second;
    };
    d.cluster_plant[a] = id(plant_ids, r.plant_id);
    d.cluster_product[a] = id(product_ids, r.product.code5);
    g_year[a] = id(year_ids, fmt_int(r.year));
    g_market[a] = id(market_ids, r.product.market3());
    g_nest[a] = id(nest_ids, r.product.nest5());
    g_my[a] = id(my_ids, r.product.market3() + "|" + fmt_int(r.year));
  }

  if (spec.fe_market_year) {
    d.fe_groups.push_back(std::move(g_my));
  } else {
    if (spec.fe_year) d.fe_groups.push_back(std::move(g_year));
    if (spec.fe_nest) {
      d.fe_groups.push_back(std::move(g_nest));
    } else if (spec.fe_market) {
      d.fe_groups.push_back(std::move(g_market));
    }
  }
  return d;
}

std::vector<double> sw_first_stage_f(const Eigen::MatrixXd& X_endog, const Eigen::MatrixXd& Z) {
  const Eigen::Index n = X_endog.rows();
  const int n_endog = static_cast<int>(X_endog.cols());
  const int kz = static_cast<int>(Z.cols());
  if (n_endog < 1 || kz < 1) {
    throw Error(ErrorKind::Identification, "SW F requires endogenous regressors and instruments");
  }
  double num_dof = static_cast<double>(kz - n_endog + 1);
  if (num_dof <= 0.0) {
    throw Error(ErrorKind::UndefinedStatistic,
                "SW degrees-of-freedom correction non-positive: k_excluded - n_endog + 1 = " +
                    fmt_int(kz - n_endog + 1));
  }
  double den_dof = static_cast<double>(n) - static_cast<double>(kz) -
                   static_cast<double>(n_endog - 1);

  std::vector<double> out;
  for (int e = 0; e < n_endog; ++e) {
    Eigen::VectorXd xe = X_endog.col(e);
    Eigen::VectorXd xt = xe;
    if (n_endog > 1) {
      // project the other endogenous variables on the instruments, then
      // partial those fitted values out of x_e
      Eigen::MatrixXd others(n, n_endog - 1);
      int c = 0;
      for (int o = 0; o < n_endog; ++o) {
        if (o != e) others.col(c++) = X_endog.col(o);
      }
      Eigen::MatrixXd fitted = others - residualize(others, Z);
      xt = residualize(xe, fitted).col(0);
    }
    out.push_back(f_statistic(xt, Z, num_dof, den_dof));
  }
  return out;
}

DemandEstimate estimate_demand_2sls(const ShareTable& shares, const InstrumentTable& instruments,
                                    const DemandSpec& spec) {
  IvDesign d = assemble_demand_design(shares, instruments, spec);
  const Eigen::Index n = d.y.size();
  const int n_endog = 2;
  if (d.Z.cols() < n_endog) {
    throw Error(ErrorKind::Identification,
                "fewer excluded instruments (" + fmt_int(d.Z.cols()) + ") than endogenous regressors (2)");
  }
  if (n < d.Z.cols() + d.W.cols() + 4) {
    throw Error(ErrorKind::Identification,
                "estimation sample too small: " + fmt_int(n) + " rows after the instrument join");
  }

  // within-transform everything jointly, then partial out extra controls
  Eigen::MatrixXd all(n, 1 + n_endog + d.Z.cols() + d.W.cols());
  all.col(0) = d.y;
  all.middleCols(1, n_endog) = d.X;
  all.middleCols(1 + n_endog, d.Z.cols()) = d.Z;
  if (d.W.cols() > 0) all.rightCols(d.W.cols()) = d.W;
  demean_by_groups(all, d.fe_groups);

  Eigen::VectorXd y = all.col(0);
  Eigen::MatrixXd X = all.middleCols(1, n_endog);
  Eigen::MatrixXd Z = all.middleCols(1 + n_endog, d.Z.cols());
  Eigen::MatrixXd W = all.rightCols(d.W.cols());

  Eigen::MatrixXd X_full(n, n_endog + W.cols());
  X_full.leftCols(n_endog) = X;
  if (W.cols() > 0) X_full.rightCols(W.cols()) = W;
  Eigen::MatrixXd Z_full(n, Z.cols() + W.cols());
  Z_full.leftCols(Z.cols()) = Z;
  if (W.cols() > 0) Z_full.rightCols(W.cols()) = W;

  std::vector<std::string> xz_names = {"p", "rs_within"};
  for (const auto& nm : spec.extra_control_names) xz_names.push_back(nm);
  {
    std::vector<std::string> zn = d.z_names;
    for (const auto& nm : spec.extra_control_names) zn.push_back(nm);
    if (matrix_rank(Z_full) < Z_full.cols()) {
      auto cols = collinear_columns(Z_full, zn);
      std::string list;
      for (const auto& c : cols) list += (list.empty() ? "" : ", ") + c;
      throw Error(ErrorKind::SingularDesign,
                  "instrument matrix rank-deficient after absorbing fixed effects; collinear: " + list);
    }
  }

  // 2SLS: project the full regressor set on the full instrument set
  Eigen::MatrixXd X_hat = X_full - residualize(X_full, Z_full);
  if (matrix_rank(X_hat) < X_hat.cols()) {
    auto cols = collinear_columns(X_hat, xz_names);
    std::string list;
    for (const auto& c : cols) list += (list.empty() ? "" : ", ") + c;
    throw Error(ErrorKind::SingularDesign,
                "projected regressors rank-deficient after absorbing fixed effects; collinear: " + list);
  }
  Eigen::MatrixXd A = X_hat.transpose() * X_full;
  Eigen::VectorXd beta = A.colPivHouseholderQr().solve(X_hat.transpose() * y);
  Eigen::VectorXd u = y - X_full * beta;

  DemandEstimate est;
  est.alpha = -beta[0];
  est.one_minus_sigma = beta[1];
  est.sigma = 1.0 - beta[1];
  est.n_obs = static_cast<int>(n);
  est.share_rows = d.share_rows;
  est.residual = u;
  for (Eigen::Index c = n_endog; c < beta.size(); ++c) est.extra_coef.push_back(beta[c]);
  double tss = y.squaredNorm();
  est.r_squared = tss > 0.0 ? 1.0 - u.squaredNorm() / tss : 0.0;

  // two-way cluster-robust sandwich: plant + product - intersection
  Eigen::MatrixXd V =
      twoway_cluster_vcov(X_hat, u, A, d.cluster_plant, d.cluster_product, &est.vcov_repaired);
  est.vcov = V;
  est.se_alpha = std::sqrt(std::max(0.0, V(0, 0)));
  est.se_sigma = std::sqrt(std::max(0.0, V(1, 1)));

  // SW first-stage F on the same transformed data, controls partialled out
  Eigen::MatrixXd Xp = W.cols() > 0 ? residualize(X, W) : X;
  Eigen::MatrixXd Zp = W.cols() > 0 ? residualize(Z, W) : Z;
  auto fs = sw_first_stage_f(Xp, Zp);
  est.F_p = fs[0];
  est.F_rs = fs[1];

  est.admissible = check_admissibility(est);
  return est;
}

bool check_admissibility(const DemandEstimate& est) {
  return est.alpha > 0.0 && est.sigma > 0.0 && est.sigma < 1.0;
}

std::string demand_estimate_to_csv(const DemandEstimate& est, double tau,
                                   const std::string& spec_hash) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({fmt_double(tau), fmt_double(est.alpha), fmt_double(est.se_alpha),
                  fmt_double(est.sigma), fmt_double(est.se_sigma),
                  fmt_double(est.one_minus_sigma), fmt_double(est.F_p), fmt_double(est.F_rs),
                  fmt_int(est.n_obs), est.admissible ? "1" : "0", est.vcov_repaired ? "1" : "0",
                  spec_hash});
  return csv_to_string({"tau", "alpha", "se_alpha", "sigma", "se_sigma", "one_minus_sigma", "F_p",
                        "F_rs", "n_obs", "admissible", "vcov_repaired", "spec_hash"},
                       rows);
}

}  // namespace prodloom
