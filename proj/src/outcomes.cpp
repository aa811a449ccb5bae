#include "prodloom/outcomes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>
#include <set>

#include "prodloom/csv.hpp"
#include "prodloom/regress.hpp"

namespace prodloom {

static double norm_cdf(double x) { return 0.5 * std::erfc(-x / 1.4142135623730950488); }
static double norm_pdf(double x) { return std::exp(-0.5 * x * x) / 2.5066282746310005024; }

std::vector<TfprRow> compute_tfpr(const ProductInputTable& inputs, double beta_L, double beta_K,
                                  double beta_M) {
  if (!std::isfinite(beta_L) || !std::isfinite(beta_K) || !std::isfinite(beta_M)) {
    throw Error(ErrorKind::Config, "TFPR requires finite production coefficients");
  }
  std::vector<TfprRow> rows;
  rows.reserve(inputs.rows.size());
  for (const auto& r : inputs.rows) {
    TfprRow t;
    t.plant_id = r.plant_id;
    t.year = r.year;
    t.product = r.product;
    t.tfpr = r.log_revenue - beta_L * r.l - beta_K * r.k - beta_M * r.m;
    rows.push_back(std::move(t));
  }
  // standardize over the estimation sample (sample sd, n-1)
  const double n = static_cast<double>(rows.size());
  if (n >= 2.0) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r.tfpr;
    mean /= n;
    double var = 0.0;
    for (const auto& r : rows) var += (r.tfpr - mean) * (r.tfpr - mean);
    var /= (n - 1.0);
    double sd = std::sqrt(var);
    for (auto& r : rows) r.tfpr_z = sd > 0.0 ? (r.tfpr - mean) / sd : 0.0;
  }
  return rows;
}

std::vector<GainBounds> efficiency_gain_bounds(const std::vector<TfprRow>& tfpr,
                                               const std::vector<CostAllocation>& allocations) {
  std::map<std::tuple<std::string, int, std::string>, double> S;
  for (const auto& a : allocations) S[{a.plant_id, a.year, a.product.code5}] = a.S;

  std::map<std::pair<std::string, int>, std::vector<const TfprRow*>> groups;
  for (const auto& r : tfpr) groups[{r.plant_id, r.year}].push_back(&r);

  std::vector<GainBounds> out;
  for (const auto& [key, rows] : groups) {
    const int n = static_cast<int>(rows.size());
    if (n < 2 || n > 10) continue;
    bool ok = true;
    std::vector<double> share(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
      auto it = S.find({rows[j]->plant_id, rows[j]->year, rows[j]->product.code5});
      if (it == S.end() || !std::isfinite(it->second)) {
        ok = false;
        break;
      }
      share[j] = it->second;
    }
    if (!ok) continue;

    std::size_t worst = 0, best_other = rows.size();
    for (std::size_t j = 1; j < rows.size(); ++j) {
      if (rows[j]->tfpr < rows[worst]->tfpr) worst = j;
    }
    double omega = 0.0, omega_rest = 0.0, best_tfpr = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < rows.size(); ++j) {
      double term = share[j] * std::exp(rows[j]->tfpr);
      omega += term;
      if (j != worst) {
        omega_rest += term;
        if (rows[j]->tfpr > best_tfpr) {
          best_tfpr = rows[j]->tfpr;
          best_other = j;
        }
      }
    }
    (void)best_other;
    double w = share[worst];
    double omega_lower = omega_rest / (1.0 - w);
    double omega_upper = omega_rest + w * std::exp(best_tfpr);

    GainBounds g;
    g.plant_id = key.first;
    g.year = key.second;
    g.n_products = n;
    g.gain_lower = 100.0 * (omega_lower / omega - 1.0);
    g.gain_upper = 100.0 * (omega_upper / omega - 1.0);
    out.push_back(std::move(g));
  }
  return out;
}

ProbitResult probit_mle(const Eigen::MatrixXd& X_raw, const Eigen::VectorXd& y,
                        const std::vector<int>& cluster, const std::vector<std::string>& names,
                        int max_iter, double grad_tol) {
  const Eigen::Index n = X_raw.rows(), k = X_raw.cols();
  double ybar = y.mean();
  if (ybar <= 0.0 || ybar >= 1.0) {
    throw Error(ErrorKind::Separation, "degenerate outcome: all " +
                                           std::string(ybar <= 0.0 ? "zero" : "one") +
                                           "; probit undefined");
  }

  // Standardize non-binary covariates so Newton works on a well-conditioned
  // problem; coefficients and the vcov are mapped back at the end.
  Eigen::MatrixXd X = X_raw;
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(k), scale = Eigen::VectorXd::Ones(k);
  int const_col = -1;
  for (Eigen::Index c = 0; c < k && const_col < 0; ++c) {
    if (X.col(c).minCoeff() == X.col(c).maxCoeff() && X(0, c) != 0.0) const_col = static_cast<int>(c);
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (static_cast<int>(c) == const_col) continue;
    bool binary = true;
    for (Eigen::Index i = 0; i < n && binary; ++i) {
      binary = X(i, c) == 0.0 || X(i, c) == 1.0;
    }
    if (binary) continue;
    double mean = X.col(c).mean();
    double sd = std::sqrt((X.col(c).array() - mean).square().sum() / std::max(1.0, double(n - 1)));
    if (sd > 0.0) {
      scale[c] = sd;
      if (const_col >= 0) shift[c] = mean;  // means need a constant to absorb them
      X.col(c) = (X.col(c).array() - shift[c]) / sd;
    }
  }

  auto loglik_grad = [&](const Eigen::VectorXd& beta, Eigen::VectorXd* grad,
                         Eigen::MatrixXd* hess, Eigen::VectorXd* score_scale) {
    double ll = 0.0;
    if (grad) grad->setZero(k);
    if (hess) hess->setZero(k, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      double zi = X.row(i).dot(beta);
      double Phi = norm_cdf(zi);
      Phi = std::min(std::max(Phi, 1e-300), 1.0 - 1e-16);
      double phi = norm_pdf(zi);
      ll += y[i] > 0.5 ? std::log(Phi) : std::log(1.0 - Phi);
      double lambda = y[i] > 0.5 ? phi / Phi : -phi / (1.0 - Phi);
      if (score_scale) (*score_scale)[i] = lambda;
      if (grad) *grad += lambda * X.row(i).transpose();
      if (hess) *hess -= lambda * (lambda + zi) * (X.row(i).transpose() * X.row(i));
    }
    return ll;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd grad(k);
  Eigen::MatrixXd hess(k, k);
  double ll = loglik_grad(beta, &grad, &hess, nullptr);
  // accepted steps must not decrease the log-likelihood beyond rounding
  const double ll_slack = 1e-12 * (1.0 + std::abs(ll));
  std::vector<double> trace = {ll};
  int it = 0;
  for (; it < max_iter; ++it) {
    if (grad.cwiseAbs().maxCoeff() < grad_tol) break;
    Eigen::VectorXd step = (-hess).ldlt().solve(grad);
    double scale = 1.0;
    double ll_new = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd beta_new;
    for (int half = 0; half < 60; ++half) {
      beta_new = beta + scale * step;
      ll_new = loglik_grad(beta_new, nullptr, nullptr, nullptr);
      if (ll_new >= ll - ll_slack) break;
      scale *= 0.5;
    }
    if (!(ll_new >= ll - ll_slack)) {
      throw Error(ErrorKind::Convergence,
                  "probit step failed to improve the log-likelihood at iteration " + fmt_int(it));
    }
    beta = beta_new;
    ll = loglik_grad(beta, &grad, &hess, nullptr);
    trace.push_back(ll);
    if (beta.cwiseAbs().maxCoeff() > 1e4) {
      Eigen::Index worst = 0;
      beta.cwiseAbs().maxCoeff(&worst);
      throw Error(ErrorKind::Separation, "separation: coefficient on '" +
                                             names[static_cast<std::size_t>(worst)] +
                                             "' diverging (perfect prediction)");
    }
  }
  if (grad.cwiseAbs().maxCoeff() >= grad_tol) {
    std::string tail;
    for (std::size_t s = trace.size() > 6 ? trace.size() - 6 : 0; s < trace.size(); ++s) {
      tail += (tail.empty() ? "" : ", ") + fmt_double(trace[s]);
    }
    throw Error(ErrorKind::Convergence,
                "probit did not converge in " + fmt_int(max_iter) +
                    " iterations; gradient sup-norm " + fmt_double(grad.cwiseAbs().maxCoeff()) +
                    "; log-likelihood trace tail: " + tail);
  }

  // cluster-robust sandwich: H^-1 (sum_c g_c g_c') H^-1
  Eigen::VectorXd lambda(n);
  loglik_grad(beta, &grad, &hess, &lambda);
  Eigen::MatrixXd Hinv = (-hess).inverse();
  Eigen::MatrixXd meat = cluster_meat(X, lambda, cluster);
  Eigen::MatrixXd V = Hinv * meat * Hinv.transpose();
  make_psd(V);

  // map back to the raw covariate scale: beta_raw = T beta_std
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    T(c, c) = 1.0 / scale[c];
    if (const_col >= 0 && c != const_col) T(const_col, c) = -shift[c] / scale[c];
  }
  ProbitResult res;
  res.names = names;
  res.beta = T * beta;
  res.vcov = T * V * T.transpose();
  res.loglik = ll;
  res.iterations = it;
  res.n_obs = static_cast<int>(n);
  res.loglik_trace = std::move(trace);
  return res;
}

ProbitFit probit_product_drop(const Panel& panel, const std::vector<TfprRow>& tfpr) {
  // products present per (plant, year); plant survival = any observation at t+1
  std::set<std::tuple<std::string, int, std::string>> present;
  std::set<std::pair<std::string, int>> plant_year;
  std::map<std::pair<std::string, int>, double> plant_revenue;
  for (const auto& o : panel.observations) {
    present.insert({o.plant_id, o.year, o.product.code5});
    plant_year.insert({o.plant_id, o.year});
    plant_revenue[{o.plant_id, o.year}] += o.revenue;
  }

  std::vector<const TfprRow*> rows;
  std::vector<double> outcome;
  for (const auto& r : tfpr) {
    if (!plant_year.count({r.plant_id, r.year + 1})) continue;  // plant exit: not a drop
    rows.push_back(&r);
    outcome.push_back(present.count({r.plant_id, r.year + 1, r.product.code5}) ? 0.0 : 1.0);
  }
  if (rows.size() < 8) {
    throw Error(ErrorKind::Identification,
                "probit sample too small: " + fmt_int(static_cast<long long>(rows.size())));
  }

  std::set<int> years;
  for (const auto* r : rows) years.insert(r->year);
  std::vector<int> year_list(years.begin(), years.end());
  // drop the first year as the reference category
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index k = 4 + static_cast<Eigen::Index>(year_list.size()) - 1;
  Eigen::MatrixXd X(n, k);
  Eigen::VectorXd y(n);
  std::vector<int> cluster(rows.size());
  std::vector<std::string> names = {"const", "tfpr_z", "log_plant_revenue", "n_products"};
  for (std::size_t j = 1; j < year_list.size(); ++j) {
    names.push_back("year_" + fmt_int(year_list[j]));
  }
  std::map<std::string, int> plant_ids;
  for (Eigen::Index i = 0; i < n; ++i) {
    const TfprRow& r = *rows[static_cast<std::size_t>(i)];
    y[i] = outcome[static_cast<std::size_t>(i)];
    X(i, 0) = 1.0;
    X(i, 1) = r.tfpr_z;
    X(i, 2) = std::log(plant_revenue.at({r.plant_id, r.year}));
    X(i, 3) = static_cast<double>(panel.product_count(r.plant_id, r.year));
    for (std::size_t j = 1; j < year_list.size(); ++j) {
      X(i, 3 + static_cast<Eigen::Index>(j)) = r.year == year_list[j] ? 1.0 : 0.0;
    }
    cluster[static_cast<std::size_t>(i)] =
        plant_ids.emplace(r.plant_id, static_cast<int>(plant_ids.size())).first->second;
  }

  ProbitFit fit;
  fit.result = probit_mle(X, y, cluster, names);
  fit.x_mean = X.colwise().mean();
  fit.X = std::move(X);
  fit.y = std::move(y);
  fit.tfpr_col = 1;
  return fit;
}

MarginalEffect marginal_effect_1sd(const ProbitFit& fit, bool at_means) {
  const Eigen::VectorXd& beta = fit.result.beta;
  const int tc = fit.tfpr_col;

  // me(beta) in percentage points and its gradient for the delta method
  auto me_and_grad = [&](Eigen::VectorXd* grad) {
    double me = 0.0;
    if (grad) grad->setZero(beta.size());
    auto accumulate = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd x_low = x;
      x_low[tc] -= 1.0;
      double z0 = x.dot(beta), z1 = x_low.dot(beta);
      me += 100.0 * (norm_cdf(z1) - norm_cdf(z0));
      if (grad) *grad += 100.0 * (norm_pdf(z1) * x_low - norm_pdf(z0) * x);
    };
    if (at_means) {
      accumulate(fit.x_mean);
    } else {
      for (Eigen::Index i = 0; i < fit.X.rows(); ++i) {
        accumulate(fit.X.row(i).transpose());
      }
      me /= static_cast<double>(fit.X.rows());
      if (grad) *grad /= static_cast<double>(fit.X.rows());
    }
    return me;
  };

  Eigen::VectorXd grad;
  MarginalEffect out;
  out.me = me_and_grad(&grad);
  out.se = std::sqrt(std::max(0.0, grad.dot(fit.result.vcov * grad)));
  return out;
}

std::string tfpr_to_csv(const std::vector<TfprRow>& rows, const std::string& spec_hash) {
  std::vector<std::vector<std::string>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back({r.plant_id, fmt_int(r.year), r.product.code5, fmt_double(r.tfpr),
                   fmt_double(r.tfpr_z), spec_hash});
  }
  return csv_to_string({"plant_id", "year", "product_code", "tfpr", "tfpr_z", "spec_hash"}, out);
}

std::string gains_to_csv(const std::vector<GainBounds>& rows, const std::string& spec_hash) {
  std::vector<std::vector<std::string>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back({r.plant_id, fmt_int(r.year), fmt_double(r.gain_lower),
                   fmt_double(r.gain_upper), fmt_int(r.n_products), spec_hash});
  }
  return csv_to_string({"plant_id", "year", "gain_lower", "gain_upper", "n_products", "spec_hash"},
                       out);
}

std::string probit_to_csv(const ProbitFit& fit, const MarginalEffect& me,
                          const std::string& spec_hash) {
  std::vector<std::vector<std::string>> out;
  for (Eigen::Index i = 0; i < fit.result.beta.size(); ++i) {
    out.push_back({fit.result.names[static_cast<std::size_t>(i)], fmt_double(fit.result.beta[i]),
                   fmt_double(std::sqrt(std::max(0.0, fit.result.vcov(i, i)))), "", spec_hash});
  }
  out.push_back({"me_1sd", fmt_double(me.me), fmt_double(me.se), "pp", spec_hash});
  return csv_to_string({"term", "estimate", "se", "unit", "spec_hash"}, out);
}

}  // namespace prodloom
