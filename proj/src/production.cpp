#include "prodloom/production.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "prodloom/csv.hpp"
#include "prodloom/parallel.hpp"
#include "prodloom/regress.hpp"
#include "prodloom/rng.hpp"

namespace prodloom {

ProductInputTable build_product_inputs(const Panel& panel,
                                       const std::vector<CostAllocation>& allocations,
                                       const InstrumentTable& instruments) {
  std::map<std::tuple<std::string, int, std::string>, const CostAllocation*> alloc;
  for (const auto& a : allocations) alloc[{a.plant_id, a.year, a.product.code5}] = &a;
  std::map<std::pair<std::string, int>, double> z;
  for (const auto& r : instruments) z[{r.nest5, r.year}] = r.Z;

  ProductInputTable table;
  std::set<std::pair<std::string, int>> missing, flagged;
  for (const auto& o : panel.observations) {
    auto it = alloc.find({o.plant_id, o.year, o.product.code5});
    if (it == alloc.end()) {
      missing.insert({o.plant_id, o.year});
      continue;
    }
    if (!std::isfinite(it->second->S)) {
      flagged.insert({o.plant_id, o.year});
      continue;
    }
    const PlantInputTotals* totals = panel.find_inputs(o.plant_id, o.year);
    if (!totals) {
      missing.insert({o.plant_id, o.year});
      continue;
    }
    ProductInputRow r;
    r.plant_id = o.plant_id;
    r.year = o.year;
    r.product = o.product;
    r.y = std::log(o.quantity);
    r.log_revenue = std::log(o.revenue);
    r.S = it->second->S;
    double logS = std::log(it->second->S);
    r.l = logS + std::log(totals->labor);
    r.k = logS + std::log(totals->capital);
    r.m = logS + std::log(totals->materials);
    auto zt = z.find({o.product.nest5(), o.year});
    if (zt != z.end()) r.z_t = zt->second;
    auto zl = z.find({o.product.nest5(), o.year - 1});
    if (zl != z.end()) r.z_lag = zl->second;
    table.rows.push_back(std::move(r));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& [p, y] : missing) {
      if (!list.empty()) list += ", ";
      list += p + "/" + fmt_int(y);
      if (list.size() > 200) break;
    }
    throw Error(ErrorKind::Join, "allocations missing for plant-years: " + list);
  }
  table.skipped_flagged = static_cast<int>(flagged.size());

  // lag of m by (plant, product)
  std::map<std::tuple<std::string, std::string, int>, double> m_by_key;
  for (const auto& r : table.rows) m_by_key[{r.plant_id, r.product.code5, r.year}] = r.m;
  for (auto& r : table.rows) {
    auto it = m_by_key.find({r.plant_id, r.product.code5, r.year - 1});
    if (it != m_by_key.end()) r.m_lag = it->second;
  }
  return table;
}

const char* preset_name(MomentSpec::Preset p) {
  switch (p) {
    case MomentSpec::Preset::Col1: return "col1";
    case MomentSpec::Preset::Col2: return "col2";
    case MomentSpec::Preset::Col3: return "col3";
  }
  return "?";
}

namespace {

struct GmmDesign {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;  // l, k, m (+ const)
  Eigen::MatrixXd Z;
  std::vector<int> cluster;
  int n = 0;
};

GmmDesign assemble_gmm(const ProductInputTable& data, const MomentSpec& spec) {
  bool need_mlag = spec.preset != MomentSpec::Preset::Col3;
  bool need_z = spec.preset != MomentSpec::Preset::Col2;

  std::vector<const ProductInputRow*> rows;
  for (const auto& r : data.rows) {
    if (need_mlag && !r.m_lag) continue;
    if (need_z && (!r.z_t || !r.z_lag)) continue;
    rows.push_back(&r);
  }
  int kx = 3 + (spec.include_constant ? 1 : 0);
  int kz = 2 + (need_mlag ? 1 : 0) + (need_z ? 2 : 0) + (spec.include_constant ? 1 : 0);
  if (kz < kx) {
    throw Error(ErrorKind::Identification, "GMM under-identified: " + fmt_int(kz) +
                                               " instruments for " + fmt_int(kx) + " parameters");
  }
  GmmDesign d;
  d.n = static_cast<int>(rows.size());
  if (d.n <= kx) {
    throw Error(ErrorKind::Identification,
                "GMM sample too small: " + fmt_int(d.n) + " usable rows");
  }
  d.y.resize(d.n);
  d.X.resize(d.n, kx);
  d.Z.resize(d.n, kz);
  d.cluster.resize(static_cast<std::size_t>(d.n));
  std::map<std::string, int> plant_ids;
  for (int i = 0; i < d.n; ++i) {
    const auto& r = *rows[static_cast<std::size_t>(i)];
    d.y[i] = r.y;
    d.X(i, 0) = r.l;
    d.X(i, 1) = r.k;
    d.X(i, 2) = r.m;
    if (spec.include_constant) d.X(i, 3) = 1.0;
    int c = 0;
    d.Z(i, c++) = r.l;
    d.Z(i, c++) = r.k;
    if (need_mlag) d.Z(i, c++) = *r.m_lag;
    if (need_z) {
      d.Z(i, c++) = *r.z_t;
      d.Z(i, c++) = *r.z_lag;
    }
    if (spec.include_constant) d.Z(i, c++) = 1.0;
    d.cluster[static_cast<std::size_t>(i)] =
        plant_ids.emplace(r.plant_id, static_cast<int>(plant_ids.size())).first->second;
  }
  return d;
}

// Inverts the weighting-matrix candidate, ridge-repairing when singular.
Eigen::MatrixXd invert_weight(const Eigen::MatrixXd& meat, double* ridge_eps) {
  Eigen::MatrixXd m = meat;
  double scale = m.diagonal().cwiseAbs().mean();
  if (scale <= 0.0) scale = 1.0;
  double eps = 0.0;
  for (int attempt = 0; attempt < 20; ++attempt) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    if (lu.isInvertible()) {
      *ridge_eps = eps;
      return lu.inverse();
    }
    eps = eps == 0.0 ? 1e-12 * scale : eps * 10.0;
    m = meat + eps * Eigen::MatrixXd::Identity(meat.rows(), meat.cols());
  }
  throw Error(ErrorKind::SingularDesign, "GMM weighting matrix could not be inverted");
}

Eigen::VectorXd gmm_solve(const GmmDesign& d, const Eigen::MatrixXd& W) {
  Eigen::MatrixXd G = d.Z.transpose() * d.X;       // kz x kx
  Eigen::VectorXd h = d.Z.transpose() * d.y;       // kz
  Eigen::MatrixXd A = G.transpose() * W * G;       // kx x kx
  Eigen::VectorXd b = G.transpose() * W * h;
  return A.colPivHouseholderQr().solve(b);
}

}  // namespace

ProductionEstimate estimate_gmm(const ProductInputTable& data, const MomentSpec& spec) {
  GmmDesign d = assemble_gmm(data, spec);

  // step 1: 2SLS weighting
  double ridge1 = 0.0;
  Eigen::MatrixXd W1 = invert_weight(d.Z.transpose() * d.Z, &ridge1);
  Eigen::VectorXd beta1 = gmm_solve(d, W1);
  Eigen::VectorXd u1 = d.y - d.X * beta1;

  // step 2: optimal weighting from plant-clustered first-step residuals
  double ridge2 = 0.0;
  Eigen::MatrixXd meat = cluster_meat(d.Z, u1, d.cluster);
  Eigen::MatrixXd W2 = invert_weight(meat, &ridge2);
  Eigen::VectorXd beta = gmm_solve(d, W2);
  Eigen::VectorXd u = d.y - d.X * beta;

  ProductionEstimate est;
  est.coef = beta;
  est.beta_L = beta[0];
  est.beta_K = beta[1];
  est.beta_M = beta[2];
  est.coef_names = {"beta_L", "beta_K", "beta_M"};
  if (spec.include_constant) est.coef_names.push_back("const");
  est.n_obs = d.n;
  est.ridge_eps = std::max(ridge1, ridge2);

  Eigen::MatrixXd G = d.Z.transpose() * d.X;
  Eigen::MatrixXd A = G.transpose() * W2 * G;
  est.vcov_analytic = A.inverse();

  est.J_dof = static_cast<int>(d.Z.cols() - d.X.cols());
  if (est.J_dof > 0) {
    Eigen::VectorXd g = d.Z.transpose() * u;
    est.J_stat = g.dot(W2 * g);
  }
  return est;
}

double gmm_objective(const ProductInputTable& data, const MomentSpec& spec,
                     const Eigen::VectorXd& beta) {
  GmmDesign d = assemble_gmm(data, spec);
  double ridge1 = 0.0, ridge2 = 0.0;
  Eigen::MatrixXd W1 = invert_weight(d.Z.transpose() * d.Z, &ridge1);
  Eigen::VectorXd beta1 = gmm_solve(d, W1);
  Eigen::VectorXd u1 = d.y - d.X * beta1;
  Eigen::MatrixXd W2 = invert_weight(cluster_meat(d.Z, u1, d.cluster), &ridge2);
  Eigen::VectorXd g = d.Z.transpose() * (d.y - d.X * beta);
  return g.dot(W2 * g);
}

Panel resample_plants(const Panel& panel, std::uint64_t seed) {
  std::set<std::string> plant_set;
  for (const auto& r : panel.inputs) plant_set.insert(r.plant_id);
  for (const auto& o : panel.observations) plant_set.insert(o.plant_id);
  std::vector<std::string> plants(plant_set.begin(), plant_set.end());
  const std::size_t n = plants.size();

  Rng rng(seed);
  std::map<std::string, std::vector<int>> copies;  // plant -> draw slots
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = plants[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(n) - 1))];
    copies[p].push_back(static_cast<int>(i));
  }

  auto new_id = [](const std::string& plant, int slot) {
    return plant + "#" + fmt_int(slot);
  };

  std::vector<PlantProductObs> obs;
  std::vector<PlantInputTotals> inputs;
  std::vector<InputPurchase> purchases;
  std::unordered_map<std::string, Sector> tags;
  for (const auto& o : panel.observations) {
    auto it = copies.find(o.plant_id);
    if (it == copies.end()) continue;
    for (int slot : it->second) {
      PlantProductObs c = o;
      c.plant_id = new_id(o.plant_id, slot);
      obs.push_back(std::move(c));
    }
  }
  for (const auto& r : panel.inputs) {
    auto it = copies.find(r.plant_id);
    if (it == copies.end()) continue;
    for (int slot : it->second) {
      PlantInputTotals c = r;
      c.plant_id = new_id(r.plant_id, slot);
      inputs.push_back(std::move(c));
    }
  }
  for (const auto& r : panel.purchases) {
    auto it = copies.find(r.plant_id);
    if (it == copies.end()) continue;
    for (int slot : it->second) {
      InputPurchase c = r;
      c.plant_id = new_id(r.plant_id, slot);
      purchases.push_back(std::move(c));
    }
  }
  for (const auto& [plant, slots] : copies) {
    auto tag = panel.sector_tags.find(plant);
    Sector s = tag == panel.sector_tags.end() ? Sector::Other : tag->second;
    for (int slot : slots) tags[new_id(plant, slot)] = s;
  }
  return make_panel(std::move(obs), std::move(inputs), std::move(purchases), std::move(tags));
}

BootstrapResult block_bootstrap(const Panel& panel, const PipelineClosure& pipeline,
                                const std::vector<std::string>& param_names,
                                const BootstrapSpec& spec,
                                const std::optional<DemandDraw>& demand) {
  if (spec.B < 2) {
    throw Error(ErrorKind::Config, "bootstrap needs B >= 2 replications, got " + fmt_int(spec.B));
  }
  if (spec.mode == BootstrapMode::SemiParametric && !demand) {
    throw Error(ErrorKind::Config, "semi-parametric bootstrap requires a demand estimate");
  }

  Eigen::Matrix2d chol = Eigen::Matrix2d::Zero();
  if (demand) {
    Eigen::Matrix2d V = demand->vcov;
    Eigen::LLT<Eigen::Matrix2d> llt(V);
    if (llt.info() != Eigen::Success) {
      llt.compute(V + 1e-14 * V.trace() * Eigen::Matrix2d::Identity());
      if (llt.info() != Eigen::Success) {
        throw Error(ErrorKind::SingularDesign, "demand vcov is not positive definite");
      }
    }
    chol = llt.matrixL();
  }

  std::vector<std::optional<std::vector<double>>> results(static_cast<std::size_t>(spec.B));
  parallel_for(static_cast<std::size_t>(spec.B), spec.jobs, [&](std::size_t b) {
    std::uint64_t rep_seed = derive_seed(spec.seed, b);
    Panel resampled = resample_plants(panel, rep_seed);
    std::optional<std::pair<double, double>> draw;
    if (spec.mode == BootstrapMode::SemiParametric) {
      Rng rng(derive_seed(rep_seed, 0x5eed));
      Eigen::Vector2d z(rng.normal(), rng.normal());
      Eigen::Vector2d coef(-demand->alpha, 1.0 - demand->sigma);
      Eigen::Vector2d drawn = coef + chol * z;
      double a = -drawn[0], s = 1.0 - drawn[1];
      if (!(a > 0.0) || !(s > 0.0) || !(s < 1.0)) {
        results[b] = std::nullopt;  // inadmissible draw: replication skipped
        return;
      }
      draw = std::make_pair(a, s);
    }
    try {
      results[b] = pipeline(resampled, draw);
    } catch (const Error&) {
      results[b] = std::nullopt;
    }
  });

  BootstrapResult out;
  out.param_names = param_names;
  const std::size_t k = param_names.size();
  std::vector<double> mean(k, 0.0);
  for (int b = 0; b < spec.B; ++b) {
    const auto& r = results[static_cast<std::size_t>(b)];
    if (r && r->size() == k) {
      out.draws.emplace_back(b, *r);
      for (std::size_t j = 0; j < k; ++j) mean[j] += (*r)[j];
    } else {
      out.n_failed += 1;
    }
  }
  if (static_cast<double>(out.n_failed) > spec.max_failure_frac * spec.B) {
    throw Error(ErrorKind::BootstrapDegenerate,
                "bootstrap degenerate: " + fmt_int(out.n_failed) + " of " + fmt_int(spec.B) +
                    " replications failed");
  }
  const double n_ok = static_cast<double>(out.draws.size());
  for (std::size_t j = 0; j < k; ++j) mean[j] /= n_ok;
  out.se.assign(k, 0.0);
  for (const auto& [b, vals] : out.draws) {
    (void)b;
    for (std::size_t j = 0; j < k; ++j) {
      double d = vals[j] - mean[j];
      out.se[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    out.se[j] = n_ok > 1 ? std::sqrt(out.se[j] / (n_ok - 1.0)) : 0.0;
  }
  return out;
}

std::string production_estimate_to_csv(const ProductionEstimate& est, const std::string& preset,
                                       const std::string& spec_hash) {
  std::vector<std::string> header = {"preset", "beta_L", "beta_K", "beta_M",
                                     "se_L",   "se_K",   "se_M",   "J_stat",
                                     "J_dof",  "n_obs",  "ridge_eps", "spec_hash"};
  auto se = [&](int i) {
    if (est.se_bootstrap.size() > static_cast<std::size_t>(i)) {
      return fmt_double(est.se_bootstrap[static_cast<std::size_t>(i)]);
    }
    return fmt_double(std::sqrt(std::max(0.0, est.vcov_analytic(i, i))));
  };
  std::vector<std::vector<std::string>> rows;
  rows.push_back({preset, fmt_double(est.beta_L), fmt_double(est.beta_K), fmt_double(est.beta_M),
                  se(0), se(1), se(2), est.J_dof > 0 ? fmt_double(est.J_stat) : "",
                  fmt_int(est.J_dof), fmt_int(est.n_obs), fmt_double(est.ridge_eps), spec_hash});
  return csv_to_string(header, rows);
}

std::string bootstrap_draws_to_csv(const BootstrapResult& result) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [b, vals] : result.draws) {
    for (std::size_t j = 0; j < vals.size(); ++j) {
      rows.push_back({fmt_int(b), result.param_names[j], fmt_double(vals[j])});
    }
  }
  return csv_to_string({"replication", "parameter", "value"}, rows);
}

}  // namespace prodloom
