#include "prodloom/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "prodloom/conduct.hpp"
#include "prodloom/csv.hpp"
#include "prodloom/rng.hpp"

namespace prodloom {

ShareMapResult nested_share_map(const Eigen::VectorXd& log_price, const Eigen::VectorXd& appeal,
                                double alpha, double sigma, const std::vector<int>& nest) {
  if (!(alpha > 0.0) || !(sigma > 0.0) || !(sigma < 1.0)) {
    throw Error(ErrorKind::Config, "share map requires an admissible (alpha, sigma)");
  }
  const Eigen::Index n = log_price.size();
  Eigen::VectorXd v = (-alpha * log_price + appeal) / sigma;  // mu_j / sigma

  int n_nests = 0;
  for (int g : nest) n_nests = std::max(n_nests, g + 1);

  // log D_g with max-shift normalization within each nest
  Eigen::VectorXd vmax = Eigen::VectorXd::Constant(n_nests, -std::numeric_limits<double>::infinity());
  for (Eigen::Index j = 0; j < n; ++j) {
    vmax[nest[static_cast<std::size_t>(j)]] = std::max(vmax[nest[static_cast<std::size_t>(j)]], v[j]);
  }
  Eigen::VectorXd expsum = Eigen::VectorXd::Zero(n_nests);
  for (Eigen::Index j = 0; j < n; ++j) {
    int g = nest[static_cast<std::size_t>(j)];
    expsum[g] += std::exp(v[j] - vmax[g]);
  }
  Eigen::VectorXd logD(n_nests);
  for (int g = 0; g < n_nests; ++g) logD[g] = vmax[g] + std::log(expsum[g]);

  // ln s_0 = -ln(1 + sum_g exp(sigma ln D_g)), log-sum-exp guarded
  double lmax = 0.0;
  for (int g = 0; g < n_nests; ++g) lmax = std::max(lmax, sigma * logD[g]);
  double acc = std::exp(-lmax);
  for (int g = 0; g < n_nests; ++g) acc += std::exp(sigma * logD[g] - lmax);
  double log_s0 = -(lmax + std::log(acc));

  ShareMapResult out;
  out.log_share_within.resize(n);
  out.log_share.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    int g = nest[static_cast<std::size_t>(j)];
    out.log_share_within[j] = v[j] - logD[g];
    out.log_share[j] = out.log_share_within[j] + sigma * logD[g] + log_s0;
  }
  out.log_outside = log_s0;
  out.share = out.log_share.array().exp();
  out.share_within = out.log_share_within.array().exp();
  out.outside = std::exp(log_s0);
  return out;
}

Eigen::VectorXd solve_price_equilibrium(const Eigen::VectorXd& mc, const Eigen::VectorXd& appeal,
                                        double alpha, double sigma, const std::vector<int>& nest,
                                        const std::vector<std::string>& plant,
                                        const EquilibriumOptions& opts) {
  const Eigen::Index n = mc.size();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(mc[j] > 0.0)) {
      throw Error(ErrorKind::Config, "equilibrium requires mc > 0 at index " + fmt_int(j));
    }
  }
  Eigen::VectorXd log_mc = mc.array().log();
  Eigen::VectorXd p = log_mc.array() + std::log(2.0);  // 50% markup start

  double damping = opts.damping;
  double prev_change = std::numeric_limits<double>::infinity();
  double last_residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opts.max_iter; ++it) {
    ShareMapResult sm = nested_share_map(p, appeal, alpha, sigma, nest);
    Eigen::MatrixXd J = share_derivatives(alpha, sigma, sm.share, sm.share_within, nest);
    Eigen::VectorXd nu = solve_lerner(J, sm.share, plant, "equilibrium").lerner;

    bool clamped = false;
    Eigen::VectorXd target(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      double v = nu[j];
      if (v > 1.0 - 1e-9) {
        v = 1.0 - 1e-9;
        clamped = true;
      }
      target[j] = log_mc[j] - std::log1p(-v);
    }
    Eigen::VectorXd delta = target - p;
    double change = delta.cwiseAbs().maxCoeff();
    last_residual = change;
    if (change < opts.tol && !clamped) return p;
    if (change > prev_change) damping = std::max(0.05, damping * 0.7);
    prev_change = change;
    p += damping * delta;
  }
  throw Error(ErrorKind::Equilibrium,
              "price equilibrium did not converge in " + fmt_int(opts.max_iter) +
                  " iterations; last sup-norm change " + fmt_double(last_residual));
}

namespace {

struct PlantInfo {
  std::string id;
  int primary_nest = 0;
  bool machinery = false;
  double theta = 0.0;
  std::vector<int> product_nests;       // distinct nests, first is primary
  std::vector<std::string> basket;      // purchased input codes
  std::vector<double> basket_qty;       // base purchase quantity per code
};

std::string plant_name(int i) {
  std::string num = fmt_int(i + 1);
  while (num.size() < 4) num = "0" + num;
  return "P" + num;
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& cfg) {
  if (!(cfg.alpha > 0.0) || !(cfg.sigma > 0.0) || !(cfg.sigma < 1.0)) {
    throw Error(ErrorKind::Config, "synthetic config requires alpha > 0 and 0 < sigma < 1");
  }
  if (!(cfg.beta_L > 0.0) || !(cfg.beta_K > 0.0) || !(cfg.beta_M > 0.0)) {
    throw Error(ErrorKind::Config, "synthetic config requires positive beta components");
  }
  const int M = cfg.n_markets, NG = cfg.nests_per_market, T = cfg.n_years;
  const int n_nests = M * NG;
  const double gamma = cfg.beta_L + cfg.beta_K + cfg.beta_M;

  Rng structure_rng(derive_seed(cfg.seed, 1));
  Rng factor_rng(derive_seed(cfg.seed, 2));
  Rng shock_rng(derive_seed(cfg.seed, 3));
  Rng market_rng(derive_seed(cfg.seed, 4));
  Rng purchase_rng(derive_seed(cfg.seed, 5));

  auto nest_code = [&](int G) {
    int m = G / NG, g = G % NG;
    std::string mk = fmt_int(101 + m);
    std::string sub = fmt_int(g + 1);
    if (sub.size() < 2) sub = "0" + sub;
    return mk + sub;
  };
  auto market_of_nest = [&](int G) { return G / NG; };

  // nest machinery affinity: spread across nests so purchase shares cover [0,1]
  std::vector<double> affinity(n_nests);
  for (int G = 0; G < n_nests; ++G) {
    affinity[G] = std::clamp(cfg.machinery_frac + cfg.machinery_spread * (structure_rng.uniform() - 0.5),
                             0.02, 0.98);
  }

  // input codes per nest
  std::vector<std::string> code_id;
  std::vector<int> code_nest;
  for (int G = 0; G < n_nests; ++G) {
    for (int k = 0; k < cfg.codes_per_nest; ++k) {
      code_id.push_back("C" + nest_code(G) + fmt_int(k));
      code_nest.push_back(G);
    }
  }
  const int n_codes = static_cast<int>(code_id.size());

  // plants
  std::vector<PlantInfo> plants(static_cast<std::size_t>(cfg.n_plants));
  for (int i = 0; i < cfg.n_plants; ++i) {
    PlantInfo& pl = plants[static_cast<std::size_t>(i)];
    pl.id = plant_name(i);
    pl.primary_nest = static_cast<int>(structure_rng.uniform_int(0, n_nests - 1));
    pl.machinery = structure_rng.bernoulli(affinity[pl.primary_nest]);
    pl.theta = 1.0 + cfg.cost_het_sd * structure_rng.normal();
    int n_prod = structure_rng.bernoulli(0.45)
                     ? 1
                     : 2 + static_cast<int>(structure_rng.uniform_int(0, std::max(0, cfg.max_products - 2)));
    pl.product_nests.push_back(pl.primary_nest);
    std::set<int> used{pl.primary_nest};
    int primary_market = market_of_nest(pl.primary_nest);
    for (int k = 1; k < n_prod; ++k) {
      int chosen = -1;
      for (int attempt = 0; attempt < 50 && chosen < 0; ++attempt) {
        int cand;
        if (structure_rng.bernoulli(cfg.same_market_frac)) {
          cand = primary_market * NG + static_cast<int>(structure_rng.uniform_int(0, NG - 1));
        } else {
          cand = static_cast<int>(structure_rng.uniform_int(0, n_nests - 1));
        }
        if (!used.count(cand)) chosen = cand;
      }
      if (chosen < 0) break;
      used.insert(chosen);
      pl.product_nests.push_back(chosen);
    }
    // purchase basket: primary-nest codes plus a few from elsewhere
    std::set<std::string> in_basket;
    for (int k = 0; k < cfg.codes_per_nest; ++k) {
      int c = pl.primary_nest * cfg.codes_per_nest + k;
      pl.basket.push_back(code_id[static_cast<std::size_t>(c)]);
      in_basket.insert(pl.basket.back());
    }
    for (int k = 0; k < cfg.basket_extra; ++k) {
      for (int attempt = 0; attempt < 30; ++attempt) {
        int c = static_cast<int>(structure_rng.uniform_int(0, n_codes - 1));
        if (in_basket.insert(code_id[static_cast<std::size_t>(c)]).second) {
          pl.basket.push_back(code_id[static_cast<std::size_t>(c)]);
          break;
        }
      }
    }
    for (std::size_t k = 0; k < pl.basket.size(); ++k) {
      pl.basket_qty.push_back(structure_rng.lognormal(2.0, 0.5));
    }
  }

  // cost factors (t from -2) and nest-level appeal shocks
  auto fidx = [](int t) { return t + 2; };
  std::vector<std::vector<double>> mkt_factor(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    mkt_factor[static_cast<std::size_t>(m)].resize(static_cast<std::size_t>(T + 2));
    for (int t = -2; t < T; ++t) {
      mkt_factor[static_cast<std::size_t>(m)][static_cast<std::size_t>(fidx(t))] =
          factor_rng.normal(0.0, cfg.market_factor_sd);
    }
  }
  std::vector<std::vector<double>> nest_factor(static_cast<std::size_t>(n_nests));
  std::vector<std::vector<double>> nest_appeal(static_cast<std::size_t>(n_nests));
  for (int G = 0; G < n_nests; ++G) {
    nest_factor[static_cast<std::size_t>(G)].resize(static_cast<std::size_t>(T + 2));
    nest_appeal[static_cast<std::size_t>(G)].resize(static_cast<std::size_t>(T));
    for (int t = -2; t < T; ++t) {
      nest_factor[static_cast<std::size_t>(G)][static_cast<std::size_t>(fidx(t))] =
          factor_rng.normal(0.0, cfg.nest_factor_sd);
    }
    for (int t = 0; t < T; ++t) {
      nest_appeal[static_cast<std::size_t>(G)][static_cast<std::size_t>(t)] = factor_rng.normal();
    }
  }

  // input-code log price paths: random walk driven by both factors
  std::vector<std::vector<double>> code_lp(static_cast<std::size_t>(n_codes));
  for (int c = 0; c < n_codes; ++c) {
    auto& path = code_lp[static_cast<std::size_t>(c)];
    path.resize(static_cast<std::size_t>(T + 1));  // t from -1
    path[0] = factor_rng.normal(0.0, 0.2);
    int G = code_nest[static_cast<std::size_t>(c)];
    int m = market_of_nest(G);
    for (int t = 0; t < T; ++t) {
      path[static_cast<std::size_t>(t + 1)] =
          path[static_cast<std::size_t>(t)] +
          mkt_factor[static_cast<std::size_t>(m)][static_cast<std::size_t>(fidx(t))] +
          nest_factor[static_cast<std::size_t>(G)][static_cast<std::size_t>(fidx(t))] +
          factor_rng.normal(0.0, cfg.code_noise_sd);
    }
  }

  // plant-year shocks and per-factor log input prices
  std::vector<std::vector<double>> u_shock(plants.size());
  std::vector<std::vector<std::array<double, 3>>> factor_logw(plants.size());  // L, K, M
  for (std::size_t i = 0; i < plants.size(); ++i) {
    u_shock[i].resize(static_cast<std::size_t>(T));
    factor_logw[i].resize(static_cast<std::size_t>(T));
    const PlantInfo& pl = plants[i];
    const auto& h = mkt_factor[static_cast<std::size_t>(market_of_nest(pl.primary_nest))];
    const auto& g = nest_factor[static_cast<std::size_t>(pl.primary_nest)];
    for (int t = 0; t < T; ++t) {
      double u = shock_rng.normal();
      u_shock[i][static_cast<std::size_t>(t)] = u;
      double base =
          cfg.cost_load_t * h[static_cast<std::size_t>(fidx(t))] +
          pl.theta * (cfg.cost_het_base + cfg.cost_load_lag * g[static_cast<std::size_t>(fidx(t - 1))]) +
          cfg.plant_shock_sd * u;
      double material_extra = cfg.material_price_load * (h[static_cast<std::size_t>(fidx(t))] +
                                                         g[static_cast<std::size_t>(fidx(t))]);
      for (int s = 0; s < 3; ++s) {
        factor_logw[i][static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] =
            base + cfg.factor_price_noise_sd * shock_rng.normal() + (s == 2 ? material_extra : 0.0);
      }
    }
  }

  // product presence, omega, raw appeal
  struct Product {
    std::size_t plant = 0;
    int nest = 0;
  };
  std::vector<Product> products;
  std::vector<std::vector<bool>> present;  // [product][t]
  std::vector<std::size_t> plant_first_product(plants.size());
  for (std::size_t i = 0; i < plants.size(); ++i) {
    plant_first_product[i] = products.size();
    for (int g : plants[i].product_nests) {
      products.push_back({i, g});
    }
  }
  // permanent survival, then the transient participation margin
  std::vector<std::vector<bool>> alive_panel(products.size(),
                                             std::vector<bool>(static_cast<std::size_t>(T), false));
  std::vector<double> participation_pi(products.size());
  for (std::size_t j = 0; j < products.size(); ++j) participation_pi[j] = shock_rng.normal();
  for (std::size_t i = 0; i < plants.size(); ++i) {
    std::size_t b = plant_first_product[i];
    std::size_t e = b + plants[i].product_nests.size();
    for (std::size_t j = b; j < e; ++j) alive_panel[j][0] = true;
    for (int t = 1; t < T; ++t) {
      int alive = 0;
      for (std::size_t j = b; j < e; ++j) {
        if (alive_panel[j][static_cast<std::size_t>(t - 1)]) ++alive;
      }
      for (std::size_t j = b; j < e; ++j) {
        if (!alive_panel[j][static_cast<std::size_t>(t - 1)]) continue;
        bool drop = alive > 1 && shock_rng.bernoulli(cfg.drop_rate);
        if (drop) {
          --alive;
        } else {
          alive_panel[j][static_cast<std::size_t>(t)] = true;
        }
      }
    }
  }
  {
    if (!(cfg.participation_rate > 0.0) || !(cfg.participation_rate <= 1.0)) {
      throw Error(ErrorKind::Config, "participation_rate must lie in (0,1]");
    }
    // Phi^{-1}(participation_rate) via bisection on erfc
    double cutoff = 8.0;
    if (cfg.participation_rate < 1.0) {
      double lo = -8.0, hi = 8.0;
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / 1.4142135623730951) < cfg.participation_rate) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      cutoff = 0.5 * (lo + hi);
    }
    present.assign(products.size(), std::vector<bool>(static_cast<std::size_t>(T), false));
    for (std::size_t i = 0; i < plants.size(); ++i) {
      std::size_t b = plant_first_product[i];
      std::size_t e = b + plants[i].product_nests.size();
      for (int t = 0; t < T; ++t) {
        for (std::size_t j = b; j < e; ++j) {
          if (!alive_panel[j][static_cast<std::size_t>(t)]) continue;
          if (j == b) {
            present[j][static_cast<std::size_t>(t)] = true;  // primary never sits out
            continue;
          }
          double g = nest_factor[static_cast<std::size_t>(products[j].nest)]
                                [static_cast<std::size_t>(fidx(t - 1))];
          present[j][static_cast<std::size_t>(t)] =
              participation_pi[j] + cfg.participation_cost_slope * g < cutoff;
        }
        // a plant always markets at least one product
        bool any = false;
        for (std::size_t j = b; j < e; ++j) any = any || present[j][static_cast<std::size_t>(t)];
        if (!any) {
          for (std::size_t j = b; j < e; ++j) {
            if (alive_panel[j][static_cast<std::size_t>(t)]) {
              present[j][static_cast<std::size_t>(t)] = true;
              break;
            }
          }
        }
      }
    }
  }

  std::vector<std::vector<double>> omega(products.size()), eta_raw(products.size());
  double rho = cfg.endogeneity;
  if (rho < -1.0 || rho > 1.0) throw Error(ErrorKind::Config, "endogeneity knob must lie in [-1,1]");
  for (std::size_t j = 0; j < products.size(); ++j) {
    omega[j].resize(static_cast<std::size_t>(T));
    eta_raw[j].resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      omega[j][static_cast<std::size_t>(t)] = cfg.omega_sd * shock_rng.normal();
      double eps = nest_appeal[static_cast<std::size_t>(products[j].nest)][static_cast<std::size_t>(t)];
      double u = u_shock[products[j].plant][static_cast<std::size_t>(t)];
      eta_raw[j][static_cast<std::size_t>(t)] =
          cfg.eta_sd * (std::sqrt(1.0 - rho * rho) * eps + rho * u);
    }
  }

  // market sizes, fixed draw order
  std::vector<std::vector<double>> market_size(static_cast<std::size_t>(M),
                                               std::vector<double>(static_cast<std::size_t>(T)));
  for (int m = 0; m < M; ++m) {
    for (int t = 0; t < T; ++t) {
      market_size[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)] =
          market_rng.lognormal(cfg.market_size_log_mean, cfg.market_size_log_sd);
    }
  }

  // per-market appeal level so the outside share starts near its target
  const double mc_const = -(cfg.beta_L * std::log(cfg.beta_L) + cfg.beta_K * std::log(cfg.beta_K) +
                            cfg.beta_M * std::log(cfg.beta_M));
  std::vector<double> appeal_level(static_cast<std::size_t>(M));
  {
    std::vector<std::map<int, int>> nest_counts(static_cast<std::size_t>(M));
    for (std::size_t j = 0; j < products.size(); ++j) {
      nest_counts[static_cast<std::size_t>(market_of_nest(products[j].nest))][products[j].nest] += 1;
    }
    for (int m = 0; m < M; ++m) {
      double sum = 0.0;
      for (const auto& [g, n] : nest_counts[static_cast<std::size_t>(m)]) {
        (void)g;
        sum += std::pow(static_cast<double>(n), cfg.sigma);
      }
      double offset = std::log(1.0 / cfg.outside_share_target - 1.0);
      appeal_level[static_cast<std::size_t>(m)] = offset - std::log(std::max(sum, 1.0));
      // typical log marginal cost enters the appeal level so mean utility is
      // centered regardless of the cost scale
      appeal_level[static_cast<std::size_t>(m)] +=
          cfg.alpha * (mc_const + cfg.cost_het_base + std::log(2.0));
    }
  }

  // equilibrium per market-year
  std::vector<PlantProductObs> obs;
  std::vector<TruthRow> truth_rows;
  std::map<std::pair<std::string, int>, std::array<double, 3>> totals;  // L, K, M

  for (int m = 0; m < M; ++m) {
    for (int t = 0; t < T; ++t) {
      std::vector<std::size_t> active;
      for (std::size_t j = 0; j < products.size(); ++j) {
        if (market_of_nest(products[j].nest) == m && present[j][static_cast<std::size_t>(t)]) {
          active.push_back(j);
        }
      }
      if (active.empty()) continue;
      const Eigen::Index n = static_cast<Eigen::Index>(active.size());

      std::map<int, int> nest_map;
      std::vector<int> nest_local(active.size());
      std::vector<std::string> owner(active.size());
      Eigen::VectorXd appeal(n), omega_v(n), cost_index(n);
      for (Eigen::Index a = 0; a < n; ++a) {
        std::size_t j = active[static_cast<std::size_t>(a)];
        auto [it, inserted] = nest_map.emplace(products[j].nest, static_cast<int>(nest_map.size()));
        (void)inserted;
        nest_local[static_cast<std::size_t>(a)] = it->second;
        owner[static_cast<std::size_t>(a)] = plants[products[j].plant].id;
        omega_v[a] = omega[j][static_cast<std::size_t>(t)];
        appeal[a] = appeal_level[static_cast<std::size_t>(m)] + eta_raw[j][static_cast<std::size_t>(t)];
        const auto& lw = factor_logw[products[j].plant][static_cast<std::size_t>(t)];
        cost_index[a] = cfg.beta_L * lw[0] + cfg.beta_K * lw[1] + cfg.beta_M * lw[2];
      }

      // Cobb-Douglas cost minimization gives
      //   ln mc = (-omega + (1-gamma) ln Y + mc_const + sum_s beta_s ln w_s) / gamma.
      // When gamma != 1 marginal cost depends on quantity, so iterate
      // mc <-> equilibrium to a joint fixed point.
      double I = market_size[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)];
      Eigen::VectorXd log_mc = ((-omega_v).array() + mc_const + cost_index.array()) / gamma;
      Eigen::VectorXd p;
      ShareMapResult sm;
      for (int outer = 0; outer < 500; ++outer) {
        p = solve_price_equilibrium(log_mc.array().exp(), appeal, cfg.alpha, cfg.sigma, nest_local,
                                    owner);
        sm = nested_share_map(p, appeal, cfg.alpha, cfg.sigma, nest_local);
        if (std::abs(gamma - 1.0) < 1e-12) break;
        Eigen::VectorXd log_y = sm.log_share.array() + std::log(I) - p.array();
        Eigen::VectorXd next = (((-omega_v).array() + (1.0 - gamma) * log_y.array() + mc_const +
                                 cost_index.array()) /
                                gamma)
                                   .matrix();
        double change = (next - log_mc).cwiseAbs().maxCoeff();
        log_mc += 0.8 * (next - log_mc);
        if (change < 1e-10) break;
        if (outer == 499) {
          throw Error(ErrorKind::Equilibrium,
                      "mc/quantity fixed point did not converge (returns to scale too far from 1)");
        }
      }

      for (Eigen::Index a = 0; a < n; ++a) {
        std::size_t j = active[static_cast<std::size_t>(a)];
        const PlantInfo& pl = plants[products[j].plant];
        double price = std::exp(p[a]);
        double revenue = sm.share[a] * I;
        double quantity = revenue / price;
        double mc = std::exp(log_mc[a]);

        PlantProductObs o;
        o.plant_id = pl.id;
        o.year = cfg.first_year + t;
        o.product.code5 = nest_code(products[j].nest);
        o.quantity = quantity;
        o.revenue = revenue;
        o.unit_price = price;
        obs.push_back(o);

        TruthRow tr;
        tr.plant_id = pl.id;
        tr.year = o.year;
        tr.code5 = o.product.code5;
        tr.eta = appeal[a];  // structural residual of Eq. (3)
        tr.omega = omega_v[a];
        tr.mc = mc;
        tr.log_price = p[a];
        tr.share = sm.share[a];
        tr.share_within = sm.share_within[a];
        tr.outside_share = sm.outside;
        truth_rows.push_back(tr);

        // cost-minimizing input levels: X_s = beta_s mc Y / w_s
        const auto& lw = factor_logw[products[j].plant][static_cast<std::size_t>(t)];
        auto& tot = totals[{pl.id, o.year}];
        tot[0] += cfg.beta_L * mc * quantity / std::exp(lw[0]);
        tot[1] += cfg.beta_K * mc * quantity / std::exp(lw[1]);
        tot[2] += cfg.beta_M * mc * quantity / std::exp(lw[2]);
      }
    }
  }

  // plant input totals
  std::vector<PlantInputTotals> inputs;
  inputs.reserve(totals.size());
  for (const auto& [key, v] : totals) {
    PlantInputTotals r;
    r.plant_id = key.first;
    r.year = key.second;
    r.labor = v[0];
    r.capital = v[1];
    r.materials = v[2];
    inputs.push_back(std::move(r));
  }

  // purchases: stable baskets, unit values follow the code price paths
  std::unordered_map<std::string, int> code_index;
  for (int k = 0; k < n_codes; ++k) code_index[code_id[static_cast<std::size_t>(k)]] = k;
  std::vector<InputPurchase> purchases;
  for (std::size_t i = 0; i < plants.size(); ++i) {
    const PlantInfo& pl = plants[i];
    for (int t = 0; t < T; ++t) {
      for (std::size_t b = 0; b < pl.basket.size(); ++b) {
        int c = code_index.at(pl.basket[b]);
        InputPurchase r;
        r.plant_id = pl.id;
        r.year = cfg.first_year + t;
        r.input_code = pl.basket[b];
        r.quantity = pl.basket_qty[b] * std::exp(0.1 * purchase_rng.normal());
        double lp = code_lp[static_cast<std::size_t>(c)][static_cast<std::size_t>(t + 1)] +
                    cfg.purchase_noise_sd * purchase_rng.normal();
        r.unit_value = std::exp(lp);
        r.value = r.unit_value * r.quantity;
        purchases.push_back(std::move(r));
      }
    }
  }

  std::unordered_map<std::string, Sector> tags;
  for (const auto& pl : plants) {
    tags[pl.id] = pl.machinery ? Sector::Machinery : Sector::Other;
  }

  SynthData data;
  data.panel = make_panel(std::move(obs), std::move(inputs), std::move(purchases), std::move(tags));
  // align truth rows with the sorted panel observations
  std::sort(truth_rows.begin(), truth_rows.end(), [](const TruthRow& a, const TruthRow& b) {
    return std::tie(a.plant_id, a.year, a.code5) < std::tie(b.plant_id, b.year, b.code5);
  });
  data.truth.rows = std::move(truth_rows);
  data.truth.alpha = cfg.alpha;
  data.truth.sigma = cfg.sigma;
  data.truth.beta_L = cfg.beta_L;
  data.truth.beta_K = cfg.beta_K;
  data.truth.beta_M = cfg.beta_M;
  for (int m = 0; m < M; ++m) {
    for (int t = 0; t < T; ++t) {
      data.market_size.explicit_size[{fmt_int(101 + m), cfg.first_year + t}] =
          market_size[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)];
    }
  }
  return data;
}

void write_synth(const SynthData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_panel(data.panel, dir);
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [key, size] : data.market_size.explicit_size) {
      rows.push_back({key.first, fmt_int(key.second), fmt_double(size)});
    }
    write_csv(dir + "/market_size.csv", {"market3", "year", "market_size"}, rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(data.truth.rows.size());
    for (const auto& r : data.truth.rows) {
      rows.push_back({r.plant_id, fmt_int(r.year), r.code5, fmt_double(r.eta), fmt_double(r.omega),
                      fmt_double(r.mc), fmt_double(r.log_price), fmt_double(r.share),
                      fmt_double(r.share_within), fmt_double(r.outside_share)});
    }
    write_csv(dir + "/truth.csv",
              {"plant_id", "year", "product_code", "eta", "omega", "mc", "log_price", "share",
               "share_within", "outside_share"},
              rows);
  }
  {
    std::vector<std::vector<std::string>> rows = {
        {"alpha", fmt_double(data.truth.alpha)},   {"sigma", fmt_double(data.truth.sigma)},
        {"beta_L", fmt_double(data.truth.beta_L)}, {"beta_K", fmt_double(data.truth.beta_K)},
        {"beta_M", fmt_double(data.truth.beta_M)},
    };
    write_csv(dir + "/truth_params.csv", {"parameter", "value"}, rows);
  }
}

}  // namespace prodloom
