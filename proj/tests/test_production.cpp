#include <doctest.h>

#include <cmath>
#include <atomic>
#include <map>

#include "prodloom/conduct.hpp"
#include "prodloom/parallel.hpp"
#include "prodloom/pipeline.hpp"
#include "prodloom/production.hpp"
#include "prodloom/rng.hpp"
#include "prodloom/shares.hpp"
#include "prodloom/synth.hpp"
#include "test_util.hpp"

using namespace prodloom;

namespace {

CostAllocation alloc_row(const std::string& plant, int year, const std::string& code, double S) {
  CostAllocation a;
  a.plant_id = plant;
  a.year = year;
  a.product.code5 = code;
  a.mc = 1.0;
  a.lerner = 0.5;
  a.S = S;
  return a;
}

ProductInputTable inputs_at_truth(const SynthData& data, double tau = 0.5) {
  ShareTable shares = compute_revenue_shares(data.panel, data.market_size);
  auto pshares = compute_purchase_shares(data.panel.purchases, data.panel.sector_tags);
  auto iv = build_price_growth_iv(data.panel, filter_input_codes(pshares, tau));
  auto allocs = compute_cost_allocations(data.panel, shares, data.truth.alpha, data.truth.sigma);
  return build_product_inputs(data.panel, allocs.rows, iv);
}

}  // namespace

TEST_CASE("product inputs apply the allocation share to every plant input") {
  std::vector<PlantProductObs> obs;
  std::vector<PlantInputTotals> inputs;
  PlantProductObs o;
  o.plant_id = "p1";
  o.year = 2000;
  o.product.code5 = "10101";
  o.quantity = 4.0;
  o.revenue = 8.0;
  o.unit_price = 2.0;
  obs.push_back(o);
  o.product.code5 = "10201";
  o.quantity = 2.0;
  o.revenue = 6.0;
  o.unit_price = 3.0;
  obs.push_back(o);
  PlantInputTotals r;
  r.plant_id = "p1";
  r.year = 2000;
  r.labor = 10.0;
  r.capital = 20.0;
  r.materials = 8.0;
  inputs.push_back(r);
  Panel panel = make_panel(obs, inputs, {}, {});

  SUBCASE("single product takes everything") {
    Panel single = make_panel({panel.observations[0]}, inputs, {}, {});
    auto table = build_product_inputs(single, {alloc_row("p1", 2000, "10101", 1.0)}, {});
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].l == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  }
  SUBCASE("quarter/three-quarter split on materials") {
    auto table = build_product_inputs(
        panel, {alloc_row("p1", 2000, "10101", 0.25), alloc_row("p1", 2000, "10201", 0.75)}, {});
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0].m == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(table.rows[1].m == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    CHECK(table.rows[0].log_revenue == doctest::Approx(std::log(8.0)));
  }
  SUBCASE("missing allocation rows are a join error listing plant-years") {
    try {
      build_product_inputs(panel, {alloc_row("p1", 2000, "10101", 0.25)}, {});
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Join);
      CHECK(std::string(e.what()).find("p1/2000") != std::string::npos);
    }
  }
}

TEST_CASE("allocated input logs reconstruct plant totals on synthetic data") {
  auto data = generate_synthetic(testutil::small_config(61));
  auto table = inputs_at_truth(data);
  std::map<std::pair<std::string, int>, std::array<double, 3>> sums;
  for (const auto& r : table.rows) {
    auto& s = sums[{r.plant_id, r.year}];
    s[0] += std::exp(r.l);
    s[1] += std::exp(r.k);
    s[2] += std::exp(r.m);
  }
  int checked = 0;
  for (const auto& [key, s] : sums) {
    const PlantInputTotals* tot = data.panel.find_inputs(key.first, key.second);
    REQUIRE(tot != nullptr);
    CHECK(std::abs(s[0] - tot->labor) <= 1e-9 * tot->labor);
    CHECK(std::abs(s[1] - tot->capital) <= 1e-9 * tot->capital);
    CHECK(std::abs(s[2] - tot->materials) <= 1e-9 * tot->materials);
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("just-identified GMM equals the brute-force moment-equation solve") {
  auto data = generate_synthetic(testutil::small_config(62));
  auto table = inputs_at_truth(data);
  MomentSpec spec;
  spec.preset = MomentSpec::Preset::Col2;  // l, k, m_{t-1} (+ const): just identified
  ProductionEstimate est = estimate_gmm(table, spec);

  // independent direct solve of Z'(y - X b) = 0 on the same usable rows
  std::vector<const ProductInputRow*> rows;
  for (const auto& r : table.rows) {
    if (r.m_lag) rows.push_back(&r);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd X(n, 4), Z(n, 4);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = *rows[static_cast<std::size_t>(i)];
    y[i] = r.y;
    X(i, 0) = r.l;
    X(i, 1) = r.k;
    X(i, 2) = r.m;
    X(i, 3) = 1.0;
    Z(i, 0) = r.l;
    Z(i, 1) = r.k;
    Z(i, 2) = *r.m_lag;
    Z(i, 3) = 1.0;
  }
  Eigen::VectorXd b = (Z.transpose() * X).fullPivLu().solve(Z.transpose() * y);
  CHECK(est.n_obs == static_cast<int>(n));
  CHECK(est.beta_L == doctest::Approx(b[0]).epsilon(1e-8));
  CHECK(est.beta_K == doctest::Approx(b[1]).epsilon(1e-8));
  CHECK(est.beta_M == doctest::Approx(b[2]).epsilon(1e-8));
  CHECK(est.J_dof == 0);
}

TEST_CASE("column-3 GMM recovers the true technology at true demand parameters") {
  SynthConfig cfg = testutil::a1_config(2);
  cfg.n_plants = 250;  // keep the unit test quick; acceptance runs the full panel
  auto data = generate_synthetic(cfg);
  auto table = inputs_at_truth(data, 0.3);
  MomentSpec spec;  // col3 default
  ProductionEstimate est = estimate_gmm(table, spec);

  PipelineConfig pc;
  pc.tau = 0.3;
  pc.market_size = data.market_size;
  pc.calibrate = {data.truth.alpha, data.truth.sigma};
  BootstrapSpec bspec;
  bspec.B = 60;
  bspec.seed = 99;
  bspec.jobs = default_jobs();
  auto bres = block_bootstrap(data.panel, make_production_closure(pc),
                              {"beta_L", "beta_K", "beta_M"}, bspec);
  REQUIRE(bres.se.size() == 3);
  CHECK(std::abs(est.beta_L - 0.6) < 3.0 * bres.se[0]);
  CHECK(std::abs(est.beta_K - 0.2) < 3.0 * bres.se[1]);
  CHECK(std::abs(est.beta_M - 0.2) < 3.0 * bres.se[2]);
  CHECK(est.J_dof == 1);  // 5 instruments, 4 parameters
}

TEST_CASE("GMM objective is locally optimal at the estimate") {
  auto data = generate_synthetic(testutil::small_config(63));
  auto table = inputs_at_truth(data);
  MomentSpec spec;
  ProductionEstimate est = estimate_gmm(table, spec);
  double at_opt = gmm_objective(table, spec, est.coef);
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::VectorXd delta(est.coef.size());
    for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] = rng.normal();
    delta *= 0.1 / delta.norm();
    CHECK(gmm_objective(table, spec, est.coef + delta) >= at_opt - 1e-9 * (1.0 + at_opt));
  }
}

TEST_CASE("under-identification is rejected") {
  ProductInputTable table;
  for (int i = 0; i < 20; ++i) {
    ProductInputRow r;
    r.plant_id = "p" + std::to_string(i);
    r.year = 2000;
    r.product.code5 = "10101";
    r.y = r.l = r.k = r.m = static_cast<double>(i);
    // no m_lag, no z: col1/col2/col3 all lack instruments
    table.rows.push_back(r);
  }
  MomentSpec spec;
  CHECK_THROWS_AS(estimate_gmm(table, spec), Error);
}

TEST_CASE("bootstrap determinism and degeneracy handling") {
  auto data = generate_synthetic(testutil::tiny_config(64));
  PipelineConfig pc;
  pc.tau = 0.5;
  pc.market_size = data.market_size;
  pc.calibrate = {data.truth.alpha, data.truth.sigma};
  auto closure = make_production_closure(pc);

  SUBCASE("same seed twice gives identical SE tables") {
    BootstrapSpec spec;
    spec.B = 24;
    spec.seed = 7;
    auto a = block_bootstrap(data.panel, closure, {"bL", "bK", "bM"}, spec);
    auto b = block_bootstrap(data.panel, closure, {"bL", "bK", "bM"}, spec);
    CHECK(bootstrap_draws_to_csv(a) == bootstrap_draws_to_csv(b));
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.se[i] == b.se[i]);
  }
  SUBCASE("results are schedule-independent") {
    BootstrapSpec s1;
    s1.B = 16;
    s1.seed = 7;
    s1.jobs = 1;
    BootstrapSpec s2 = s1;
    s2.jobs = 4;
    auto a = block_bootstrap(data.panel, closure, {"bL", "bK", "bM"}, s1);
    auto b = block_bootstrap(data.panel, closure, {"bL", "bK", "bM"}, s2);
    CHECK(bootstrap_draws_to_csv(a) == bootstrap_draws_to_csv(b));
  }
  SUBCASE("a constant closure has zero standard errors") {
    PipelineClosure constant = [](const Panel&, const std::optional<std::pair<double, double>>&) {
      return std::optional<std::vector<double>>{{1.0, 2.0, 3.0}};
    };
    BootstrapSpec spec;
    spec.B = 2;
    spec.seed = 1;
    auto r = block_bootstrap(data.panel, constant, {"a", "b", "c"}, spec);
    CHECK(r.se[0] == 0.0);
    CHECK(r.se[1] == 0.0);
    CHECK(r.se[2] == 0.0);
  }
  SUBCASE("failures are counted and excessive failure is an error") {
    int calls = 0;
    (void)calls;
    PipelineClosure flaky = [](const Panel& p, const std::optional<std::pair<double, double>>&)
        -> std::optional<std::vector<double>> {
      // fail based on a deterministic property of the resample
      if (p.observations.size() % 3 == 0) return std::nullopt;
      return std::vector<double>{1.0, 2.0, 3.0};
    };
    BootstrapSpec spec;
    spec.B = 30;
    spec.seed = 3;
    spec.max_failure_frac = 0.99;
    auto r = block_bootstrap(data.panel, flaky, {"a", "b", "c"}, spec);
    CHECK(r.n_failed > 0);
    CHECK(r.draws.size() + static_cast<std::size_t>(r.n_failed) == 30);

    PipelineClosure dead = [](const Panel&, const std::optional<std::pair<double, double>>&)
        -> std::optional<std::vector<double>> { return std::nullopt; };
    spec.max_failure_frac = 0.2;
    CHECK_THROWS_AS(block_bootstrap(data.panel, dead, {"a"}, spec), Error);
  }
  SUBCASE("B below two is rejected") {
    BootstrapSpec spec;
    spec.B = 1;
    CHECK_THROWS_AS(block_bootstrap(data.panel, closure, {"a"}, spec), Error);
  }
}

TEST_CASE("semi-parametric mode draws demand parameters and skips inadmissible ones") {
  auto data = generate_synthetic(testutil::tiny_config(65));
  PipelineConfig pc;
  pc.tau = 0.5;
  pc.market_size = data.market_size;
  std::vector<std::pair<double, double>> seen;
  PipelineClosure recorder = [&seen](const Panel&, const std::optional<std::pair<double, double>>& d)
      -> std::optional<std::vector<double>> {
    REQUIRE(d.has_value());
    seen.push_back(*d);
    return std::vector<double>{d->first, d->second};
  };
  DemandDraw dd;
  dd.alpha = 0.5;
  dd.sigma = 0.4;
  dd.vcov << 0.04, 0.0, 0.0, 0.09;  // sd 0.2 on alpha, 0.3 on the nest coefficient
  BootstrapSpec spec;
  spec.B = 200;
  spec.seed = 11;
  spec.mode = BootstrapMode::SemiParametric;
  spec.max_failure_frac = 0.75;
  auto r = block_bootstrap(data.panel, recorder, {"alpha", "sigma"}, spec, dd);
  CHECK(r.draws.size() + static_cast<std::size_t>(r.n_failed) == 200);
  // every accepted draw admissible, and draws genuinely vary
  double min_a = 1e9, max_a = -1e9;
  for (const auto& [b, vals] : r.draws) {
    (void)b;
    CHECK(vals[0] > 0.0);
    CHECK(vals[1] > 0.0);
    CHECK(vals[1] < 1.0);
    min_a = std::min(min_a, vals[0]);
    max_a = std::max(max_a, vals[0]);
  }
  CHECK(max_a - min_a > 0.1);
  // inadmissible draws do exist at these dispersions and are skipped
  CHECK(r.n_failed > 0);
}

TEST_CASE("bootstrap intervals cover the true materials elasticity") {
  // Monte Carlo: 200 small panels, nonparametric bootstrap at true demand
  // parameters, 90% normal intervals for beta_M.
  const int panels = 200;
  std::vector<int> covered(panels, 0);
  std::atomic<int> failures{0};
  parallel_for(static_cast<std::size_t>(panels), default_jobs(), [&](std::size_t i) {
    SynthConfig cfg = testutil::tiny_config(5000 + static_cast<std::uint64_t>(i));
    cfg.n_plants = 60;
    auto data = generate_synthetic(cfg);
    PipelineConfig pc;
    pc.tau = 0.6;
    pc.market_size = data.market_size;
    pc.calibrate = {data.truth.alpha, data.truth.sigma};
    try {
      PipelineResult base = run_pipeline(data.panel, pc);
      if (!base.production) {
        failures += 1;
        return;
      }
      BootstrapSpec bspec;
      bspec.B = 40;
      bspec.seed = 100 + i;
      auto bres = block_bootstrap(data.panel, make_production_closure(pc),
                                  {"bL", "bK", "bM"}, bspec);
      double lo = base.production->beta_M - 1.6448536269514722 * bres.se[2];
      double hi = base.production->beta_M + 1.6448536269514722 * bres.se[2];
      covered[i] = (0.2 >= lo && 0.2 <= hi) ? 1 : 0;
    } catch (const Error&) {
      failures += 1;
    }
  });
  int n_ok = panels - failures.load();
  REQUIRE(n_ok > 150);
  double coverage = 0.0;
  for (int c : covered) coverage += c;
  coverage /= static_cast<double>(n_ok);
  MESSAGE("coverage ", coverage, " over ", n_ok, " panels");
  CHECK(coverage >= 0.80);
  CHECK(coverage <= 0.97);
}
