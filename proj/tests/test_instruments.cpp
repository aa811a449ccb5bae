#include <doctest.h>

#include <cmath>

#include "prodloom/instruments.hpp"
#include "prodloom/rng.hpp"
#include "prodloom/synth.hpp"
#include "test_util.hpp"

using namespace prodloom;

namespace {

InputPurchase purchase(const std::string& plant, int year, const std::string& code, double qty,
                       double value) {
  InputPurchase p;
  p.plant_id = plant;
  p.year = year;
  p.input_code = code;
  p.quantity = qty;
  p.value = value;
  p.unit_value = value / qty;
  return p;
}

// single-product plant fixture with a one-code basket
Panel growth_panel(const std::vector<std::pair<double, double>>& unit_values_by_plant) {
  std::vector<PlantProductObs> obs;
  std::vector<PlantInputTotals> inputs;
  std::vector<InputPurchase> purchases;
  std::unordered_map<std::string, Sector> tags;
  int i = 0;
  for (const auto& [uv0, uv1] : unit_values_by_plant) {
    std::string plant = "p" + std::to_string(++i);
    for (int year : {2000, 2001}) {
      PlantProductObs o;
      o.plant_id = plant;
      o.year = year;
      o.product.code5 = "10101";
      o.quantity = 1;
      o.revenue = 10;
      o.unit_price = 10;
      obs.push_back(o);
      PlantInputTotals r;
      r.plant_id = plant;
      r.year = year;
      r.labor = r.capital = r.materials = 1;
      inputs.push_back(r);
      purchases.push_back(purchase(plant, year, "c1", 1.0, year == 2000 ? uv0 : uv1));
    }
    tags[plant] = Sector::Other;
  }
  return make_panel(obs, inputs, purchases, tags);
}

}  // namespace

TEST_CASE("machinery purchase shares are value ratios") {
  std::unordered_map<std::string, Sector> tags = {{"m1", Sector::Machinery},
                                                  {"o1", Sector::Other}};
  SUBCASE("mixed buyers") {
    auto t = compute_purchase_shares({purchase("m1", 2000, "c1", 1, 30),
                                      purchase("o1", 2000, "c1", 1, 70)},
                                     tags);
    REQUIRE(t.size() == 1);
    CHECK(t[0].machinery_share == doctest::Approx(0.30).epsilon(1e-12));
  }
  SUBCASE("only non-machinery buyers") {
    auto t = compute_purchase_shares({purchase("o1", 2000, "c1", 1, 70)}, tags);
    CHECK(t[0].machinery_share == doctest::Approx(0.0));
  }
  SUBCASE("only machinery buyers") {
    auto t = compute_purchase_shares({purchase("m1", 2000, "c1", 1, 30)}, tags);
    CHECK(t[0].machinery_share == doctest::Approx(1.0));
  }
  SUBCASE("zero total value omits the row") {
    auto t = compute_purchase_shares({purchase("m1", 2000, "c1", 1, 0)}, tags);
    CHECK(t.empty());
  }
}

TEST_CASE("threshold filter keeps codes at or below tau") {
  PurchaseShareTable table = {{"A", 2000, 0.1}, {"B", 2000, 0.35}, {"C", 2000, 0.9},
                              {"Z", 2000, 0.0}};
  auto at = [&](double tau) { return filter_input_codes(table, tau); };
  CHECK(at(0.3).contains("A", 2000));
  CHECK(!at(0.3).contains("B", 2000));
  CHECK(!at(0.3).contains("C", 2000));
  CHECK(at(1.0).size() == 4);
  CHECK(at(0.0).size() == 1);  // only the zero-share code
  CHECK(at(0.0).contains("Z", 2000));
  CHECK_THROWS_AS(at(-0.1), Error);
  CHECK_THROWS_AS(at(1.5), Error);
}

TEST_CASE("retention is monotone in tau") {
  auto data = generate_synthetic(testutil::small_config(9));
  auto shares = compute_purchase_shares(data.panel.purchases, data.panel.sector_tags);
  std::size_t prev = 0;
  for (int i = 0; i <= 20; ++i) {
    auto r = filter_input_codes(shares, i / 20.0);
    CHECK(r.size() >= prev);
    prev = r.size();
  }
  // set inclusion, not just counts
  auto lo = filter_input_codes(shares, 0.25);
  auto hi = filter_input_codes(shares, 0.65);
  for (const auto& key : lo.code_years) {
    CHECK(hi.code_years.count(key) == 1);
  }
}

TEST_CASE("single plant, one retained code: Z is the log growth") {
  Panel panel = growth_panel({{10.0, 11.0}});
  RetainedCodeSet retained;
  retained.code_years = {{"c1", 2000}, {"c1", 2001}};
  auto iv = build_price_growth_iv(panel, retained);
  REQUIRE(iv.size() == 1);
  CHECK(iv[0].nest5 == "10101");
  CHECK(iv[0].year == 2001);
  CHECK(iv[0].Z == doctest::Approx(std::log(1.1)).epsilon(1e-12));
  CHECK(iv[0].n_contributing == 1);
}

TEST_CASE("two plants: Z is the unweighted mean of plant growths") {
  Panel panel = growth_panel({{10.0, 10.0}, {10.0, 10.0 * std::exp(0.2)}});
  RetainedCodeSet retained;
  retained.code_years = {{"c1", 2000}, {"c1", 2001}};
  auto iv = build_price_growth_iv(panel, retained);
  REQUIRE(iv.size() == 1);
  CHECK(iv[0].Z == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(iv[0].n_contributing == 2);
}

TEST_CASE("constant unit values give zero growth everywhere") {
  auto data = generate_synthetic(testutil::tiny_config(4));
  std::vector<InputPurchase> flat = data.panel.purchases;
  for (auto& p : flat) {
    p.unit_value = 3.0;
    p.value = p.unit_value * p.quantity;
  }
  Panel panel = make_panel(data.panel.observations, data.panel.inputs, flat,
                           data.panel.sector_tags);
  auto shares = compute_purchase_shares(panel.purchases, panel.sector_tags);
  auto iv = build_price_growth_iv(panel, filter_input_codes(shares, 1.0));
  REQUIRE(!iv.empty());
  for (const auto& r : iv) CHECK(std::abs(r.Z) < 1e-12);
}

TEST_CASE("Z is invariant to rescaling a code's unit values") {
  auto data = generate_synthetic(testutil::tiny_config(6));
  auto shares = compute_purchase_shares(data.panel.purchases, data.panel.sector_tags);
  auto retained = filter_input_codes(shares, 1.0);
  auto base = build_price_growth_iv(data.panel, retained);

  std::string some_code = data.panel.purchases.front().input_code;
  std::vector<InputPurchase> scaled = data.panel.purchases;
  for (auto& p : scaled) {
    if (p.input_code == some_code) {
      p.unit_value *= 13.0;
      p.value = p.unit_value * p.quantity;
    }
  }
  Panel panel = make_panel(data.panel.observations, data.panel.inputs, scaled,
                           data.panel.sector_tags);
  auto iv = build_price_growth_iv(panel, retained);
  REQUIRE(iv.size() == base.size());
  for (std::size_t i = 0; i < iv.size(); ++i) {
    CHECK(iv[i].Z == doctest::Approx(base[i].Z).epsilon(1e-9));
  }
}

TEST_CASE("instrument construction is deterministic") {
  auto data = generate_synthetic(testutil::tiny_config(8));
  auto shares = compute_purchase_shares(data.panel.purchases, data.panel.sector_tags);
  auto retained = filter_input_codes(shares, 0.4);
  auto a = build_price_growth_iv(data.panel, retained);
  auto b = build_price_growth_iv(data.panel, retained);
  CHECK(instruments_to_csv(a) == instruments_to_csv(b));
}

TEST_CASE("min_contributors drops sparse cells") {
  Panel panel = growth_panel({{10.0, 11.0}});
  RetainedCodeSet retained;
  retained.code_years = {{"c1", 2000}, {"c1", 2001}};
  IvConfig config;
  config.min_contributors = 2;
  CHECK(build_price_growth_iv(panel, retained, config).empty());
}
