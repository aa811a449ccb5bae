#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "prodloom/csv.hpp"
#include "prodloom/sweep.hpp"
#include "prodloom/synth.hpp"
#include "test_util.hpp"

using namespace prodloom;

namespace {

PipelineConfig config_for(const SynthData& data) {
  PipelineConfig cfg;
  cfg.market_size = data.market_size;
  return cfg;
}

}  // namespace

TEST_CASE("grid parsing") {
  CHECK(default_grid().size() == 101);
  CHECK(default_grid().front() == 0.0);
  CHECK(default_grid().back() == 1.0);
  auto g = parse_grid("0:1:0.25");
  REQUIRE(g.size() == 5);
  CHECK(g[1] == doctest::Approx(0.25));
  CHECK_THROWS_AS(parse_grid("0:2:0.5"), Error);
  CHECK_THROWS_AS(parse_grid("nonsense"), Error);
}

TEST_CASE("sweep row at a threshold equals a standalone run byte for byte") {
  auto data = generate_synthetic(testutil::tiny_config(71));
  PipelineConfig cfg = config_for(data);
  SweepTable table = run_threshold_sweep(data.panel, {0.2, 0.3, 0.4}, cfg, 2);

  PipelineConfig single = cfg;
  single.tau = 0.3;
  SweepRow standalone = summarize_pipeline(run_pipeline(data.panel, single));
  SweepTable one = {standalone};
  std::string row_sweep = sweep_to_csv({table[1]});
  std::string row_single = sweep_to_csv(one);
  CHECK(row_sweep == row_single);
}

TEST_CASE("observation counts are weakly increasing in tau") {
  auto data = generate_synthetic(testutil::tiny_config(72));
  PipelineConfig cfg = config_for(data);
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
  SweepTable table = run_threshold_sweep(data.panel, grid, cfg, 2);
  for (std::size_t i = 1; i < table.size(); ++i) {
    CHECK(table[i].n_obs >= table[i - 1].n_obs);
  }
}

TEST_CASE("calibrate mode holds demand fixed while the sample varies") {
  auto data = generate_synthetic(testutil::tiny_config(73));
  PipelineConfig cfg = config_for(data);
  cfg.calibrate = {0.5, 0.4};
  SweepTable table = run_threshold_sweep(data.panel, {0.1, 0.3, 0.6, 0.9}, cfg, 2);
  std::set<int> nobs;
  for (const auto& r : table) {
    REQUIRE(r.alpha.has_value());
    CHECK(*r.alpha == 0.5);
    CHECK(*r.sigma == 0.4);
    CHECK(r.admissible);
    nobs.insert(r.n_obs);
  }
  CHECK(nobs.size() > 1);  // sample size varies with tau
}

TEST_CASE("grid point failures are recorded in the row, not thrown") {
  auto data = generate_synthetic(testutil::tiny_config(74));
  PipelineConfig cfg = config_for(data);
  // tau = 0 retains almost nothing: expect identification failures in-row
  SweepTable table = run_threshold_sweep(data.panel, {0.0, 0.5}, cfg, 1);
  REQUIRE(table.size() == 2);
  CHECK((table[0].note.empty() || table[0].note.find(":") != std::string::npos));
  CHECK(table[1].n_obs > 0);
}

TEST_CASE("report emission writes the six figure specs plus csv and manifest") {
  auto data = generate_synthetic(testutil::tiny_config(75));
  PipelineConfig cfg = config_for(data);
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  SweepTable table = run_threshold_sweep(data.panel, grid, cfg, 2);
  REQUIRE(table.size() == 101);

  testutil::TempDir dir("report");
  emit_report(table, {{"command", "test"}, {"seed", "75"}}, dir.path());
  std::vector<std::string> expected = {"sweep.csv",           "fig_p_coef.figspec",
                                       "fig_rs_coef.figspec", "fig_sw_f.figspec",
                                       "fig_nobs.figspec",    "fig_gains.figspec",
                                       "fig_probit_me.figspec", "manifest.txt"};
  for (const auto& f : expected) {
    CHECK(std::filesystem::exists(dir.path() + "/" + f));
  }
  // exactly six figure specs
  int figs = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir.path())) {
    if (entry.path().extension() == ".figspec") ++figs;
  }
  CHECK(figs == 6);

  // gaps render as empty fields, never zeros
  SweepTable gapped = table;
  for (auto& r : gapped) {
    r.gain_lower.reset();
    r.gain_upper.reset();
    r.me_1sd.reset();
    r.me_se.reset();
  }
  testutil::TempDir dir2("report_gaps");
  emit_report(gapped, {{"command", "test"}}, dir2.path());
  std::string fig = read_text_file(dir2.path() + "/fig_gains.figspec");
  CHECK(fig.find(",\n") != std::string::npos);  // empty trailing fields
  std::string csv = read_text_file(dir2.path() + "/sweep.csv");
  CHECK(csv.find(",,") != std::string::npos);

  // regenerating from the same sweep.csv is byte-identical
  SweepTable reread = sweep_from_csv(dir.path() + "/sweep.csv");
  testutil::TempDir dir3("report_again");
  emit_report(reread, {{"command", "test"}, {"seed", "75"}}, dir3.path());
  for (const auto& f : expected) {
    CHECK(read_text_file(dir.path() + "/" + f) == read_text_file(dir3.path() + "/" + f));
  }
}

TEST_CASE("sweep determinism: identical inputs give identical bytes") {
  auto data = generate_synthetic(testutil::tiny_config(76));
  PipelineConfig cfg = config_for(data);
  std::vector<double> grid = {0.2, 0.4, 0.6};
  auto a = run_threshold_sweep(data.panel, grid, cfg, 2);
  auto b = run_threshold_sweep(data.panel, grid, cfg, 1);  // different worker count
  CHECK(sweep_to_csv(a) == sweep_to_csv(b));
}

TEST_CASE("summary tables carry reference rows marked not machine-checked") {
  TableInputs inputs;
  inputs.spec_hash = "abc123";
  inputs.gain_lower_mean = 12.0;
  inputs.gain_upper_mean = 55.0;
  inputs.me_1sd = 6.0;
  inputs.me_se = 2.0;
  testutil::TempDir dir("tables");
  emit_tables(inputs, dir.path());
  std::string t1 = read_text_file(dir.path() + "/table1.csv");
  std::string t2 = read_text_file(dir.path() + "/table2.csv");
  CHECK(t1.find("not machine-checked") != std::string::npos);
  CHECK(t1.find("0.617") != std::string::npos);
  CHECK(t1.find("0.239") != std::string::npos);
  CHECK(t1.find("0.223") != std::string::npos);
  CHECK(t2.find("[8.82, 61.60]") != std::string::npos);
  CHECK(t2.find("6.65") != std::string::npos);
  CHECK(t2.find("2.20") != std::string::npos);
  CHECK(t2.find("not machine-checked") != std::string::npos);
  // this run's values are present and distinguishable
  CHECK(t2.find("me_1sd_pp,6,2,this run,yes,abc123") != std::string::npos);
}

TEST_CASE("empty sweep cannot be reported") {
  CHECK_THROWS_AS(emit_report({}, {}, "/tmp/prodloom_empty_report"), Error);
}
