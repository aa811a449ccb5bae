// prodloom command line: ingestion, synthetic data, single-threshold
// estimation, the tau sweep, bootstrap inference, and report regeneration.
// Every subcommand writes a manifest echoing its configuration and the
// content hash of each output file.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "prodloom/csv.hpp"
#include "prodloom/parallel.hpp"
#include "prodloom/pipeline.hpp"
#include "prodloom/sweep.hpp"
#include "prodloom/synth.hpp"

using namespace prodloom;

namespace {

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Schema:
    case ErrorKind::DuplicateKey:
    case ErrorKind::MissingMapping:
    case ErrorKind::Config:
    case ErrorKind::Io:
      return 1;
    default:
      return 2;
  }
}

std::uint64_t seed_or_env(std::optional<std::uint64_t> seed, bool required) {
  if (seed) return *seed;
  if (const char* env = std::getenv("PRODLOOM_SEED")) {
    return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
  }
  if (required) {
    throw Error(ErrorKind::Config, "a seed is required: pass --seed or set PRODLOOM_SEED");
  }
  return 0;
}

struct DataArgs {
  std::string dir;
  double kappa = 2.0;
  bool use_market_size_file = true;
};

Panel load_data(const DataArgs& args, MarketSizeRule* rule) {
  LoadResult lr = load_panel(args.dir + "/outputs.csv", args.dir + "/inputs.csv",
                             args.dir + "/purchases.csv");
  rule->kappa = args.kappa;
  std::string ms = args.dir + "/market_size.csv";
  if (args.use_market_size_file && std::filesystem::exists(ms)) {
    *rule = load_market_size(ms);
    rule->kappa = args.kappa;
  }
  return std::move(lr.panel);
}

std::optional<std::pair<double, double>> parse_calibrate(const std::string& s) {
  if (s.empty()) return std::nullopt;
  // "alpha=0.2,sigma=0.5"
  double a = 0.0, sg = 0.0;
  bool have_a = false, have_s = false;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    std::string part = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t eq = part.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, "bad --calibrate value: " + s);
    std::string key = part.substr(0, eq), val = part.substr(eq + 1);
    if (key == "alpha") {
      a = parse_double(val, "--calibrate alpha");
      have_a = true;
    } else if (key == "sigma") {
      sg = parse_double(val, "--calibrate sigma");
      have_s = true;
    } else {
      throw Error(ErrorKind::Config, "unknown --calibrate key: " + key);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (!have_a || !have_s) {
    throw Error(ErrorKind::Config, "--calibrate needs alpha=..,sigma=..");
  }
  return std::make_pair(a, sg);
}

MomentSpec::Preset parse_preset(const std::string& s) {
  if (s == "col1") return MomentSpec::Preset::Col1;
  if (s == "col2") return MomentSpec::Preset::Col2;
  if (s == "col3") return MomentSpec::Preset::Col3;
  throw Error(ErrorKind::Config, "unknown GMM preset '" + s + "' (col1|col2|col3)");
}

std::vector<std::pair<std::string, std::string>> base_meta(const PipelineConfig& cfg,
                                                           const std::string& command) {
  return {
      {"command", command},
      {"tau", fmt_double(cfg.tau)},
      {"kappa", fmt_double(cfg.market_size.kappa)},
      {"gmm_preset", preset_name(cfg.gmm.preset)},
      {"calibrate", cfg.calibrate ? fmt_double(cfg.calibrate->first) + "," +
                                        fmt_double(cfg.calibrate->second)
                                  : std::string("none")},
      {"spec_hash", cfg.hash()},
  };
}

void write_estimate_outputs(const Panel& panel, const PipelineResult& r, const PipelineConfig& cfg,
                            const std::string& outdir, unsigned jobs, int bootstrap_B,
                            std::uint64_t seed, BootstrapMode mode) {
  std::filesystem::create_directories(outdir);
  std::string spec_hash = cfg.hash();
  std::vector<std::string> files;

  write_text_file(outdir + "/instruments.csv", instruments_to_csv(r.instruments));
  files.push_back("instruments.csv");
  if (r.demand) {
    write_text_file(outdir + "/demand_estimate.csv",
                    demand_estimate_to_csv(*r.demand, r.tau, spec_hash));
    files.push_back("demand_estimate.csv");
  }
  if (r.allocations) {
    write_text_file(outdir + "/allocations.csv", allocations_to_csv(r.allocations->rows));
    files.push_back("allocations.csv");
  }
  TableInputs tables;
  tables.spec_hash = spec_hash;
  if (r.production) {
    ProductionEstimate chosen = *r.production;
    if (bootstrap_B > 0) {
      BootstrapSpec bspec;
      bspec.B = bootstrap_B;
      bspec.seed = seed;
      bspec.mode = mode;
      bspec.jobs = jobs;
      std::optional<DemandDraw> dd;
      if (mode == BootstrapMode::SemiParametric && r.demand) {
        DemandDraw d;
        d.alpha = r.demand->alpha;
        d.sigma = r.demand->sigma;
        d.vcov = r.demand->vcov.topLeftCorner(2, 2);
        dd = d;
      }
      auto bres = block_bootstrap(panel, make_production_closure(cfg),
                                  {"beta_L", "beta_K", "beta_M"}, bspec, dd);
      chosen.se_bootstrap = bres.se;
      write_text_file(outdir + "/bootstrap_draws.csv", bootstrap_draws_to_csv(bres));
      files.push_back("bootstrap_draws.csv");
    }
    write_text_file(outdir + "/production_estimate.csv",
                    production_estimate_to_csv(chosen, preset_name(cfg.gmm.preset), spec_hash));
    files.push_back("production_estimate.csv");

    // all three presets for the Table 1 shape
    for (auto preset : {MomentSpec::Preset::Col1, MomentSpec::Preset::Col2, MomentSpec::Preset::Col3}) {
      try {
        MomentSpec ms = cfg.gmm;
        ms.preset = preset;
        tables.by_preset[preset_name(preset)] = estimate_gmm(*r.product_inputs, ms);
      } catch (const Error&) {
        // preset unavailable on this sample (for example no usable lags)
      }
    }
    if (tables.by_preset.count(preset_name(cfg.gmm.preset))) {
      tables.by_preset[preset_name(cfg.gmm.preset)] = chosen;
    }
  }
  if (!r.tfpr.empty()) {
    write_text_file(outdir + "/tfpr.csv", tfpr_to_csv(r.tfpr, spec_hash));
    files.push_back("tfpr.csv");
  }
  if (!r.gains.empty()) {
    write_text_file(outdir + "/gains.csv", gains_to_csv(r.gains, spec_hash));
    files.push_back("gains.csv");
    double lo = 0.0, hi = 0.0;
    for (const auto& g : r.gains) {
      lo += g.gain_lower;
      hi += g.gain_upper;
    }
    tables.gain_lower_mean = lo / static_cast<double>(r.gains.size());
    tables.gain_upper_mean = hi / static_cast<double>(r.gains.size());
  }
  if (r.probit && r.me) {
    write_text_file(outdir + "/probit.csv", probit_to_csv(*r.probit, *r.me, spec_hash));
    files.push_back("probit.csv");
    tables.me_1sd = r.me->me;
    tables.me_se = r.me->se;
  }
  emit_tables(tables, outdir);
  files.push_back("table1.csv");
  files.push_back("table2.csv");

  auto meta = base_meta(cfg, "estimate");
  meta.push_back({"admissible", r.admissible ? "1" : "0"});
  meta.push_back({"n_obs", fmt_int(r.n_obs)});
  if (!r.note.empty()) meta.push_back({"note", r.note});
  std::sort(files.begin(), files.end());
  write_manifest(meta, files, outdir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plant-product productivity pipeline"};
  app.set_config("--config", "", "line-oriented key=value configuration file");
  app.require_subcommand(1);

  unsigned jobs = default_jobs();
  app.add_option("--jobs", jobs, "worker threads for sweep grid points and bootstrap");

  // ingest
  auto* cmd_ingest = app.add_subcommand("ingest", "load, validate and normalize a CSV panel");
  std::string in_outputs, in_inputs, in_purchases, in_concordance, out_dir;
  bool concordance_permissive = false;
  cmd_ingest->add_option("--outputs", in_outputs)->required();
  cmd_ingest->add_option("--inputs", in_inputs)->required();
  cmd_ingest->add_option("--purchases", in_purchases)->required();
  cmd_ingest->add_option("--concordance", in_concordance, "optional code concordance to apply");
  cmd_ingest->add_flag("--drop-unmapped", concordance_permissive,
                       "drop codes missing from the concordance instead of failing");
  cmd_ingest->add_option("--out", out_dir)->required();

  // synth
  auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic panel with known truth");
  SynthConfig synth_cfg;
  std::optional<std::uint64_t> seed_opt;
  std::string synth_out;
  cmd_synth->add_option("--plants", synth_cfg.n_plants);
  cmd_synth->add_option("--years", synth_cfg.n_years);
  cmd_synth->add_option("--markets", synth_cfg.n_markets);
  cmd_synth->add_option("--nests-per-market", synth_cfg.nests_per_market);
  cmd_synth->add_option("--alpha", synth_cfg.alpha);
  cmd_synth->add_option("--sigma", synth_cfg.sigma);
  cmd_synth->add_option("--beta-l", synth_cfg.beta_L);
  cmd_synth->add_option("--beta-k", synth_cfg.beta_K);
  cmd_synth->add_option("--beta-m", synth_cfg.beta_M);
  cmd_synth->add_option("--endogeneity", synth_cfg.endogeneity);
  cmd_synth->add_option("--seed", seed_opt);
  cmd_synth->add_option("--out", synth_out)->required();

  // shared estimation options
  auto add_pipeline_options = [&](CLI::App* cmd, DataArgs* data, PipelineConfig* cfg,
                                  std::string* calibrate, std::string* preset) {
    cmd->add_option("--data", data->dir, "directory with outputs/inputs/purchases CSVs")->required();
    cmd->add_option("--kappa", data->kappa, "market size multiplier when market_size.csv is absent");
    cmd->add_option("--calibrate", *calibrate, "fix demand parameters: alpha=..,sigma=..");
    cmd->add_option("--gmm-preset", *preset, "col1|col2|col3");
    cmd->add_option("--min-contributors", cfg->iv.min_contributors);
    cmd->add_flag("--pooled-purchase-shares", cfg->purchase_shares_pooled);
    cmd->add_flag("--ame", [cfg](std::int64_t) { cfg->probit_at_means = false; },
                  "average marginal effects instead of at-means");
  };

  // estimate
  auto* cmd_estimate = app.add_subcommand("estimate", "single-threshold full pipeline");
  DataArgs est_data;
  PipelineConfig est_cfg;
  std::string est_calibrate, est_preset = "col3", est_out;
  double est_tau = 0.3;
  int est_bootstrap = 0;
  std::string est_mode = "nonparametric";
  cmd_estimate->add_option("--tau", est_tau);
  add_pipeline_options(cmd_estimate, &est_data, &est_cfg, &est_calibrate, &est_preset);
  cmd_estimate->add_option("--bootstrap", est_bootstrap, "bootstrap replications for SEs");
  cmd_estimate->add_option("--mode", est_mode, "nonparametric|semiparametric");
  cmd_estimate->add_option("--seed", seed_opt);
  cmd_estimate->add_option("--out", est_out)->required();

  // sweep
  auto* cmd_sweep = app.add_subcommand("sweep", "threshold robustness sweep");
  DataArgs sweep_data;
  PipelineConfig sweep_cfg;
  std::string sweep_calibrate, sweep_preset = "col3", sweep_out, grid_spec = "0:1:0.01";
  cmd_sweep->add_option("--grid", grid_spec, "a:b:step");
  add_pipeline_options(cmd_sweep, &sweep_data, &sweep_cfg, &sweep_calibrate, &sweep_preset);
  cmd_sweep->add_option("--out", sweep_out)->required();

  // bootstrap
  auto* cmd_boot = app.add_subcommand("bootstrap", "block-bootstrap production SEs");
  DataArgs boot_data;
  PipelineConfig boot_cfg;
  std::string boot_calibrate, boot_preset = "col3", boot_out, boot_mode = "nonparametric";
  double boot_tau = 0.3;
  int boot_B = 1000;
  cmd_boot->add_option("--tau", boot_tau);
  add_pipeline_options(cmd_boot, &boot_data, &boot_cfg, &boot_calibrate, &boot_preset);
  cmd_boot->add_option("--bootstrap", boot_B, "replication count B");
  cmd_boot->add_option("--mode", boot_mode, "nonparametric|semiparametric");
  cmd_boot->add_option("--seed", seed_opt);
  cmd_boot->add_option("--out", boot_out)->required();

  // report
  auto* cmd_report = app.add_subcommand("report", "regenerate figure specs from a sweep.csv");
  std::string report_sweep, report_out;
  cmd_report->add_option("--sweep", report_sweep)->required();
  cmd_report->add_option("--out", report_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // prints usage; nonzero on error
  }

  try {
    if (*cmd_ingest) {
      LoadResult lr = load_panel(in_outputs, in_inputs, in_purchases);
      Panel panel = std::move(lr.panel);
      if (!in_concordance.empty()) {
        panel = apply_concordance(panel, load_concordance(in_concordance), !concordance_permissive);
      }
      ValidationReport report = validate_panel(panel);
      std::filesystem::create_directories(out_dir);
      save_panel(panel, out_dir);
      write_text_file(out_dir + "/ingest.log", lr.log.to_string() + report.to_string());
      write_manifest({{"command", "ingest"},
                      {"findings", fmt_int(static_cast<long long>(report.findings.size()))},
                      {"dropped", fmt_int(lr.log.dropped)}},
                     {"outputs.csv", "inputs.csv", "purchases.csv", "ingest.log"}, out_dir);
      std::cout << "ingested " << panel.observations.size() << " observations, "
                << report.findings.size() << " findings\n";
      return report.empty() ? 0 : 1;
    }

    if (*cmd_synth) {
      synth_cfg.seed = seed_or_env(seed_opt, false);
      SynthData data = generate_synthetic(synth_cfg);
      write_synth(data, synth_out);
      write_manifest({{"command", "synth"},
                      {"seed", fmt_int(static_cast<long long>(synth_cfg.seed))},
                      {"plants", fmt_int(synth_cfg.n_plants)},
                      {"years", fmt_int(synth_cfg.n_years)},
                      {"alpha", fmt_double(synth_cfg.alpha)},
                      {"sigma", fmt_double(synth_cfg.sigma)},
                      {"endogeneity", fmt_double(synth_cfg.endogeneity)}},
                     {"outputs.csv", "inputs.csv", "purchases.csv", "market_size.csv", "truth.csv",
                      "truth_params.csv"},
                     synth_out);
      std::cout << "wrote synthetic panel: " << data.panel.observations.size()
                << " observations\n";
      return 0;
    }

    if (*cmd_estimate) {
      if (est_tau < 0.0 || est_tau > 1.0) {
        throw Error(ErrorKind::Config,
                    "--tau must lie in [0,1], got " + fmt_double(est_tau));
      }
      est_cfg.tau = est_tau;
      est_cfg.calibrate = parse_calibrate(est_calibrate);
      est_cfg.gmm.preset = parse_preset(est_preset);
      Panel panel = load_data(est_data, &est_cfg.market_size);
      PipelineResult r = run_pipeline(panel, est_cfg);
      BootstrapMode mode = est_mode == "semiparametric" ? BootstrapMode::SemiParametric
                                                        : BootstrapMode::Nonparametric;
      std::uint64_t seed = seed_or_env(seed_opt, est_bootstrap > 0);
      write_estimate_outputs(panel, r, est_cfg, est_out, jobs, est_bootstrap, seed, mode);
      std::cout << "tau=" << est_tau << " admissible=" << (r.admissible ? "yes" : "no")
                << " n_obs=" << r.n_obs << "\n";
      return 0;
    }

    if (*cmd_sweep) {
      sweep_cfg.calibrate = parse_calibrate(sweep_calibrate);
      sweep_cfg.gmm.preset = parse_preset(sweep_preset);
      Panel panel = load_data(sweep_data, &sweep_cfg.market_size);
      SweepTable table = run_threshold_sweep(panel, parse_grid(grid_spec), sweep_cfg, jobs);
      auto meta = base_meta(sweep_cfg, "sweep");
      meta.push_back({"grid", grid_spec});
      emit_report(table, meta, sweep_out);
      std::cout << "sweep complete: " << table.size() << " grid points\n";
      return 0;
    }

    if (*cmd_boot) {
      boot_cfg.tau = boot_tau;
      boot_cfg.calibrate = parse_calibrate(boot_calibrate);
      boot_cfg.gmm.preset = parse_preset(boot_preset);
      Panel panel = load_data(boot_data, &boot_cfg.market_size);
      std::uint64_t seed = seed_or_env(seed_opt, true);

      PipelineResult base = run_pipeline(panel, boot_cfg);
      if (!base.production) {
        throw Error(ErrorKind::Identification,
                    "baseline pipeline produced no production estimate (inadmissible demand?)");
      }
      BootstrapSpec bspec;
      bspec.B = boot_B;
      bspec.seed = seed;
      bspec.jobs = jobs;
      bspec.mode = boot_mode == "semiparametric" ? BootstrapMode::SemiParametric
                                                 : BootstrapMode::Nonparametric;
      std::optional<DemandDraw> dd;
      if (bspec.mode == BootstrapMode::SemiParametric) {
        if (!base.demand) {
          throw Error(ErrorKind::Config,
                      "semi-parametric bootstrap needs an estimated demand stage");
        }
        DemandDraw d;
        d.alpha = base.demand->alpha;
        d.sigma = base.demand->sigma;
        d.vcov = base.demand->vcov.topLeftCorner(2, 2);
        dd = d;
      }
      auto bres = block_bootstrap(panel, make_production_closure(boot_cfg),
                                  {"beta_L", "beta_K", "beta_M"}, bspec, dd);
      ProductionEstimate est = *base.production;
      est.se_bootstrap = bres.se;
      std::filesystem::create_directories(boot_out);
      write_text_file(boot_out + "/production_estimate.csv",
                      production_estimate_to_csv(est, preset_name(boot_cfg.gmm.preset),
                                                 boot_cfg.hash()));
      write_text_file(boot_out + "/bootstrap_draws.csv", bootstrap_draws_to_csv(bres));
      auto meta = base_meta(boot_cfg, "bootstrap");
      meta.push_back({"B", fmt_int(boot_B)});
      meta.push_back({"seed", fmt_int(static_cast<long long>(seed))});
      meta.push_back({"mode", boot_mode});
      meta.push_back({"failed", fmt_int(bres.n_failed)});
      write_manifest(meta, {"production_estimate.csv", "bootstrap_draws.csv"}, boot_out);
      std::cout << "bootstrap done: B=" << boot_B << " failed=" << bres.n_failed << "\n";
      return 0;
    }

    if (*cmd_report) {
      SweepTable table = sweep_from_csv(report_sweep);
      emit_report(table, {{"command", "report"}, {"source", report_sweep}}, report_out);
      std::cout << "report regenerated from " << report_sweep << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << error_kind_name(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
