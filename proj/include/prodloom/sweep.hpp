#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prodloom/pipeline.hpp"

namespace prodloom {

struct SweepRow {
  double tau = 0.0;
  std::optional<double> alpha, se_alpha, sigma, se_sigma;
  std::optional<double> F_p, F_rs;
  int n_obs = 0;
  bool admissible = false;
  // downstream summaries: mean bounds over plant-years, probit ME
  std::optional<double> gain_lower, gain_upper;
  std::optional<double> me_1sd, me_se;
  std::string note;
};

using SweepTable = std::vector<SweepRow>;

std::vector<double> default_grid();  // 0.00 .. 1.00 step 0.01
std::vector<double> parse_grid(const std::string& spec);  // "a:b:step"

SweepRow summarize_pipeline(const PipelineResult& r);

// Runs the pipeline once per grid point. Failures at a grid point are
// recorded in the row's note, never aborting the sweep. Output is ordered by
// tau regardless of worker schedule.
SweepTable run_threshold_sweep(const Panel& panel, const std::vector<double>& grid,
                               const PipelineConfig& config, unsigned jobs = 1);

std::string sweep_to_csv(const SweepTable& table);
SweepTable sweep_from_csv(const std::string& csv_path);

// Writes sweep.csv, the six figure specs, and manifest.txt under outdir.
// meta is echoed into the manifest ahead of the content hashes.
void emit_report(const SweepTable& table, const std::vector<std::pair<std::string, std::string>>& meta,
                 const std::string& outdir);

// Paper-shaped summary tables. table1: Cobb-Douglas GMM estimates per preset
// with published values as reference rows. table2: gain bounds and the
// discontinuation marginal effect.
struct TableInputs {
  std::map<std::string, ProductionEstimate> by_preset;  // "col1", "col2", "col3"
  std::optional<double> gain_lower_mean, gain_upper_mean;
  std::optional<double> me_1sd, me_se;
  std::string spec_hash;
};

void emit_tables(const TableInputs& inputs, const std::string& outdir);

// key=value manifest with one content-hash line per emitted file.
void write_manifest(const std::vector<std::pair<std::string, std::string>>& meta,
                    const std::vector<std::string>& files, const std::string& outdir,
                    const std::string& name = "manifest.txt");

}  // namespace prodloom
