#include "prodloom/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

#include "prodloom/csv.hpp"
#include "prodloom/parallel.hpp"

namespace prodloom {

std::vector<double> default_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  return grid;
}

std::vector<double> parse_grid(const std::string& spec) {
  double a = 0.0, b = 0.0, step = 0.0;
  std::size_t c1 = spec.find(':'), c2 = spec.rfind(':');
  if (c1 == std::string::npos || c2 == c1) {
    throw Error(ErrorKind::Config, "grid must be a:b:step, got '" + spec + "'");
  }
  a = parse_double(spec.substr(0, c1), "grid start");
  b = parse_double(spec.substr(c1 + 1, c2 - c1 - 1), "grid end");
  step = parse_double(spec.substr(c2 + 1), "grid step");
  if (!(step > 0.0) || b < a) throw Error(ErrorKind::Config, "invalid grid '" + spec + "'");
  std::vector<double> grid;
  // integer stepping avoids accumulation drift on the canonical 0.01 grid
  long long n = static_cast<long long>(std::floor((b - a) / step + 1e-9));
  for (long long i = 0; i <= n; ++i) grid.push_back(a + static_cast<double>(i) * step);
  for (double g : grid) {
    if (g < 0.0 || g > 1.0 + 1e-12) {
      throw Error(ErrorKind::Config, "grid value outside [0,1]: " + fmt_double(g));
    }
  }
  return grid;
}

SweepRow summarize_pipeline(const PipelineResult& r) {
  SweepRow row;
  row.tau = r.tau;
  row.n_obs = r.n_obs;
  row.admissible = r.admissible;
  row.F_p = r.F_p;
  row.F_rs = r.F_rs;
  if (r.demand) {
    row.alpha = r.demand->alpha;
    row.se_alpha = r.demand->se_alpha;
    row.sigma = r.demand->sigma;
    row.se_sigma = r.demand->se_sigma;
  } else {
    row.alpha = r.alpha;  // calibrated
    row.sigma = r.sigma;
    row.se_alpha = 0.0;
    row.se_sigma = 0.0;
  }
  row.note = r.note;
  if (!r.admissible) return row;
  if (!r.gains.empty()) {
    double lo = 0.0, hi = 0.0;
    for (const auto& g : r.gains) {
      lo += g.gain_lower;
      hi += g.gain_upper;
    }
    row.gain_lower = lo / static_cast<double>(r.gains.size());
    row.gain_upper = hi / static_cast<double>(r.gains.size());
  }
  if (r.me) {
    row.me_1sd = r.me->me;
    row.me_se = r.me->se;
  }
  return row;
}

SweepTable run_threshold_sweep(const Panel& panel, const std::vector<double>& grid,
                               const PipelineConfig& config, unsigned jobs) {
  SweepTable table(grid.size());
  parallel_for(grid.size(), jobs, [&](std::size_t i) {
    PipelineConfig cfg = config;
    cfg.tau = grid[i];
    try {
      table[i] = summarize_pipeline(run_pipeline(panel, cfg));
    } catch (const Error& e) {
      SweepRow row;
      row.tau = grid[i];
      row.note = std::string(error_kind_name(e.kind())) + ": " + e.what();
      table[i] = row;
    }
  });
  std::sort(table.begin(), table.end(),
            [](const SweepRow& a, const SweepRow& b) { return a.tau < b.tau; });
  return table;
}

static std::string opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

std::string sweep_to_csv(const SweepTable& table) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(table.size());
  for (const auto& r : table) {
    rows.push_back({fmt_double(r.tau), opt(r.alpha), opt(r.se_alpha), opt(r.sigma),
                    opt(r.se_sigma), opt(r.F_p), opt(r.F_rs), fmt_int(r.n_obs),
                    r.admissible ? "1" : "0", opt(r.gain_lower), opt(r.gain_upper), opt(r.me_1sd),
                    opt(r.me_se), r.note});
  }
  return csv_to_string({"tau", "alpha", "se_alpha", "sigma", "se_sigma", "F_p", "F_rs", "n_obs",
                        "admissible", "gain_lower", "gain_upper", "me_1sd", "me_se", "note"},
                       rows);
}

SweepTable sweep_from_csv(const std::string& csv_path) {
  CsvTable t = read_csv(csv_path);
  auto get = [&](const std::vector<std::string>& row, std::size_t c) -> std::optional<double> {
    if (row[c].empty()) return std::nullopt;
    return parse_double(row[c], csv_path);
  };
  std::size_t c_tau = t.col("tau"), c_a = t.col("alpha"), c_sa = t.col("se_alpha"),
              c_s = t.col("sigma"), c_ss = t.col("se_sigma"), c_fp = t.col("F_p"),
              c_fr = t.col("F_rs"), c_n = t.col("n_obs"), c_adm = t.col("admissible"),
              c_gl = t.col("gain_lower"), c_gu = t.col("gain_upper"), c_me = t.col("me_1sd"),
              c_ms = t.col("me_se"), c_note = t.col("note");
  SweepTable table;
  for (const auto& row : t.rows) {
    SweepRow r;
    r.tau = parse_double(row[c_tau], csv_path);
    r.alpha = get(row, c_a);
    r.se_alpha = get(row, c_sa);
    r.sigma = get(row, c_s);
    r.se_sigma = get(row, c_ss);
    r.F_p = get(row, c_fp);
    r.F_rs = get(row, c_fr);
    r.n_obs = parse_int(row[c_n], csv_path);
    r.admissible = row[c_adm] == "1";
    r.gain_lower = get(row, c_gl);
    r.gain_upper = get(row, c_gu);
    r.me_1sd = get(row, c_me);
    r.me_se = get(row, c_ms);
    r.note = row[c_note];
    table.push_back(std::move(r));
  }
  return table;
}

namespace {

struct FigSeries {
  std::string name;
  std::vector<std::string> values;  // empty string renders as a gap
};

void write_figspec(const std::string& path, const std::string& title, const std::string& ylabel,
                   const SweepTable& table, const std::vector<FigSeries>& series,
                   bool band = false) {
  std::ostringstream out;
  out << "figure=" << title << '\n';
  out << "xlabel=exclusion threshold tau\n";
  out << "ylabel=" << ylabel << '\n';
  out << "refline_x=0.3\n";  // threshold used in the original analysis
  if (band) out << "band=90pct\n";
  out << "series=";
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (s) out << ',';
    out << series[s].name;
  }
  out << '\n';
  out << "data:\n";
  out << "tau";
  for (const auto& s : series) out << ',' << s.name;
  out << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << fmt_double(table[i].tau);
    for (const auto& s : series) out << ',' << s.values[i];
    out << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<std::string> column(const SweepTable& t,
                                const std::function<std::optional<double>(const SweepRow&)>& f) {
  std::vector<std::string> out;
  out.reserve(t.size());
  for (const auto& r : t) {
    auto v = f(r);
    out.push_back(v ? fmt_double(*v) : std::string());
  }
  return out;
}

}  // namespace

void write_manifest(const std::vector<std::pair<std::string, std::string>>& meta,
                    const std::vector<std::string>& files, const std::string& outdir,
                    const std::string& name) {
  std::ostringstream out;
  for (const auto& [k, v] : meta) out << k << '=' << v << '\n';
  for (const auto& f : files) {
    std::string content = read_text_file(outdir + "/" + f);
    out << "hash:" << f << '=' << hash_hex(fnv1a(content)) << '\n';
  }
  write_text_file(outdir + "/" + name, out.str());
}

void emit_report(const SweepTable& table,
                 const std::vector<std::pair<std::string, std::string>>& meta,
                 const std::string& outdir) {
  if (table.empty()) throw Error(ErrorKind::Config, "cannot emit a report from an empty sweep");
  std::filesystem::create_directories(outdir);
  write_text_file(outdir + "/sweep.csv", sweep_to_csv(table));

  const double z90 = 1.6448536269514722;  // two-sided 90% normal bands
  auto ci = [&](std::function<std::optional<double>(const SweepRow&)> coef,
                std::function<std::optional<double>(const SweepRow&)> se, double sign) {
    return column(table, [&](const SweepRow& r) -> std::optional<double> {
      auto c = coef(r);
      auto s = se(r);
      if (!c || !s) return std::nullopt;
      return *c + sign * z90 * *s;
    });
  };

  // Panel (a): coefficient on p (that is, -alpha) with a 90% band
  auto coef_p = [](const SweepRow& r) -> std::optional<double> {
    if (!r.alpha) return std::nullopt;
    return -*r.alpha;
  };
  auto se_p = [](const SweepRow& r) { return r.se_alpha; };
  write_figspec(outdir + "/fig_p_coef.figspec", "p_iv_coefficient", "coefficient on p",
                table,
                {{"coef", column(table, coef_p)},
                 {"lo", ci(coef_p, se_p, -1.0)},
                 {"hi", ci(coef_p, se_p, +1.0)}},
                true);

  // Panel (b): coefficient on rs_within (1 - sigma) with a 90% band
  auto coef_rs = [](const SweepRow& r) -> std::optional<double> {
    if (!r.sigma) return std::nullopt;
    return 1.0 - *r.sigma;
  };
  auto se_rs = [](const SweepRow& r) { return r.se_sigma; };
  write_figspec(outdir + "/fig_rs_coef.figspec", "rs_within_iv_coefficient",
                "coefficient on rs_within", table,
                {{"coef", column(table, coef_rs)},
                 {"lo", ci(coef_rs, se_rs, -1.0)},
                 {"hi", ci(coef_rs, se_rs, +1.0)}},
                true);

  // Panel (c): Sanderson-Windmeijer first-stage F statistics
  write_figspec(outdir + "/fig_sw_f.figspec", "sw_first_stage_f", "SW F-statistic", table,
                {{"F_p", column(table, [](const SweepRow& r) { return r.F_p; })},
                 {"F_rs", column(table, [](const SweepRow& r) { return r.F_rs; })}});

  // Panel (d): observations
  write_figspec(outdir + "/fig_nobs.figspec", "observations", "observations", table,
                {{"n_obs", column(table, [](const SweepRow& r) -> std::optional<double> {
                    return static_cast<double>(r.n_obs);
                  })}});

  // Figure 2 (a): efficiency-gain bounds
  write_figspec(outdir + "/fig_gains.figspec", "efficiency_gain_bounds", "plant-level gain (%)",
                table,
                {{"lower", column(table, [](const SweepRow& r) { return r.gain_lower; })},
                 {"upper", column(table, [](const SweepRow& r) { return r.gain_upper; })}});

  // Figure 2 (b): discontinuation marginal effect with a 90% band
  auto me = [](const SweepRow& r) { return r.me_1sd; };
  auto me_se = [](const SweepRow& r) { return r.me_se; };
  write_figspec(outdir + "/fig_probit_me.figspec", "product_drop_marginal_effect",
                "marginal effect of 1 SD TFPR decline (pp)", table,
                {{"me", column(table, me)}, {"lo", ci(me, me_se, -1.0)}, {"hi", ci(me, me_se, +1.0)}},
                true);

  write_manifest(meta,
                 {"sweep.csv", "fig_p_coef.figspec", "fig_rs_coef.figspec", "fig_sw_f.figspec",
                  "fig_nobs.figspec", "fig_gains.figspec", "fig_probit_me.figspec"},
                 outdir);
}

void emit_tables(const TableInputs& inputs, const std::string& outdir) {
  std::filesystem::create_directories(outdir);
  {
    // Table 1 shape: Cobb-Douglas GMM estimates, one column block per preset.
    std::vector<std::string> header = {"row",    "col1",   "col2",    "col3",
                                       "source", "checked", "spec_hash"};
    std::vector<std::vector<std::string>> rows;
    auto cell = [&](const std::string& preset, int coef) -> std::string {
      auto it = inputs.by_preset.find(preset);
      if (it == inputs.by_preset.end()) return "";
      const auto& e = it->second;
      double v = coef == 0 ? e.beta_L : coef == 1 ? e.beta_K : e.beta_M;
      return fmt_double(v);
    };
    auto se_cell = [&](const std::string& preset, int coef) -> std::string {
      auto it = inputs.by_preset.find(preset);
      if (it == inputs.by_preset.end()) return "";
      const auto& e = it->second;
      if (e.se_bootstrap.size() == 3) return fmt_double(e.se_bootstrap[static_cast<std::size_t>(coef)]);
      return fmt_double(std::sqrt(std::max(0.0, e.vcov_analytic(coef, coef))));
    };
    const char* coef_names[3] = {"beta_L", "beta_K", "beta_M"};
    for (int c = 0; c < 3; ++c) {
      rows.push_back({coef_names[c], cell("col1", c), cell("col2", c), cell("col3", c), "this run",
                      "yes", inputs.spec_hash});
      rows.push_back({std::string("se_") + coef_names[c], se_cell("col1", c), se_cell("col2", c),
                      se_cell("col3", c), "this run", "yes", inputs.spec_hash});
    }
    auto nobs = [&](const std::string& preset) -> std::string {
      auto it = inputs.by_preset.find(preset);
      return it == inputs.by_preset.end() ? "" : fmt_int(it->second.n_obs);
    };
    rows.push_back({"n_obs", nobs("col1"), nobs("col2"), nobs("col3"), "this run", "yes",
                    inputs.spec_hash});
    rows.push_back({"instruments", "Z_t,Z_t-1,m_t-1", "m_t-1", "Z_t,Z_t-1", "this run", "yes",
                    inputs.spec_hash});
    // published reference values, annotated, never asserted by the test suite
    rows.push_back({"beta_L", "0.325", "0.315", "0.617", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"se_beta_L", "0.192", "0.191", "0.261", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"beta_K", "0.106", "0.102", "0.239", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"se_beta_K", "0.082", "0.081", "0.099", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"beta_M", "0.789", "0.806", "0.223", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"se_beta_M", "0.191", "0.186", "0.352", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"n_obs", "3620", "3620", "3620", "published reference", "not machine-checked",
                    ""});
    write_csv(outdir + "/table1.csv", header, rows);
  }
  {
    // Table 2 shape: gain bounds and the discontinuation marginal effect.
    std::vector<std::string> header = {"row", "value", "se", "source", "checked", "spec_hash"};
    std::vector<std::vector<std::string>> rows;
    auto opt_cell = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
    rows.push_back({"gain_lower_mean_pct", opt_cell(inputs.gain_lower_mean), "", "this run", "yes",
                    inputs.spec_hash});
    rows.push_back({"gain_upper_mean_pct", opt_cell(inputs.gain_upper_mean), "", "this run", "yes",
                    inputs.spec_hash});
    rows.push_back({"me_1sd_pp", opt_cell(inputs.me_1sd), opt_cell(inputs.me_se), "this run",
                    "yes", inputs.spec_hash});
    rows.push_back({"gain_bounds_2000_2007_pct", "[8.82, 61.60]", "", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"gain_bounds_2010_2019_pct", "[1.13, 67.13]", "", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"gain_bounds_2000_2019_pct", "[9.94, 65.59]", "", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"me_1sd_2000_2007_pp", "6.65", "2.20", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"me_1sd_2010_2019_pp", "9.22", "1.53", "published reference",
                    "not machine-checked", ""});
    rows.push_back({"me_1sd_2000_2019_pp", "7.96", "2.08", "published reference",
                    "not machine-checked", ""});
    write_csv(outdir + "/table2.csv", header, rows);
  }
}

}  // namespace prodloom
