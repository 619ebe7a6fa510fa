#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "floodopt/common.hpp"
#include "floodopt/distrisk.hpp"
#include "floodopt/ensemble.hpp"
#include "floodopt/optimize.hpp"
#include "floodopt/reactive.hpp"
#include "floodopt/simulator.hpp"

// Experiment orchestration: a JSON config describing reservoir, economics,
// ensemble, controls, and strategies; a runner that optimizes every strategy
// and emits CSV tables plus a manifest; and a pure report stage that
// recomputes all derived tables from the stored distribution alone.

namespace floodopt {

// ---------------------------------------------------------------------------
// Configuration

struct ControlConfig {
  int n_steps = 8;
  double dt_days = 90.0;
  double q_max = 79.5;  // upper injection bound, m^3/day per injector

  void validate() const {
    if (n_steps < 1) throw std::invalid_argument("control: need at least one step");
    if (!(dt_days > 0.0)) throw std::invalid_argument("control: step length must be positive");
    if (!(q_max > 0.0)) throw std::invalid_argument("control: rate bound must be positive");
  }
};

inline std::vector<std::string> default_strategies() {
  std::vector<std::string> s = {"wc-opt"};
  for (int lvl = 10; lvl <= 90; lvl += 10) s.push_back("cs-" + std::to_string(lvl));
  s.push_back("ro");
  s.push_back("offset-wc-opt");
  s.push_back("ref");
  return s;
}

// Default well pattern: four corner injectors, two interior producers.
inline std::vector<Well> default_wells() {
  return {
      {"I1", 1, 1, WellKind::Injector, 0.1, 0.0},
      {"I2", 13, 1, WellKind::Injector, 0.1, 0.0},
      {"I3", 1, 13, WellKind::Injector, 0.1, 0.0},
      {"I4", 13, 13, WellKind::Injector, 0.1, 0.0},
      {"P1", 7, 5, WellKind::Producer, 0.1, 39.5e6},
      {"P2", 7, 9, WellKind::Producer, 0.1, 39.5e6},
  };
}

struct ExperimentConfig {
  ReservoirModel reservoir;  // permeability left empty; members come from the ensemble
  EconomicParams economics;
  EnsembleSpec ensemble;
  ControlConfig control;
  ReactivePolicy reactive;
  SolverConfig solver;
  SimOptions sim;
  std::vector<std::string> strategies = default_strategies();
  std::uint64_t seed = 20230840;
  std::string output_dir = "floodopt_out";
  int threads = 1;

  // Track which dependent defaults were overridden explicitly.
  bool ensemble_seed_set = false;
  bool reactive_rate_set = false;
  bool reactive_threshold_set = false;

  ExperimentConfig() { reservoir.wells = default_wells(); }
};

// Fills the dependent defaults: ensemble grid and seed follow the reservoir
// and global seed, the reactive policy follows prices and the rate bound.
inline ExperimentConfig finalize(ExperimentConfig cfg) {
  cfg.ensemble.nx = cfg.reservoir.nx;
  cfg.ensemble.ny = cfg.reservoir.ny;
  if (!cfg.ensemble_seed_set) cfg.ensemble.seed = cfg.seed;
  if (!cfg.reactive_rate_set)
    cfg.reactive.injection_rate = 60.0 * cfg.control.q_max / 79.5;
  if (!cfg.reactive_threshold_set)
    cfg.reactive.watercut_threshold = economic_watercut_threshold(cfg.economics);
  cfg.economics.validate();
  cfg.ensemble.validate();
  cfg.control.validate();
  cfg.reactive.validate();
  cfg.solver.validate();
  if (cfg.threads < 1) throw std::invalid_argument("config: threads must be at least 1");
  if (cfg.strategies.empty()) throw std::invalid_argument("config: no strategies selected");
  {
    auto sorted = cfg.strategies;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("config: duplicate strategy names");
  }
  if (!(cfg.reactive.injection_rate <= cfg.control.q_max))
    throw std::invalid_argument("config: reactive rate exceeds the rate bound");
  // Grid geometry and wells are checked via a throwaway positive field.
  ReservoirModel probe = cfg.reservoir;
  probe.perm.assign(probe.n_cells(), 1.0);
  probe.validate();
  return cfg;
}

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& block,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::invalid_argument("config: block '" + block + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end())
      throw std::invalid_argument("config: unknown key '" + key + "' in block '" + block + "'");
  }
}

inline WellKind well_kind_from(const std::string& s) {
  if (s == "injector") return WellKind::Injector;
  if (s == "producer") return WellKind::Producer;
  throw std::invalid_argument("config: well kind must be 'injector' or 'producer', got '" + s +
                              "'");
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::require_keys(j, "<root>",
                       {"reservoir", "economics", "ensemble", "control", "reactive", "solver",
                        "sim", "strategies", "seed", "output_dir", "threads"});
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();

  if (j.contains("reservoir")) {
    const auto& r = j.at("reservoir");
    detail::require_keys(r, "reservoir",
                         {"nx", "ny", "dx", "dy", "h", "phi", "p_init", "sw_init", "corey",
                          "viscosities", "wells"});
    auto& m = cfg.reservoir;
    if (r.contains("nx")) m.nx = r.at("nx").get<int>();
    if (r.contains("ny")) m.ny = r.at("ny").get<int>();
    if (r.contains("dx")) m.dx = r.at("dx").get<double>();
    if (r.contains("dy")) m.dy = r.at("dy").get<double>();
    if (r.contains("h")) m.h = r.at("h").get<double>();
    if (r.contains("phi")) m.phi = r.at("phi").get<double>();
    if (r.contains("p_init")) m.p_init = r.at("p_init").get<double>();
    if (r.contains("sw_init")) m.sw_init = r.at("sw_init").get<double>();
    if (r.contains("corey")) {
      const auto& c = r.at("corey");
      detail::require_keys(c, "corey", {"krw0", "kro0", "nw", "no", "swc", "sor"});
      if (c.contains("krw0")) m.corey.krw0 = c.at("krw0").get<double>();
      if (c.contains("kro0")) m.corey.kro0 = c.at("kro0").get<double>();
      if (c.contains("nw")) m.corey.nw = c.at("nw").get<double>();
      if (c.contains("no")) m.corey.no = c.at("no").get<double>();
      if (c.contains("swc")) m.corey.swc = c.at("swc").get<double>();
      if (c.contains("sor")) m.corey.sor = c.at("sor").get<double>();
    }
    if (r.contains("viscosities")) {
      const auto& v = r.at("viscosities");
      detail::require_keys(v, "viscosities", {"mu_w", "mu_o"});
      if (v.contains("mu_w")) m.visc.mu_w = v.at("mu_w").get<double>();
      if (v.contains("mu_o")) m.visc.mu_o = v.at("mu_o").get<double>();
    }
    if (r.contains("wells")) {
      m.wells.clear();
      for (const auto& w : r.at("wells")) {
        detail::require_keys(w, "wells[]", {"name", "i", "j", "kind", "r_well", "bhp"});
        Well well;
        well.name = w.at("name").get<std::string>();
        well.i = w.at("i").get<int>();
        well.j = w.at("j").get<int>();
        well.kind = detail::well_kind_from(w.at("kind").get<std::string>());
        if (w.contains("r_well")) well.r_well = w.at("r_well").get<double>();
        if (w.contains("bhp")) well.bhp = w.at("bhp").get<double>();
        m.wells.push_back(std::move(well));
      }
    }
  }

  if (j.contains("economics")) {
    const auto& e = j.at("economics");
    detail::require_keys(e, "economics", {"r_o", "r_wP", "r_wI", "d", "tau"});
    if (e.contains("r_o")) cfg.economics.r_o = e.at("r_o").get<double>();
    if (e.contains("r_wP")) cfg.economics.r_wP = e.at("r_wP").get<double>();
    if (e.contains("r_wI")) cfg.economics.r_wI = e.at("r_wI").get<double>();
    if (e.contains("d")) cfg.economics.d = e.at("d").get<double>();
    if (e.contains("tau")) cfg.economics.tau = e.at("tau").get<double>();
  }

  if (j.contains("ensemble")) {
    const auto& e = j.at("ensemble");
    detail::require_keys(e, "ensemble",
                         {"n_d", "seed", "log_mean", "log_std", "corr_len", "anisotropy"});
    if (e.contains("n_d")) cfg.ensemble.n_d = e.at("n_d").get<int>();
    if (e.contains("seed")) {
      cfg.ensemble.seed = e.at("seed").get<std::uint64_t>();
      cfg.ensemble_seed_set = true;
    }
    if (e.contains("log_mean")) cfg.ensemble.log_mean = e.at("log_mean").get<double>();
    if (e.contains("log_std")) cfg.ensemble.log_std = e.at("log_std").get<double>();
    if (e.contains("corr_len")) cfg.ensemble.corr_len = e.at("corr_len").get<double>();
    if (e.contains("anisotropy")) cfg.ensemble.anisotropy = e.at("anisotropy").get<double>();
  }

  if (j.contains("control")) {
    const auto& c = j.at("control");
    detail::require_keys(c, "control", {"n_steps", "dt_days", "q_max"});
    if (c.contains("n_steps")) cfg.control.n_steps = c.at("n_steps").get<int>();
    if (c.contains("dt_days")) cfg.control.dt_days = c.at("dt_days").get<double>();
    if (c.contains("q_max")) cfg.control.q_max = c.at("q_max").get<double>();
  }

  if (j.contains("reactive")) {
    const auto& r = j.at("reactive");
    detail::require_keys(r, "reactive", {"injection_rate", "watercut_threshold"});
    if (r.contains("injection_rate")) {
      cfg.reactive.injection_rate = r.at("injection_rate").get<double>();
      cfg.reactive_rate_set = true;
    }
    if (r.contains("watercut_threshold")) {
      cfg.reactive.watercut_threshold = r.at("watercut_threshold").get<double>();
      cfg.reactive_threshold_set = true;
    }
  }

  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    detail::require_keys(s, "solver",
                         {"max_iters", "kkt_tol", "rel_cost_tol", "step_tol", "fd_step",
                          "multistart_rates", "normalization", "softmin_kappas", "armijo_c1",
                          "armijo_max_backtracks"});
    if (s.contains("max_iters")) cfg.solver.max_iters = s.at("max_iters").get<int>();
    if (s.contains("kkt_tol")) cfg.solver.kkt_tol = s.at("kkt_tol").get<double>();
    if (s.contains("rel_cost_tol")) cfg.solver.rel_cost_tol = s.at("rel_cost_tol").get<double>();
    if (s.contains("step_tol")) cfg.solver.step_tol = s.at("step_tol").get<double>();
    if (s.contains("fd_step")) cfg.solver.fd_step = s.at("fd_step").get<double>();
    if (s.contains("multistart_rates"))
      cfg.solver.multistart_rates = s.at("multistart_rates").get<std::vector<double>>();
    if (s.contains("normalization")) cfg.solver.normalization = s.at("normalization").get<double>();
    if (s.contains("softmin_kappas"))
      cfg.solver.softmin_kappas = s.at("softmin_kappas").get<std::vector<double>>();
    if (s.contains("armijo_c1")) cfg.solver.armijo_c1 = s.at("armijo_c1").get<double>();
    if (s.contains("armijo_max_backtracks"))
      cfg.solver.armijo_max_backtracks = s.at("armijo_max_backtracks").get<int>();
  }

  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    detail::require_keys(s, "sim", {"cfl", "max_substeps", "lin_tol"});
    if (s.contains("cfl")) cfg.sim.cfl = s.at("cfl").get<double>();
    if (s.contains("max_substeps")) cfg.sim.max_substeps = s.at("max_substeps").get<int>();
    if (s.contains("lin_tol")) cfg.sim.lin_tol = s.at("lin_tol").get<double>();
  }

  if (j.contains("strategies"))
    cfg.strategies = j.at("strategies").get<std::vector<std::string>>();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config: parse error in " + path.string() + ": " + e.what());
  }
  try {
    return parse_experiment_config(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: invalid value in " + path.string() + ": " + e.what());
  }
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["threads"] = cfg.threads;
  auto& r = j["reservoir"];
  r["nx"] = cfg.reservoir.nx;
  r["ny"] = cfg.reservoir.ny;
  r["dx"] = cfg.reservoir.dx;
  r["dy"] = cfg.reservoir.dy;
  r["h"] = cfg.reservoir.h;
  r["phi"] = cfg.reservoir.phi;
  r["p_init"] = cfg.reservoir.p_init;
  r["sw_init"] = cfg.reservoir.sw_init;
  r["corey"] = {{"krw0", cfg.reservoir.corey.krw0}, {"kro0", cfg.reservoir.corey.kro0},
                {"nw", cfg.reservoir.corey.nw},     {"no", cfg.reservoir.corey.no},
                {"swc", cfg.reservoir.corey.swc},   {"sor", cfg.reservoir.corey.sor}};
  r["viscosities"] = {{"mu_w", cfg.reservoir.visc.mu_w}, {"mu_o", cfg.reservoir.visc.mu_o}};
  r["wells"] = nlohmann::ordered_json::array();
  for (const auto& w : cfg.reservoir.wells)
    r["wells"].push_back({{"name", w.name},
                          {"i", w.i},
                          {"j", w.j},
                          {"kind", w.kind == WellKind::Injector ? "injector" : "producer"},
                          {"r_well", w.r_well},
                          {"bhp", w.bhp}});
  j["economics"] = {{"r_o", cfg.economics.r_o},
                    {"r_wP", cfg.economics.r_wP},
                    {"r_wI", cfg.economics.r_wI},
                    {"d", cfg.economics.d},
                    {"tau", cfg.economics.tau}};
  j["ensemble"] = {{"n_d", cfg.ensemble.n_d},         {"seed", cfg.ensemble.seed},
                   {"log_mean", cfg.ensemble.log_mean}, {"log_std", cfg.ensemble.log_std},
                   {"corr_len", cfg.ensemble.corr_len}, {"anisotropy", cfg.ensemble.anisotropy}};
  j["control"] = {{"n_steps", cfg.control.n_steps},
                  {"dt_days", cfg.control.dt_days},
                  {"q_max", cfg.control.q_max}};
  j["reactive"] = {{"injection_rate", cfg.reactive.injection_rate},
                   {"watercut_threshold", cfg.reactive.watercut_threshold}};
  j["solver"] = {{"max_iters", cfg.solver.max_iters},
                 {"kkt_tol", cfg.solver.kkt_tol},
                 {"rel_cost_tol", cfg.solver.rel_cost_tol},
                 {"step_tol", cfg.solver.step_tol},
                 {"fd_step", cfg.solver.fd_step},
                 {"multistart_rates", cfg.solver.multistart_rates},
                 {"normalization", cfg.solver.normalization},
                 {"softmin_kappas", cfg.solver.softmin_kappas},
                 {"armijo_c1", cfg.solver.armijo_c1},
                 {"armijo_max_backtracks", cfg.solver.armijo_max_backtracks}};
  j["sim"] = {{"cfl", cfg.sim.cfl},
              {"max_substeps", cfg.sim.max_substeps},
              {"lin_tol", cfg.sim.lin_tol}};
  j["strategies"] = cfg.strategies;
  return j;
}

// ---------------------------------------------------------------------------
// Strategies

enum class StrategyKind { Optimized, OffsetOptimized, Reference };

struct StrategyDef {
  std::string name;
  StrategyKind kind = StrategyKind::Optimized;
  double alpha = 1.0;  // risk level for Optimized
};

// The experiment's 11-level risk grid. The lowest level is the worst-case
// analogue 0.5/n_d, which sits strictly below the ensemble resolution 1/n_d.
inline std::vector<double> experiment_alpha_grid(int n_d) {
  if (n_d < 1) throw std::invalid_argument("risk grid: member count must be at least 1");
  std::vector<double> grid = {0.5 / static_cast<double>(n_d)};
  for (int lvl = 1; lvl <= 10; ++lvl) grid.push_back(static_cast<double>(lvl) / 10.0);
  return grid;
}

inline StrategyDef parse_strategy(const std::string& slug, int n_d) {
  StrategyDef def;
  def.name = slug;
  if (slug == "ref") {
    def.kind = StrategyKind::Reference;
    return def;
  }
  if (slug == "offset-wc-opt") {
    def.kind = StrategyKind::OffsetOptimized;
    return def;
  }
  if (slug == "ro") {
    def.alpha = 1.0;
    return def;
  }
  if (slug == "wc-opt") {
    def.alpha = 0.5 / static_cast<double>(n_d);
    return def;
  }
  if (slug.rfind("cs-", 0) == 0) {
    const std::string digits = slug.substr(3);
    for (int lvl = 10; lvl <= 90; lvl += 10)
      if (digits == std::to_string(lvl)) {
        def.alpha = static_cast<double>(lvl) / 100.0;
        return def;
      }
  }
  throw std::invalid_argument("unknown strategy '" + slug + "'");
}

// ---------------------------------------------------------------------------
// CSV emission

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);  // binary: byte-identical across platforms
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline std::string csv_number(double x) { return format_full(x); }

inline std::string csv_optional(const std::optional<double>& x) {
  return x ? format_full(*x) : "nan";
}

}  // namespace detail

// A named column of per-scenario profits.
struct StrategyColumn {
  std::string name;
  ScenarioDistribution distribution;
};

inline void write_distribution_csv(const std::filesystem::path& path,
                                   const std::vector<StrategyColumn>& columns,
                                   const std::string& index_name = "scenario") {
  if (columns.empty()) throw std::invalid_argument("distribution table: no columns");
  const std::size_t n = columns.front().distribution.size();
  for (const auto& c : columns)
    if (c.distribution.size() != n)
      throw std::invalid_argument("distribution table: column length mismatch");
  auto out = detail::open_csv(path);
  out << index_name;
  for (const auto& c : columns) out << ',' << c.name;
  out << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out << i;
    for (const auto& c : columns) out << ',' << detail::csv_number(c.distribution.outcomes[i]);
    out << '\n';
  }
}

// Reads a table written by write_distribution_csv; strict about shape.
inline std::vector<StrategyColumn> load_distribution_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("parse error at " + path.string() + ":1: empty file");
  std::vector<StrategyColumn> columns;
  {
    std::stringstream header(line);
    std::string cell;
    bool first = true;
    while (std::getline(header, cell, ',')) {
      if (first) {
        first = false;
        continue;  // index column
      }
      columns.push_back({cell, {}});
    }
  }
  if (columns.empty())
    throw std::runtime_error("parse error at " + path.string() + ":1: no strategy columns");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(row, cell, ',')) {
      if (col > columns.size())
        throw std::runtime_error("parse error at " + path.string() + ":" +
                                 std::to_string(lineno) + ": too many cells");
      if (col > 0) {
        double v = 0.0;
        const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc{} || end != cell.data() + cell.size())
          throw std::runtime_error("parse error at " + path.string() + ":" +
                                   std::to_string(lineno) + ": bad number '" + cell + "'");
        columns[col - 1].distribution.outcomes.push_back(v);
      }
      ++col;
    }
    if (col != columns.size() + 1)
      throw std::runtime_error("parse error at " + path.string() + ":" + std::to_string(lineno) +
                               ": expected " + std::to_string(columns.size() + 1) + " cells");
  }
  const std::size_t n = columns.front().distribution.size();
  if (n == 0) throw std::runtime_error("parse error at " + path.string() + ": no data rows");
  for (const auto& c : columns)
    if (c.distribution.size() != n)
      throw std::runtime_error("parse error at " + path.string() + ": ragged columns");
  return columns;
}

// Derived tables, all pure functions of the stored distributions. The runner
// and the report subcommand share this code so reruns are byte-identical.
inline void write_reports(const std::filesystem::path& dir,
                          const std::vector<StrategyColumn>& columns) {
  if (columns.empty()) throw std::invalid_argument("reports: no strategies");
  const int n_d = static_cast<int>(columns.front().distribution.size());
  const auto grid = experiment_alpha_grid(n_d);

  {
    auto out = detail::open_csv(dir / "cvar_curve.csv");
    out << "alpha";
    for (const auto& c : columns) out << ',' << c.name;
    out << '\n';
    for (double a : grid) {
      out << detail::csv_number(a);
      for (const auto& c : columns) out << ',' << detail::csv_number(cvar_risk(c.distribution, a));
      out << '\n';
    }
  }

  {
    auto out = detail::open_csv(dir / "total_risk.csv");
    out << "strategy,total_risk\n";
    for (const auto& c : columns) {
      const auto r = strategy_kpis(c.distribution, grid);
      out << c.name << ',' << detail::csv_number(r.total_risk) << '\n';
    }
  }

  {
    auto out = detail::open_csv(dir / "cdf.csv");
    out << "strategy,npv,cdf\n";
    for (const auto& c : columns) {
      auto sorted = c.distribution.outcomes;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t k = 0; k < sorted.size(); ++k)
        out << c.name << ',' << detail::csv_number(sorted[k]) << ','
            << detail::csv_number(static_cast<double>(k + 1) / static_cast<double>(sorted.size()))
            << '\n';
    }
  }

  {
    auto out = detail::open_csv(dir / "strip.csv");
    out << "strategy,scenario,npv\n";
    for (const auto& c : columns)
      for (std::size_t i = 0; i < c.distribution.size(); ++i)
        out << c.name << ',' << i << ',' << detail::csv_number(c.distribution.outcomes[i]) << '\n';
  }

  const auto ref_it = std::find_if(columns.begin(), columns.end(),
                                   [](const StrategyColumn& c) { return c.name == "ref"; });
  if (ref_it == columns.end()) return;  // offsets are defined against 'ref' only

  std::vector<StrategyColumn> offsets;
  for (const auto& c : columns) {
    StrategyColumn off{c.name, {}};
    off.distribution.outcomes =
        offset_distribution(c.distribution, ref_it->distribution).offsets;
    offsets.push_back(std::move(off));
  }
  write_distribution_csv(dir / "offset_distribution.csv", offsets);

  {
    auto out = detail::open_csv(dir / "offset_kpi.csv");
    out << "strategy,worst,mean,sigma,p5,p95,cvar30,off_mean,off_worst,beta,"
           "off_mean_negative,off_mean_nonnegative\n";
    for (std::size_t s = 0; s < columns.size(); ++s) {
      const auto kpi = strategy_kpis(columns[s].distribution, grid);
      const auto ok = offset_kpis(OffsetDistribution{offsets[s].distribution.outcomes});
      out << columns[s].name << ',' << detail::csv_number(kpi.worst) << ','
          << detail::csv_number(kpi.mean) << ',' << detail::csv_number(kpi.sigma) << ','
          << detail::csv_number(kpi.p5) << ',' << detail::csv_number(kpi.p95) << ','
          << detail::csv_number(kpi.cvar30_value) << ',' << detail::csv_number(ok.mean) << ','
          << detail::csv_number(ok.worst) << ',' << detail::csv_number(ok.beta) << ','
          << detail::csv_optional(ok.mean_negative) << ','
          << detail::csv_optional(ok.mean_nonnegative) << '\n';
    }
  }
}

inline void write_plot_script(const std::filesystem::path& dir, std::size_t n_strategies) {
  auto out = detail::open_csv(dir / "plots.gnuplot");
  const std::string last = std::to_string(n_strategies + 1);
  out << "# Render the experiment tables with gnuplot 5+: gnuplot plots.gnuplot\n"
         "set datafile separator ','\n"
         "set key outside\n"
         "set terminal pngcairo size 900,600\n"
         "\n"
         "set output 'cvar_curve.png'\n"
         "set xlabel 'risk level'\n"
         "set ylabel 'CVaR risk'\n"
         "plot for [i=2:" +
             last + "] 'cvar_curve.csv' using 1:i with linespoints title columnheader(i)\n"
         "\n"
         "set output 'cdf.png'\n"
         "set xlabel 'NPV'\n"
         "set ylabel 'empirical CDF'\n"
         "plot 'cdf.csv' using 2:3:(stringcolumn(1)) with points title 'scenario outcomes'\n"
         "\n"
         "set output 'total_risk.png'\n"
         "set style data histograms\n"
         "set style fill solid\n"
         "plot 'total_risk.csv' using 2:xtic(1) title 'total risk'\n";
}

// ---------------------------------------------------------------------------
// Experiment runner

struct StrategyOutcome {
  StrategyDef def;
  bool failed = false;
  std::string error;
  ScenarioDistribution distribution;
  ControlSchedule controls;                  // empty for the reference strategy
  std::vector<StartTrace> traces;            // empty for the reference strategy
  double objective = 0.0;                    // solver objective, normalized units
  TerminationReason reason = TerminationReason::max_iters;
  std::vector<ReactiveRun> reactive_runs;    // reference strategy only
};

struct ExperimentOutcome {
  std::filesystem::path dir;
  bool any_failed = false;
  std::vector<StrategyOutcome> strategies;
};

namespace detail {

inline void write_controls_csv(const std::filesystem::path& path,
                               const std::vector<StrategyOutcome>& outcomes) {
  auto out = open_csv(path);
  out << "strategy,step,injector,rate\n";
  for (const auto& o : outcomes) {
    if (o.failed || o.def.kind == StrategyKind::Reference) continue;
    for (int k = 0; k < o.controls.n_steps(); ++k)
      for (int w = 0; w < o.controls.n_injectors; ++w)
        out << o.def.name << ',' << k << ',' << w << ',' << csv_number(o.controls.rate(k, w))
            << '\n';
  }
}

inline void write_traces_csv(const std::filesystem::path& path,
                             const std::vector<StrategyOutcome>& outcomes) {
  auto out = open_csv(path);
  out << "strategy,start,iter,objective,grad_norm,step\n";
  for (const auto& o : outcomes) {
    if (o.failed) continue;
    for (std::size_t s = 0; s < o.traces.size(); ++s)
      for (const auto& rec : o.traces[s].iterations)
        out << o.def.name << ',' << s << ',' << rec.iter << ',' << csv_number(rec.objective)
            << ',' << csv_number(rec.grad_norm) << ',' << csv_number(rec.step) << '\n';
  }
}

inline void write_shutins_csv(const std::filesystem::path& path,
                              const std::vector<StrategyOutcome>& outcomes) {
  auto out = open_csv(path);
  out << "scenario,producer,shut_step\n";
  for (const auto& o : outcomes) {
    if (o.failed || o.def.kind != StrategyKind::Reference) continue;
    for (std::size_t i = 0; i < o.reactive_runs.size(); ++i) {
      const auto& shut = o.reactive_runs[i].shut_step;
      for (std::size_t p = 0; p < shut.size(); ++p)
        out << i << ',' << p << ',' << shut[p] << '\n';
    }
  }
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace detail

inline ExperimentOutcome run_experiment(const ExperimentConfig& raw_cfg) {
  const ExperimentConfig cfg = finalize(raw_cfg);
  ExperimentOutcome outcome;
  outcome.dir = cfg.output_dir;
  std::filesystem::create_directories(outcome.dir / "ensemble");

  const auto fields = generate_ensemble(cfg.ensemble);
  save_ensemble(outcome.dir / "ensemble", cfg.ensemble, fields);
  const auto models = ensemble_models(cfg.reservoir, fields);

  int n_injectors = 0;
  for (const auto& w : cfg.reservoir.wells)
    if (w.kind == WellKind::Injector) ++n_injectors;

  const Horizon horizon{cfg.control.n_steps, cfg.control.dt_days};
  ReactiveReference reference(models, cfg.economics, cfg.reactive, horizon, cfg.sim, cfg.threads);
  SimulatorProfitModel profit(models, cfg.economics,
                              std::vector<double>(static_cast<std::size_t>(cfg.control.n_steps),
                                                  cfg.control.dt_days),
                              cfg.sim, cfg.threads);

  for (const std::string& slug : cfg.strategies) {
    StrategyOutcome so;
    try {
      so.def = parse_strategy(slug, cfg.ensemble.n_d);
      switch (so.def.kind) {
        case StrategyKind::Reference: {
          so.reactive_runs = reference.runs();
          so.distribution = reference.distribution();
          break;
        }
        case StrategyKind::Optimized:
        case StrategyKind::OffsetOptimized: {
          OptimizationProblem prob;
          prob.kind = so.def.kind == StrategyKind::OffsetOptimized
                          ? ObjectiveKind::OffsetWorstCase
                          : ObjectiveKind::CVaR;
          prob.alpha = so.def.alpha;
          prob.model = &profit;
          prob.n_steps = cfg.control.n_steps;
          prob.n_injectors = n_injectors;
          prob.dt_days = cfg.control.dt_days;
          prob.lower = 0.0;
          prob.upper = cfg.control.q_max;
          if (so.def.kind == StrategyKind::OffsetOptimized)
            prob.reference = reference.distribution().outcomes;
          auto result = solve(prob, cfg.solver);
          so.controls = result.u_opt;
          so.objective = result.objective;
          so.reason = result.reason;
          so.traces = std::move(result.starts);
          so.distribution.outcomes = profit.profits(so.controls.rates);
          break;
        }
      }
    } catch (const std::exception& e) {
      so.def.name = slug;  // keep the name even when parsing failed
      so.failed = true;
      so.error = e.what();
      outcome.any_failed = true;
    }
    outcome.strategies.push_back(std::move(so));
  }

  std::vector<StrategyColumn> columns;
  for (const auto& so : outcome.strategies)
    if (!so.failed) columns.push_back({so.def.name, so.distribution});
  if (!columns.empty()) {
    write_distribution_csv(outcome.dir / "npv_distribution.csv", columns);
    write_reports(outcome.dir, columns);
    write_plot_script(outcome.dir, columns.size());
  }
  detail::write_controls_csv(outcome.dir / "controls.csv", outcome.strategies);
  detail::write_traces_csv(outcome.dir / "traces.csv", outcome.strategies);
  detail::write_shutins_csv(outcome.dir / "shutins.csv", outcome.strategies);

  nlohmann::ordered_json manifest;
  manifest["version"] = kVersion;
  manifest["created_utc"] = detail::utc_timestamp();
  manifest["seed"] = cfg.seed;
  manifest["ensemble_seed"] = cfg.ensemble.seed;
  manifest["strategies"] = nlohmann::ordered_json::array();
  for (const auto& so : outcome.strategies) {
    nlohmann::ordered_json row;
    row["name"] = so.def.name;
    row["failed"] = so.failed;
    if (so.failed)
      row["error"] = so.error;
    else if (so.def.kind != StrategyKind::Reference) {
      row["objective"] = so.objective;
      row["termination"] = to_string(so.reason);
    }
    manifest["strategies"].push_back(std::move(row));
  }
  manifest["config"] = config_to_json(cfg);
  std::ofstream mout(outcome.dir / "manifest.json", std::ios::binary);
  if (!mout) throw std::runtime_error("cannot write " + (outcome.dir / "manifest.json").string());
  mout << manifest.dump(2) << '\n';

  return outcome;
}

// Recomputes every derived table from the stored distribution table; no
// simulation, no randomness, so the outputs are byte-identical functions of
// npv_distribution.csv.
inline void report_experiment(const std::filesystem::path& dir) {
  const auto columns = load_distribution_csv(dir / "npv_distribution.csv");
  write_reports(dir, columns);
  write_plot_script(dir, columns.size());
}

}  // namespace floodopt
