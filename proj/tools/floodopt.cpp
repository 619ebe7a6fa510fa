// Command-line front end: run a full experiment, generate an ensemble,
// simulate or optimize a single strategy, or rebuild the derived report
// tables from a finished run directory.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "floodopt/experiment.hpp"

namespace fs = std::filesystem;
using namespace floodopt;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonArgs* args, bool need_config) {
  auto* opt = cmd->add_option("--config", args->config_path, "experiment config (JSON)");
  if (need_config) opt->required();
  cmd->add_option("--out", args->out_dir, "output directory (overrides the config)");
  cmd->add_option("--seed", args->seed, "global seed (overrides the config)");
  cmd->add_option("--threads", args->threads, "worker threads (overrides the config)");
}

ExperimentConfig load_with_overrides(const CommonArgs& args) {
  ExperimentConfig cfg = load_experiment_config(args.config_path);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (args.seed) cfg.seed = *args.seed;
  if (args.threads) cfg.threads = *args.threads;
  return cfg;
}

int cmd_run(const CommonArgs& args) {
  const auto outcome = run_experiment(load_with_overrides(args));
  for (const auto& so : outcome.strategies) {
    if (so.failed)
      std::fprintf(stderr, "strategy %s failed: %s\n", so.def.name.c_str(), so.error.c_str());
    else if (so.def.kind == StrategyKind::Reference)
      std::printf("%-14s reference distribution over %zu scenarios\n", so.def.name.c_str(),
                  so.distribution.size());
    else
      std::printf("%-14s objective %.6g  (%s)\n", so.def.name.c_str(), so.objective,
                  to_string(so.reason));
  }
  std::printf("wrote %s\n", outcome.dir.string().c_str());
  return outcome.any_failed ? 1 : 0;
}

int cmd_gen_ensemble(const CommonArgs& args) {
  const ExperimentConfig cfg = finalize(load_with_overrides(args));
  const auto fields = generate_ensemble(cfg.ensemble);
  const fs::path dir = fs::path(cfg.output_dir) / "ensemble";
  fs::create_directories(dir);
  save_ensemble(dir, cfg.ensemble, fields);
  std::printf("wrote %d permeability fields to %s\n", cfg.ensemble.n_d, dir.string().c_str());
  return 0;
}

// Rows of controls.csv grouped by strategy in first-seen order.
struct ControlsTable {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::string>> rows;  // raw lines, header excluded
};

ControlsTable load_controls(const fs::path& path) {
  ControlsTable table;
  std::ifstream in(path);
  if (!in) return table;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string name = line.substr(0, comma);
    if (table.rows.find(name) == table.rows.end()) table.order.push_back(name);
    table.rows[name].push_back(line);
  }
  return table;
}

void save_controls(const fs::path& path, const ControlsTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "strategy,step,injector,rate\n";
  for (const auto& name : table.order)
    for (const auto& line : table.rows.at(name)) out << line << '\n';
}

ControlSchedule schedule_from_rows(const std::vector<std::string>& rows, const std::string& name,
                                   int n_steps, int n_injectors, double dt_days) {
  ControlSchedule u;
  u.dt.assign(static_cast<std::size_t>(n_steps), dt_days);
  u.n_injectors = n_injectors;
  u.rates.assign(static_cast<std::size_t>(n_steps) * n_injectors, 0.0);
  std::size_t filled = 0;
  for (const auto& line : rows) {
    std::stringstream ss(line);
    std::string strategy, step, injector, rate;
    std::getline(ss, strategy, ',');
    std::getline(ss, step, ',');
    std::getline(ss, injector, ',');
    std::getline(ss, rate, ',');
    const int k = std::stoi(step);
    const int w = std::stoi(injector);
    if (k < 0 || k >= n_steps || w < 0 || w >= n_injectors)
      throw std::runtime_error("controls for '" + name + "' do not match the config dimensions");
    u.rate(k, w) = std::stod(rate);
    ++filled;
  }
  if (filled != u.rates.size())
    throw std::runtime_error("controls for '" + name + "' do not match the config dimensions");
  return u;
}

int cmd_simulate(const CommonArgs& args, const std::string& slug) {
  const ExperimentConfig cfg = finalize(load_with_overrides(args));
  const StrategyDef def = parse_strategy(slug, cfg.ensemble.n_d);
  const auto fields = generate_ensemble(cfg.ensemble);
  const auto models = ensemble_models(cfg.reservoir, fields);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);

  ScenarioDistribution dist;
  if (def.kind == StrategyKind::Reference) {
    const Horizon horizon{cfg.control.n_steps, cfg.control.dt_days};
    dist = reference_distribution(models, cfg.economics, cfg.reactive, horizon, cfg.sim,
                                  cfg.threads);
  } else {
    const auto table = load_controls(dir / "controls.csv");
    const auto it = table.rows.find(def.name);
    if (it == table.rows.end())
      throw std::runtime_error("no controls for '" + def.name + "' in " +
                               (dir / "controls.csv").string() + "; run optimize first");
    int n_injectors = 0;
    for (const auto& w : cfg.reservoir.wells)
      if (w.kind == WellKind::Injector) ++n_injectors;
    const ControlSchedule u = schedule_from_rows(it->second, def.name, cfg.control.n_steps,
                                                 n_injectors, cfg.control.dt_days);
    SimulatorProfitModel profit(models, cfg.economics, u.dt, cfg.sim, cfg.threads);
    dist.outcomes = profit.profits(u.rates);
  }

  const fs::path out_path = dir / ("simulate_" + def.name + ".csv");
  write_distribution_csv(out_path, {{def.name, dist}});
  std::printf("wrote %s\n", out_path.string().c_str());
  return 0;
}

int cmd_optimize(const CommonArgs& args, const std::string& slug) {
  const ExperimentConfig cfg = finalize(load_with_overrides(args));
  const StrategyDef def = parse_strategy(slug, cfg.ensemble.n_d);
  if (def.kind == StrategyKind::Reference)
    throw std::invalid_argument("'ref' is simulated, not optimized");

  const auto fields = generate_ensemble(cfg.ensemble);
  const auto models = ensemble_models(cfg.reservoir, fields);
  int n_injectors = 0;
  for (const auto& w : cfg.reservoir.wells)
    if (w.kind == WellKind::Injector) ++n_injectors;
  SimulatorProfitModel profit(models, cfg.economics,
                              std::vector<double>(static_cast<std::size_t>(cfg.control.n_steps),
                                                  cfg.control.dt_days),
                              cfg.sim, cfg.threads);

  OptimizationProblem prob;
  prob.kind = def.kind == StrategyKind::OffsetOptimized ? ObjectiveKind::OffsetWorstCase
                                                        : ObjectiveKind::CVaR;
  prob.alpha = def.alpha;
  prob.model = &profit;
  prob.n_steps = cfg.control.n_steps;
  prob.n_injectors = n_injectors;
  prob.dt_days = cfg.control.dt_days;
  prob.lower = 0.0;
  prob.upper = cfg.control.q_max;
  if (def.kind == StrategyKind::OffsetOptimized) {
    const Horizon horizon{cfg.control.n_steps, cfg.control.dt_days};
    prob.reference = reference_distribution(models, cfg.economics, cfg.reactive, horizon, cfg.sim,
                                            cfg.threads)
                         .outcomes;
  }
  const auto result = solve(prob, cfg.solver);

  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  auto table = load_controls(dir / "controls.csv");
  if (table.rows.find(def.name) == table.rows.end()) table.order.push_back(def.name);
  auto& rows = table.rows[def.name];
  rows.clear();
  for (int k = 0; k < result.u_opt.n_steps(); ++k)
    for (int w = 0; w < result.u_opt.n_injectors; ++w)
      rows.push_back(def.name + ',' + std::to_string(k) + ',' + std::to_string(w) + ',' +
                     format_full(result.u_opt.rate(k, w)));
  save_controls(dir / "controls.csv", table);

  std::printf("%-14s objective %.6g  (%s)\n", def.name.c_str(), result.objective,
              to_string(result.reason));
  std::printf("wrote %s\n", (dir / "controls.csv").string().c_str());
  return 0;
}

int cmd_report(const std::string& dir) {
  report_experiment(dir);
  std::printf("rebuilt report tables in %s\n", dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble waterflooding optimization under coherent risk measures"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  CommonArgs run_args, gen_args, sim_args, opt_args;
  std::string sim_strategy, opt_strategy, report_dir;

  auto* run = app.add_subcommand("run", "run every configured strategy and write all tables");
  add_common(run, &run_args, true);

  auto* gen = app.add_subcommand("gen-ensemble", "generate and save the permeability ensemble");
  add_common(gen, &gen_args, true);

  auto* sim = app.add_subcommand("simulate", "evaluate one strategy on the full ensemble");
  add_common(sim, &sim_args, true);
  sim->add_option("--strategy", sim_strategy, "strategy name")->required();

  auto* opt = app.add_subcommand("optimize", "optimize one strategy and record its controls");
  add_common(opt, &opt_args, true);
  opt->add_option("--strategy", opt_strategy, "strategy name")->required();

  auto* rep = app.add_subcommand("report", "rebuild derived tables from npv_distribution.csv");
  rep->add_option("--dir", report_dir, "experiment output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (gen->parsed()) return cmd_gen_ensemble(gen_args);
    if (sim->parsed()) return cmd_simulate(sim_args, sim_strategy);
    if (opt->parsed()) return cmd_optimize(opt_args, opt_strategy);
    if (rep->parsed()) return cmd_report(report_dir);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
