#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "floodopt/common.hpp"
#include "floodopt/distrisk.hpp"
#include "floodopt/simulator.hpp"

// The reference strategy: constant-rate injection with producers shut in
// permanently once their observed water cut makes them uneconomic. This is a
// feedback policy (it reacts to each scenario's own breakthrough times), so
// it is evaluated per ensemble member rather than optimized.

namespace floodopt {

// A producer is worth keeping open while r_o*q_o - r_wP*q_w >= 0, i.e. while
// the water cut q_w/(q_w+q_o) stays at or below r_o/(r_o + r_wP).
inline double economic_watercut_threshold(const EconomicParams& e) {
  return e.r_o / (e.r_o + e.r_wP);
}

struct ReactivePolicy {
  double injection_rate = 60.0;          // m^3/day, per injector
  double watercut_threshold = 126.0 / 145.0;  // the economic threshold at default prices

  void validate() const {
    if (!(injection_rate >= 0.0) || !std::isfinite(injection_rate))
      throw std::invalid_argument("reactive: injection rate must be finite and nonnegative");
    if (!(watercut_threshold >= 0.0 && watercut_threshold <= 1.0))
      throw std::invalid_argument("reactive: water-cut threshold must lie in [0, 1]");
  }
};

struct Horizon {
  int n_steps = 8;
  double dt_days = 90.0;

  void validate() const {
    if (n_steps < 1) throw std::invalid_argument("horizon: need at least one step");
    if (!(dt_days > 0.0)) throw std::invalid_argument("horizon: step length must be positive");
  }

  std::vector<double> dts() const { return std::vector<double>(static_cast<std::size_t>(n_steps), dt_days); }
};

struct ReactiveRun {
  double npv = 0.0;
  // Per producer: first control step the well sat out, -1 if it stayed open
  // through the horizon. Shut-ins are permanent.
  std::vector<int> shut_step;
  std::vector<WellStepRates> rates;
  // With every producer closed, incompressibility forces injection to zero;
  // recorded rather than silently ignored.
  bool injection_cut = false;
  int injection_cut_step = -1;
  SimDiagnostics diag;
};

inline ReactiveRun run_reactive(const ReservoirModel& model, const EconomicParams& econ,
                                const ReactivePolicy& policy, const Horizon& horizon,
                                SimOptions opts = {}) {
  econ.validate();
  policy.validate();
  horizon.validate();
  opts.store_states = false;
  TwoPhaseSimulator sim(model, opts);
  const std::size_t n_prod = static_cast<std::size_t>(sim.n_producers());
  std::vector<char> open(n_prod, 1);
  ReactiveRun run;
  run.shut_step.assign(n_prod, -1);
  std::vector<double> inj(static_cast<std::size_t>(sim.n_injectors()), policy.injection_rate);
  for (int k = 0; k < horizon.n_steps; ++k) {
    if (std::none_of(open.begin(), open.end(), [](char c) { return c != 0; }) &&
        policy.injection_rate > 0.0 && !run.injection_cut) {
      run.injection_cut = true;
      run.injection_cut_step = k;
      std::fill(inj.begin(), inj.end(), 0.0);
    }
    const WellStepRates wr = sim.step(inj, horizon.dt_days, open);
    // Decide shut-ins from this step's observed rates; they take effect from
    // the next step (feedback uses the past only, never the future).
    for (std::size_t p = 0; p < n_prod; ++p) {
      if (!open[p]) continue;
      const double q_tot = wr.producer_q_o[p] + wr.producer_q_w[p];
      if (q_tot > 0.0 && wr.producer_q_w[p] / q_tot > policy.watercut_threshold) {
        open[p] = 0;
        run.shut_step[p] = k + 1;
      }
    }
    run.rates.push_back(wr);
  }
  run.npv = npv_of_rates(econ, horizon.dts(), run.rates);
  run.diag = sim.diagnostics();
  return run;
}

// Per-member reactive outcomes, order preserved; failures carry the scenario
// index.
inline std::vector<ReactiveRun> reactive_runs(std::span<const ReservoirModel> ensemble,
                                              const EconomicParams& econ,
                                              const ReactivePolicy& policy, const Horizon& horizon,
                                              SimOptions opts = {}, int n_threads = 1) {
  if (ensemble.empty()) throw std::invalid_argument("reference: empty ensemble");
  std::vector<ReactiveRun> runs(ensemble.size());
  parallel_for(ensemble.size(), n_threads, [&](std::size_t i) {
    try {
      runs[i] = run_reactive(ensemble[i], econ, policy, horizon, opts);
    } catch (const std::exception& e) {
      throw std::runtime_error("scenario " + std::to_string(i) + ": " + e.what());
    }
  });
  return runs;
}

inline ScenarioDistribution reference_distribution(std::span<const ReservoirModel> ensemble,
                                                   const EconomicParams& econ,
                                                   const ReactivePolicy& policy,
                                                   const Horizon& horizon, SimOptions opts = {},
                                                   int n_threads = 1) {
  ScenarioDistribution d;
  for (const auto& run : reactive_runs(ensemble, econ, policy, horizon, opts, n_threads))
    d.outcomes.push_back(run.npv);
  return d;
}

// Computes the reference outcomes once and hands out the cached results;
// offset objectives query the same distribution many times.
class ReactiveReference {
 public:
  ReactiveReference(std::vector<ReservoirModel> ensemble, EconomicParams econ,
                    ReactivePolicy policy, Horizon horizon, SimOptions opts = {}, int n_threads = 1)
      : ensemble_(std::move(ensemble)),
        econ_(econ),
        policy_(policy),
        horizon_(horizon),
        opts_(opts),
        n_threads_(n_threads) {}

  const ScenarioDistribution& distribution() {
    ensure();
    return distribution_;
  }

  const std::vector<ReactiveRun>& runs() {
    ensure();
    return runs_;
  }

  const ReactivePolicy& policy() const { return policy_; }
  const Horizon& horizon() const { return horizon_; }

 private:
  void ensure() {
    if (ready_) return;
    runs_ = reactive_runs(ensemble_, econ_, policy_, horizon_, opts_, n_threads_);
    for (const auto& run : runs_) distribution_.outcomes.push_back(run.npv);
    ready_ = true;
  }

  std::vector<ReservoirModel> ensemble_;
  EconomicParams econ_;
  ReactivePolicy policy_;
  Horizon horizon_;
  SimOptions opts_;
  int n_threads_ = 1;
  bool ready_ = false;
  std::vector<ReactiveRun> runs_;
  ScenarioDistribution distribution_;
};

}  // namespace floodopt
