#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "floodopt/common.hpp"
#include "floodopt/distrisk.hpp"
#include "floodopt/simulator.hpp"

// Bound-constrained risk optimization over injection schedules. Two program
// families: CVaR minimization of the profit distribution (expected value and
// worst case as its alpha = 1 / alpha = 0 ends), and worst-case maximization
// of the profit offset against a fixed reference. Gradients come from
// per-scenario finite differences combined with closed-form risk weights;
// the solver is projected gradient descent with an Armijo line search.
//
// Objective values handled by the solver (iteration traces, start results,
// OptimizationResult::objective) are in normalized units: profit divided by
// SolverConfig::normalization.

namespace floodopt {

// ---------------------------------------------------------------------------
// Profit models

// A vector-valued profit function u -> (psi_1(u), ..., psi_n(u)), one entry
// per scenario. Implementations may cache state from the last profits() call;
// profits_perturbed contracts to be called with that same base point.
class ProfitModel {
 public:
  virtual ~ProfitModel() = default;
  virtual std::size_t n_controls() const = 0;
  virtual std::size_t n_scenarios() const = 0;
  virtual std::vector<double> profits(const std::vector<double>& u) = 0;

  // Profits at u + h*e_k. Entries for scenarios with active[i] == 0 are
  // unspecified; implementations may skip them.
  virtual std::vector<double> profits_perturbed(const std::vector<double>& u, std::size_t k,
                                                double h, const std::vector<char>& active) {
    (void)active;
    auto up = u;
    up[k] += h;
    return profits(up);
  }
};

// Ensemble waterflooding profits: psi_i(u) = NPV of scenario i under the
// step-major injection schedule u. Perturbed evaluations resume from stored
// saturation snapshots at the first affected control step, which costs about
// half a full simulation per control on average and is bitwise identical to
// a from-scratch run (same state, same arithmetic order).
class SimulatorProfitModel final : public ProfitModel {
 public:
  SimulatorProfitModel(std::vector<ReservoirModel> ensemble, EconomicParams econ,
                       std::vector<double> dt_days, SimOptions opts = {}, int n_threads = 1)
      : ensemble_(std::move(ensemble)),
        econ_(econ),
        dt_(std::move(dt_days)),
        opts_(opts),
        n_threads_(n_threads) {
    if (ensemble_.empty()) throw std::invalid_argument("profit model: empty ensemble");
    if (dt_.empty()) throw std::invalid_argument("profit model: empty schedule");
    for (double d : dt_)
      if (!(d > 0.0)) throw std::invalid_argument("profit model: step lengths must be positive");
    econ_.validate();
    opts_.store_states = false;
    n_inj_ = 0;
    for (const auto& w : ensemble_.front().wells)
      if (w.kind == WellKind::Injector) ++n_inj_;
    if (n_inj_ == 0) throw std::invalid_argument("profit model: no injectors");
    for (const auto& m : ensemble_) {
      std::size_t inj = 0;
      for (const auto& w : m.wells)
        if (w.kind == WellKind::Injector) ++inj;
      if (inj != n_inj_)
        throw std::invalid_argument("profit model: ensemble members disagree on injector count");
    }
    scen_.resize(ensemble_.size());
  }

  std::size_t n_controls() const override { return dt_.size() * n_inj_; }
  std::size_t n_scenarios() const override { return ensemble_.size(); }
  std::size_t n_injectors() const { return n_inj_; }
  const std::vector<double>& dt() const { return dt_; }

  std::vector<double> profits(const std::vector<double>& u) override {
    check_dim(u);
    if (u == base_u_) return base_npv_;
    parallel_for(ensemble_.size(), n_threads_, [&](std::size_t i) {
      try {
        run_base(i, u);
      } catch (const std::exception& e) {
        throw std::runtime_error("scenario " + std::to_string(i) + ": " + e.what());
      }
    });
    base_u_ = u;
    base_npv_.resize(ensemble_.size());
    for (std::size_t i = 0; i < ensemble_.size(); ++i) base_npv_[i] = scen_[i].npv_pre.back();
    return base_npv_;
  }

  std::vector<double> profits_perturbed(const std::vector<double>& u, std::size_t k, double h,
                                        const std::vector<char>& active) override {
    check_dim(u);
    if (k >= n_controls()) throw std::invalid_argument("profit model: control index out of range");
    if (active.size() != ensemble_.size())
      throw std::invalid_argument("profit model: active mask size mismatch");
    if (u != base_u_) profits(u);
    std::vector<double> out(ensemble_.size(), 0.0);
    const std::size_t first_step = k / n_inj_;
    parallel_for(ensemble_.size(), n_threads_, [&](std::size_t i) {
      if (!active[i]) return;
      try {
        out[i] = run_tail(i, u, k, h, first_step);
      } catch (const std::exception& e) {
        throw std::runtime_error("scenario " + std::to_string(i) + ": " + e.what());
      }
    });
    return out;
  }

 private:
  struct Scenario {
    std::unique_ptr<TwoPhaseSimulator> sim;
    std::vector<std::vector<double>> sw_at;  // saturation before each step, plus final
    std::vector<double> npv_pre;             // npv accumulated through step s-1
    std::vector<double> t_pre;               // elapsed days through step s-1
  };

  void check_dim(const std::vector<double>& u) const {
    if (u.size() != n_controls())
      throw std::invalid_argument("profit model: control vector has wrong length");
  }

  double step_cash(const WellStepRates& wr) const {
    double cash = 0.0;
    for (std::size_t jp = 0; jp < wr.producer_q_o.size(); ++jp)
      cash += econ_.r_o * wr.producer_q_o[jp] - econ_.r_wP * wr.producer_q_w[jp];
    for (double q : wr.injector_q) cash -= econ_.r_wI * q;
    return cash;
  }

  void run_base(std::size_t i, const std::vector<double>& u) {
    Scenario& s = scen_[i];
    if (!s.sim) s.sim = std::make_unique<TwoPhaseSimulator>(ensemble_[i], opts_);
    s.sim->reset();
    const std::size_t n_steps = dt_.size();
    s.sw_at.assign(n_steps + 1, {});
    s.npv_pre.assign(n_steps + 1, 0.0);
    s.t_pre.assign(n_steps + 1, 0.0);
    double npv = 0.0, t = 0.0;
    s.sw_at[0] = s.sim->sw();
    for (std::size_t step = 0; step < n_steps; ++step) {
      const std::span<const double> rates(u.data() + step * n_inj_, n_inj_);
      const WellStepRates wr = s.sim->step(rates, dt_[step]);
      t += dt_[step];
      npv += dt_[step] * discount_factor(econ_, t) * step_cash(wr);
      s.sw_at[step + 1] = s.sim->sw();
      s.npv_pre[step + 1] = npv;
      s.t_pre[step + 1] = t;
    }
  }

  double run_tail(std::size_t i, const std::vector<double>& u, std::size_t k, double h,
                  std::size_t first_step) {
    Scenario& s = scen_[i];
    s.sim->set_saturation(s.sw_at[first_step]);
    const std::size_t n_steps = dt_.size();
    double npv = s.npv_pre[first_step];
    double t = s.t_pre[first_step];
    std::vector<double> rates(n_inj_);
    for (std::size_t step = first_step; step < n_steps; ++step) {
      for (std::size_t w = 0; w < n_inj_; ++w) rates[w] = u[step * n_inj_ + w];
      if (step == k / n_inj_) rates[k % n_inj_] += h;
      const WellStepRates wr = s.sim->step(rates, dt_[step]);
      t += dt_[step];
      npv += dt_[step] * discount_factor(econ_, t) * step_cash(wr);
    }
    return npv;
  }

  std::vector<ReservoirModel> ensemble_;
  EconomicParams econ_;
  std::vector<double> dt_;
  SimOptions opts_;
  int n_threads_ = 1;
  std::size_t n_inj_ = 0;
  std::vector<Scenario> scen_;
  std::vector<double> base_u_;
  std::vector<double> base_npv_;
};

// ---------------------------------------------------------------------------
// Problem and solver configuration

enum class ObjectiveKind { CVaR, Expected, WorstCase, OffsetWorstCase };

enum class TerminationReason { kkt, max_iters, cost_stall, step_stall };

inline const char* to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::kkt: return "kkt";
    case TerminationReason::max_iters: return "max_iters";
    case TerminationReason::cost_stall: return "cost_stall";
    case TerminationReason::step_stall: return "step_stall";
  }
  return "unknown";
}

struct OptimizationProblem {
  ObjectiveKind kind = ObjectiveKind::CVaR;
  double alpha = 0.3;          // risk level, CVaR kind only
  ProfitModel* model = nullptr;
  int n_steps = 0;             // control layout: step-major, n_steps x n_injectors
  int n_injectors = 0;
  double dt_days = 90.0;
  double lower = 0.0;          // uniform box bounds per control
  double upper = 79.5;
  std::vector<double> reference;  // per-scenario reference profits, offset kind only

  void validate() const {
    if (model == nullptr) throw std::invalid_argument("problem: missing profit model");
    if (n_steps < 1 || n_injectors < 1)
      throw std::invalid_argument("problem: control dimensions must be positive");
    if (static_cast<std::size_t>(n_steps) * static_cast<std::size_t>(n_injectors) !=
        model->n_controls())
      throw std::invalid_argument("problem: control dimensions disagree with profit model");
    if (!(dt_days > 0.0)) throw std::invalid_argument("problem: step length must be positive");
    if (!(lower < upper) || !std::isfinite(lower) || !std::isfinite(upper))
      throw std::invalid_argument("problem: bounds must define a non-empty box");
    if (kind == ObjectiveKind::CVaR && !(alpha >= 0.0 && alpha <= 1.0))
      throw std::invalid_argument("problem: risk level must lie in [0, 1]");
    const bool offset = kind == ObjectiveKind::OffsetWorstCase;
    if (offset && reference.size() != model->n_scenarios())
      throw std::invalid_argument("problem: offset objective needs one reference profit per scenario");
    if (!offset && !reference.empty())
      throw std::invalid_argument("problem: reference profits given for a non-offset objective");
  }
};

struct SolverConfig {
  int max_iters = 400;         // accepted steps per stage
  double kkt_tol = 1e-6;       // projected-gradient norm, absolute and relative to start
  double rel_cost_tol = 1e-6;
  double step_tol = 1e-10;
  double fd_step = 1e-6;       // forward-difference step, relative to the control range
  std::vector<double> multistart_rates = {24.0, 40.0, 60.0};  // constant starts on a 0..79.5 scale
  double normalization = 1e6;
  std::vector<double> softmin_kappas = {10.0, 100.0, 1000.0};  // offset continuation schedule
  double armijo_c1 = 1e-4;
  int armijo_max_backtracks = 40;
  int n_threads = 1;

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("solver: iteration cap must be positive");
    if (!(kkt_tol > 0.0) || !(rel_cost_tol > 0.0) || !(step_tol > 0.0) || !(fd_step > 0.0) ||
        !(normalization > 0.0) || !(armijo_c1 > 0.0))
      throw std::invalid_argument("solver: tolerances must be positive");
    if (multistart_rates.empty()) throw std::invalid_argument("solver: need at least one start");
    if (armijo_max_backtracks < 1)
      throw std::invalid_argument("solver: need at least one backtrack");
    for (double k : softmin_kappas)
      if (!(k > 0.0)) throw std::invalid_argument("solver: softmin parameters must be positive");
  }
};

struct IterationRecord {
  int iter = 0;
  double objective = 0.0;  // normalized, current stage's objective
  double grad_norm = 0.0;  // projected-gradient 2-norm
  double step = 0.0;       // accepted step length that produced this point
};

struct StartTrace {
  std::vector<double> u0;
  std::vector<IterationRecord> iterations;
  TerminationReason reason = TerminationReason::max_iters;
  double objective = 0.0;  // exact (non-smoothed) normalized objective at u_final
  std::vector<double> u_final;
  bool failed = false;
  std::string error;
};

struct OptimizationResult {
  ControlSchedule u_opt;
  double objective = 0.0;  // exact normalized objective at u_opt
  int iterations = 0;      // accepted steps of the winning start
  TerminationReason reason = TerminationReason::max_iters;
  std::vector<StartTrace> starts;
};

// ---------------------------------------------------------------------------
// Risk weights and objective evaluation

// Tail weights of the CVaR subgradient: p = 1/n on every scenario strictly
// below the alpha-quantile, the leftover alpha - j*p on the quantile scenario
// itself, zero above. They satisfy w_i >= 0 and sum w_i = alpha. Ties are
// broken by scenario index so the weights are deterministic. alpha = 0
// degenerates to weight 1 on the single worst scenario (worst case).
inline std::vector<double> cvar_tail_weights(const std::vector<double>& profits, double alpha) {
  const std::size_t n = profits.size();
  if (n == 0) throw std::invalid_argument("empty distribution");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("risk level must lie in [0, 1]");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (profits[a] != profits[b]) return profits[a] < profits[b];
    return a < b;
  });
  std::vector<double> w(n, 0.0);
  if (alpha == 0.0 || alpha * static_cast<double>(n) < 1.0) {
    w[order[0]] = alpha > 0.0 ? alpha : 1.0;
    return w;
  }
  const double p = 1.0 / static_cast<double>(n);
  std::size_t j = static_cast<std::size_t>(alpha * static_cast<double>(n));
  if (j > n - 1) j = n - 1;
  for (std::size_t k = 0; k < j; ++k) w[order[k]] = p;
  w[order[j]] = std::max(0.0, alpha - static_cast<double>(j) * p);
  return w;
}

struct ObjectiveEval {
  double value = 0.0;
  std::vector<double> gradient;
};

namespace detail {

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double norm_inf(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// One solver objective: a risk functional over (possibly offset) normalized
// profits. kappa > 0 selects the softmin-smoothed worst case used during
// offset continuation; kappa == 0 is the exact objective of the final report.
class ObjectiveContext {
 public:
  ObjectiveContext(ProfitModel& model, const OptimizationProblem& prob, const SolverConfig& cfg)
      : model_(model), prob_(prob), cfg_(cfg) {
    fd_h_ = cfg.fd_step * (prob.upper - prob.lower);
  }

  void set_kappa(double kappa) { kappa_ = kappa; }

  // Per-scenario normalized values the risk functional sees: profits for the
  // CVaR family, profit offsets for the offset family.
  std::vector<double> outcomes_from(const std::vector<double>& raw) const {
    std::vector<double> psi = raw;
    if (prob_.kind == ObjectiveKind::OffsetWorstCase)
      for (std::size_t i = 0; i < psi.size(); ++i) psi[i] -= prob_.reference[i];
    for (double& x : psi) x /= cfg_.normalization;
    return psi;
  }

  double value(const std::vector<double>& u) { return combine(outcomes_from(model_.profits(u))); }

  ObjectiveEval value_and_gradient(const std::vector<double>& u) {
    const std::vector<double> raw = model_.profits(u);
    const std::vector<double> psi = outcomes_from(raw);
    ObjectiveEval ev;
    ev.value = combine(psi);
    const std::vector<double> w = scenario_weights(psi);
    std::vector<char> active(w.size(), 0);
    for (std::size_t i = 0; i < w.size(); ++i) active[i] = w[i] != 0.0 ? 1 : 0;
    const std::size_t n_c = model_.n_controls();
    ev.gradient.assign(n_c, 0.0);
    for (std::size_t k = 0; k < n_c; ++k) {
      // One-sided step kept inside the box; backward at the upper bound.
      const double h = (u[k] + fd_h_ <= prob_.upper) ? fd_h_ : -fd_h_;
      const std::vector<double> pert = model_.profits_perturbed(u, k, h, active);
      double g = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (!active[i]) continue;
        // The reference cancels in the difference, so offsets and plain
        // profits share one formula.
        g += w[i] * ((pert[i] - raw[i]) / h);
      }
      ev.gradient[k] = -g / cfg_.normalization;
    }
    return ev;
  }

 private:
  double combine(const std::vector<double>& psi) const {
    switch (prob_.kind) {
      case ObjectiveKind::CVaR:
      case ObjectiveKind::Expected: {
        const double a = prob_.kind == ObjectiveKind::Expected ? 1.0 : prob_.alpha;
        if (a == 0.0) return worst_case_risk(ScenarioDistribution{psi});
        return cvar_risk(ScenarioDistribution{psi}, a);
      }
      case ObjectiveKind::WorstCase:
        return worst_case_risk(ScenarioDistribution{psi});
      case ObjectiveKind::OffsetWorstCase:
        if (kappa_ > 0.0) return -softmin(psi, kappa_);
        return worst_case_risk(ScenarioDistribution{psi});
    }
    throw std::logic_error("unreachable objective kind");
  }

  // Weights w_i of the subgradient -sum_i w_i * grad psi_i.
  std::vector<double> scenario_weights(const std::vector<double>& psi) const {
    switch (prob_.kind) {
      case ObjectiveKind::CVaR:
      case ObjectiveKind::Expected: {
        const double a = prob_.kind == ObjectiveKind::Expected ? 1.0 : prob_.alpha;
        if (a == 0.0) return cvar_tail_weights(psi, 0.0);
        auto w = cvar_tail_weights(psi, a);
        for (double& x : w) x /= a;
        return w;
      }
      case ObjectiveKind::WorstCase:
        return cvar_tail_weights(psi, 0.0);
      case ObjectiveKind::OffsetWorstCase: {
        if (kappa_ > 0.0) return softmin_weights(psi, kappa_);
        return cvar_tail_weights(psi, 0.0);  // exact stage: all weight on the argmin
      }
    }
    throw std::logic_error("unreachable objective kind");
  }

  ProfitModel& model_;
  const OptimizationProblem& prob_;
  const SolverConfig& cfg_;
  double fd_h_ = 0.0;
  double kappa_ = 0.0;

 public:
  // softmin(x) = -(1/kappa) ln sum exp(-kappa x_i), shifted by the minimum so
  // the exponentials never overflow. Bounds: min - ln(n)/kappa <= softmin <= min.
  static double softmin(const std::vector<double>& x, double kappa) {
    const double m = *std::min_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(-kappa * (v - m));
    return m - std::log(s) / kappa;
  }

  static std::vector<double> softmin_weights(const std::vector<double>& x, double kappa) {
    const double m = *std::min_element(x.begin(), x.end());
    std::vector<double> w(x.size());
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      w[i] = std::exp(-kappa * (x[i] - m));
      s += w[i];
    }
    for (double& v : w) {
      v /= s;
      if (v < 1e-12) v = 0.0;  // negligible scenarios skip their FD simulations
    }
    return w;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Spec'd objective entry points (one-off evaluation, unnormalized by default)

inline ObjectiveEval cvar_objective(const ControlSchedule& u,
                                    std::span<const ReservoirModel> ensemble,
                                    const EconomicParams& econ, double alpha,
                                    SolverConfig cfg = {}, SimOptions opts = {}) {
  u.validate();
  cfg.normalization = 1.0;
  SimulatorProfitModel model(std::vector<ReservoirModel>(ensemble.begin(), ensemble.end()), econ,
                             u.dt, opts, cfg.n_threads);
  OptimizationProblem prob;
  prob.kind = alpha == 0.0 ? ObjectiveKind::WorstCase : ObjectiveKind::CVaR;
  prob.alpha = alpha;
  prob.model = &model;
  prob.n_steps = u.n_steps();
  prob.n_injectors = u.n_injectors;
  prob.dt_days = u.dt.empty() ? 1.0 : u.dt.front();
  prob.lower = 0.0;
  prob.upper = *std::max_element(u.rates.begin(), u.rates.end()) + 1.0;
  prob.validate();
  detail::ObjectiveContext ctx(model, prob, cfg);
  return ctx.value_and_gradient(u.rates);
}

inline ObjectiveEval offset_worstcase_objective(const ControlSchedule& u,
                                                std::span<const ReservoirModel> ensemble,
                                                const EconomicParams& econ,
                                                const ControlSchedule& u_ref,
                                                SolverConfig cfg = {}, SimOptions opts = {}) {
  u.validate();
  u_ref.validate();
  cfg.normalization = 1.0;
  SimulatorProfitModel model(std::vector<ReservoirModel>(ensemble.begin(), ensemble.end()), econ,
                             u.dt, opts, cfg.n_threads);
  if (u_ref.rates.size() != u.rates.size() || u_ref.n_injectors != u.n_injectors ||
      u_ref.dt != u.dt)
    throw std::invalid_argument("offset objective: reference schedule shape mismatch");
  OptimizationProblem prob;
  prob.kind = ObjectiveKind::OffsetWorstCase;
  prob.model = &model;
  prob.n_steps = u.n_steps();
  prob.n_injectors = u.n_injectors;
  prob.dt_days = u.dt.empty() ? 1.0 : u.dt.front();
  prob.lower = 0.0;
  prob.upper = std::max(*std::max_element(u.rates.begin(), u.rates.end()),
                        *std::max_element(u_ref.rates.begin(), u_ref.rates.end())) +
               1.0;
  prob.reference = model.profits(u_ref.rates);
  prob.validate();
  detail::ObjectiveContext ctx(model, prob, cfg);
  ctx.set_kappa(0.0);  // exact worst case; smoothing is a solver-internal device
  return ctx.value_and_gradient(u.rates);
}

// One-shot evaluation of a problem's exact objective and subgradient at u,
// in normalized units. The same code path the solver uses.
inline ObjectiveEval evaluate_objective(const OptimizationProblem& prob, const SolverConfig& cfg,
                                        const std::vector<double>& u) {
  prob.validate();
  cfg.validate();
  detail::ObjectiveContext ctx(*prob.model, prob, cfg);
  return ctx.value_and_gradient(u);
}

// ---------------------------------------------------------------------------
// Solver

inline OptimizationResult solve(const OptimizationProblem& prob, const SolverConfig& cfg) {
  prob.validate();
  cfg.validate();
  ProfitModel& model = *prob.model;
  const std::size_t n_c = model.n_controls();
  const double range = prob.upper - prob.lower;

  const auto clamp_box = [&](std::vector<double>& u) {
    for (double& x : u) x = std::clamp(x, prob.lower, prob.upper);
  };

  std::vector<double> kappas;
  if (prob.kind == ObjectiveKind::OffsetWorstCase)
    kappas = cfg.softmin_kappas;
  kappas.push_back(0.0);  // exact stage for every objective

  OptimizationResult result;
  bool have_winner = false;

  for (double rate : cfg.multistart_rates) {
    StartTrace trace;
    trace.u0.assign(n_c, prob.lower + rate * range / 79.5);
    clamp_box(trace.u0);
    try {
      detail::ObjectiveContext ctx(model, prob, cfg);
      std::vector<double> u = trace.u0;
      int accepted_total = 0;
      TerminationReason reason = TerminationReason::max_iters;

      for (double kappa : kappas) {
        ctx.set_kappa(kappa);
        ObjectiveEval ev = ctx.value_and_gradient(u);
        double trial_step = 0.0;
        double last_step = 0.0;
        int accepted_stage = 0;

        const auto projected_gradient = [&](const std::vector<double>& g) {
          std::vector<double> pg(g);
          for (std::size_t k = 0; k < n_c; ++k) {
            if (u[k] <= prob.lower && g[k] > 0.0) pg[k] = 0.0;
            if (u[k] >= prob.upper && g[k] < 0.0) pg[k] = 0.0;
          }
          return pg;
        };

        std::vector<double> pg = projected_gradient(ev.gradient);
        double pg_norm = detail::norm2(pg);
        const double kkt_threshold = std::max(cfg.kkt_tol, cfg.kkt_tol * pg_norm);
        trace.iterations.push_back({accepted_total, ev.value, pg_norm, 0.0});

        while (true) {
          if (pg_norm <= kkt_threshold) {
            reason = TerminationReason::kkt;
            break;
          }
          if (accepted_stage >= cfg.max_iters) {
            reason = TerminationReason::max_iters;
            break;
          }
          if (trial_step == 0.0)
            trial_step = 0.1 * range / std::max(detail::norm_inf(pg), 1e-12);

          // Armijo backtracking on the projected step.
          std::vector<double> u_new(n_c);
          double f_new = 0.0;
          bool accepted = false;
          int backtracks = 0;
          double step = trial_step;
          for (; backtracks < cfg.armijo_max_backtracks; ++backtracks, step *= 0.5) {
            for (std::size_t k = 0; k < n_c; ++k)
              u_new[k] = std::clamp(u[k] - step * ev.gradient[k], prob.lower, prob.upper);
            double decrease = 0.0;  // g . (u - u_new) >= 0 by construction
            for (std::size_t k = 0; k < n_c; ++k)
              decrease += ev.gradient[k] * (u[k] - u_new[k]);
            if (decrease <= 0.0) continue;  // step too small to move
            f_new = ctx.value(u_new);
            if (f_new <= ev.value - cfg.armijo_c1 * decrease) {
              accepted = true;
              break;
            }
          }
          if (!accepted) {
            reason = TerminationReason::step_stall;
            break;
          }

          double move = 0.0;
          for (std::size_t k = 0; k < n_c; ++k)
            move += (u_new[k] - u[k]) * (u_new[k] - u[k]);
          move = std::sqrt(move);
          const double f_old = ev.value;
          const double u_norm = detail::norm2(u);
          u = u_new;
          ++accepted_stage;
          ++accepted_total;
          last_step = step;
          trial_step = backtracks == 0 ? step * 2.0 : step;

          ev = ctx.value_and_gradient(u);
          pg = projected_gradient(ev.gradient);
          pg_norm = detail::norm2(pg);
          trace.iterations.push_back({accepted_total, ev.value, pg_norm, last_step});

          if (std::abs(f_old - ev.value) <= cfg.rel_cost_tol * std::max(1.0, std::abs(f_old))) {
            reason = TerminationReason::cost_stall;
            break;
          }
          if (move <= cfg.step_tol * std::max(1.0, u_norm)) {
            reason = TerminationReason::step_stall;
            break;
          }
        }
      }

      ctx.set_kappa(0.0);
      trace.objective = ctx.value(u);  // exact objective, never the smoothed one
      trace.u_final = std::move(u);
      trace.reason = reason;

      if (!have_winner || trace.objective < result.objective) {
        have_winner = true;
        result.objective = trace.objective;
        result.iterations = accepted_total;
        result.reason = reason;
        result.u_opt.dt.assign(static_cast<std::size_t>(prob.n_steps), prob.dt_days);
        result.u_opt.n_injectors = prob.n_injectors;
        result.u_opt.rates = trace.u_final;
      }
    } catch (const std::exception& e) {
      trace.failed = true;
      trace.error = e.what();
    }
    result.starts.push_back(std::move(trace));
  }

  if (!have_winner) {
    std::string msg = "all starts failed:";
    for (std::size_t s = 0; s < result.starts.size(); ++s)
      msg += " [start " + std::to_string(s) + ": " + result.starts[s].error + "]";
    throw std::runtime_error(msg);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Strategy evaluation

inline std::vector<double> default_alpha_grid() {
  return {0.005, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

struct StrategyReport {
  ScenarioDistribution distribution;
  double worst = 0.0;   // inf of the profits
  double mean = 0.0;
  double sigma = 0.0;   // population standard deviation
  double p5 = 0.0;      // percentiles by the quantile-index convention of VaR
  double p95 = 0.0;
  double cvar30_value = 0.0;  // -CVaR risk at the 30% level, in profit units
  std::vector<std::pair<double, double>> cvar_grid;  // (alpha, cvar_risk)
  double total_risk = 0.0;  // average CVaR risk across the grid
};

inline StrategyReport strategy_kpis(const ScenarioDistribution& d,
                                    const std::vector<double>& alpha_grid = default_alpha_grid()) {
  if (d.outcomes.empty()) throw std::invalid_argument("empty distribution");
  if (alpha_grid.empty()) throw std::invalid_argument("empty risk-level grid");
  StrategyReport r;
  r.distribution = d;
  r.worst = -worst_case_risk(d);
  r.mean = -expected_risk(d);
  double ss = 0.0;
  for (double x : d.outcomes) ss += (x - r.mean) * (x - r.mean);
  r.sigma = std::sqrt(ss / static_cast<double>(d.outcomes.size()));
  r.p5 = -var_risk(d, 0.05);
  r.p95 = -var_risk(d, 0.95);
  r.cvar30_value = -cvar_risk(d, 0.30);
  double acc = 0.0;
  for (double a : alpha_grid) {
    const double c = cvar_risk(d, a);
    r.cvar_grid.emplace_back(a, c);
    acc += c;
  }
  r.total_risk = acc / static_cast<double>(alpha_grid.size());
  return r;
}

inline StrategyReport evaluate_strategy(const ControlSchedule& u,
                                        std::span<const ReservoirModel> ensemble,
                                        const EconomicParams& econ,
                                        const std::vector<double>& alpha_grid = default_alpha_grid(),
                                        SimOptions opts = {}, int n_threads = 1) {
  return strategy_kpis(npv_distribution(ensemble, econ, u, opts, n_threads), alpha_grid);
}

}  // namespace floodopt
