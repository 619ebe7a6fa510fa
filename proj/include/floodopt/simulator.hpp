#pragma once

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "floodopt/common.hpp"
#include "floodopt/distrisk.hpp"
#include "floodopt/reservoir.hpp"

// Incompressible two-phase (water/oil) IMPES simulator on a 2D regular grid:
// one implicit TPFA pressure solve per control step, then explicit upwind
// saturation transport on the frozen total-velocity field with CFL-limited
// substeps. Injectors are fixed-rate water sources; producers are
// bhp-controlled Peaceman sinks.

namespace floodopt {

struct SimOptions {
  double cfl = 0.9;
  int max_substeps = 10000;   // per control step
  double lin_tol = 1e-10;     // relative residual of the pressure solve
  bool store_states = true;   // keep per-step snapshots in simulate()
};

struct WellStepRates {
  std::vector<double> injector_q;    // commanded rates, m^3/day
  std::vector<double> producer_q_o;  // m^3/day, split at the end-of-step state
  std::vector<double> producer_q_w;
};

struct SimDiagnostics {
  std::vector<double> mass_residual;  // per pressure solve, relative
  std::vector<int> substeps;          // transport substeps per control step
  double max_sat_violation = 0.0;     // worst excursion outside [swc, 1-sor]
  long relperm_clamps = 0;
};

struct SimState {
  std::vector<double> pressure;
  std::vector<double> sw;
};

class TwoPhaseSimulator {
 public:
  explicit TwoPhaseSimulator(const ReservoirModel& model, SimOptions opts = {})
      : model_(model), opts_(opts) {
    model_.validate();
    if (!(opts_.cfl > 0.0 && opts_.cfl <= 1.0))
      throw std::invalid_argument("simulator: CFL factor must lie in (0, 1]");
    const int nx = model_.nx, ny = model_.ny;
    faces_.reserve(static_cast<std::size_t>((nx - 1) * ny + nx * (ny - 1)));
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i)
        faces_.push_back(make_face(model_.cell(i, j), model_.cell(i + 1, j),
                                   model_.dy * model_.h / model_.dx));
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i < nx; ++i)
        faces_.push_back(make_face(model_.cell(i, j), model_.cell(i, j + 1),
                                   model_.dx * model_.h / model_.dy));
    pv_ = model_.dx * model_.dy * model_.h * model_.phi;
    for (const auto& w : model_.wells) {
      const WellRef ref{static_cast<int>(model_.cell(w.i, w.j)), well_index(model_, w), w.bhp};
      (w.kind == WellKind::Injector ? injectors_ : producers_).push_back(ref);
    }
    max_dfw_ = max_fractional_flow_slope();
    const std::size_t n = model_.n_cells();
    lt_.resize(n);
    fw_.resize(n);
    delta_.resize(n);
    face_coeff_.resize(faces_.size());
    face_flux_.resize(faces_.size());
    reset();
  }

  int n_injectors() const { return static_cast<int>(injectors_.size()); }
  int n_producers() const { return static_cast<int>(producers_.size()); }
  const ReservoirModel& model() const { return model_; }
  const std::vector<double>& sw() const { return sw_; }
  const std::vector<double>& pressure() const { return p_; }
  const SimDiagnostics& diagnostics() const { return diag_; }
  double time_days() const { return time_days_; }
  double pore_volume() const { return pv_ * static_cast<double>(model_.n_cells()); }
  double produced_oil() const { return produced_oil_; }
  double produced_water() const { return produced_water_; }
  double injected_water() const { return injected_water_; }

  void reset() {
    const double sw0 =
        std::clamp(std::max(model_.sw_init, model_.corey.swc), model_.corey.swc, 1.0 - model_.corey.sor);
    sw_.assign(model_.n_cells(), sw0);
    p_.assign(model_.n_cells(), model_.p_init);
    diag_ = SimDiagnostics{};
    produced_oil_ = produced_water_ = injected_water_ = 0.0;
    time_days_ = 0.0;
  }

  // Overwrites the saturation field, e.g. to resume from a stored snapshot.
  // Accumulators and diagnostics are left alone; callers doing restarts keep
  // their own bookkeeping.
  void set_saturation(std::span<const double> sw) {
    if (sw.size() != sw_.size()) throw std::invalid_argument("set_saturation: size mismatch");
    std::copy(sw.begin(), sw.end(), sw_.begin());
  }

  WellStepRates step(std::span<const double> inj_rates_day, double dt_days) {
    const std::vector<char> open(producers_.size(), 1);
    return step(inj_rates_day, dt_days, open);
  }

  // Advances one control step: pressure solve at the current saturation,
  // then saturation transport on the frozen fluxes. Closed producers are
  // removed from the pressure system entirely.
  WellStepRates step(std::span<const double> inj_rates_day, double dt_days,
                     const std::vector<char>& producer_open) {
    if (static_cast<int>(inj_rates_day.size()) != n_injectors())
      throw std::invalid_argument("step: injector rate count mismatch");
    if (producer_open.size() != producers_.size())
      throw std::invalid_argument("step: producer mask size mismatch");
    if (!(dt_days > 0.0)) throw std::invalid_argument("step: step length must be positive");
    double total_inj = 0.0;
    for (double q : inj_rates_day) {
      if (!(q >= 0.0) || !std::isfinite(q))
        throw std::invalid_argument("step: injection rates must be finite and nonnegative");
      total_inj += q;
    }

    WellStepRates out;
    out.injector_q.assign(inj_rates_day.begin(), inj_rates_day.end());
    out.producer_q_o.assign(producers_.size(), 0.0);
    out.producer_q_w.assign(producers_.size(), 0.0);

    const int n_open = static_cast<int>(
        std::count(producer_open.begin(), producer_open.end(), char(1)));
    if (n_open == 0) {
      // Incompressibility admits no net source: with every sink closed the
      // pressure problem is pure-Neumann and only zero injection is
      // consistent. Nothing flows.
      if (total_inj > 1e-12)
        throw std::runtime_error("pressure system singular: injection with no open producer");
      diag_.mass_residual.push_back(0.0);
      diag_.substeps.push_back(0);
      time_days_ += dt_days;
      return out;
    }

    solve_pressure(inj_rates_day, producer_open, total_inj);
    transport(inj_rates_day, producer_open, dt_days);

    // Rates reported at the end-of-step state: total producer rate from the
    // frozen pressure field, phase split by the well cell's updated
    // fractional flow.
    for (std::size_t jp = 0; jp < producers_.size(); ++jp) {
      if (!producer_open[jp]) continue;
      const double fw = frac_flow(sw_[producers_[jp].cell]);
      out.producer_q_w[jp] = prod_q_tot_[jp] * fw;
      out.producer_q_o[jp] = prod_q_tot_[jp] - out.producer_q_w[jp];
    }
    injected_water_ += total_inj * dt_days;
    time_days_ += dt_days;
    return out;
  }

 private:
  struct Face {
    int a, b;
    double t_geo;  // geometric transmissibility, m^3 (multiply by mobility)
  };
  struct WellRef {
    int cell;
    double wi;
    double bhp;
  };

  Face make_face(std::size_t a, std::size_t b, double area_over_dist) const {
    const double ka = model_.perm[a], kb = model_.perm[b];
    return Face{static_cast<int>(a), static_cast<int>(b),
                area_over_dist * 2.0 * ka * kb / (ka + kb)};
  }

  double frac_flow(double sw) { return frac_flow_counted(sw, &diag_.relperm_clamps); }

  double frac_flow_counted(double sw, long* clamps) const {
    const RelPerms kr = rel_perms(sw, model_.corey, clamps);
    const double lw = kr.krw / model_.visc.mu_w;
    return lw / (lw + kr.kro / model_.visc.mu_o);
  }

  double total_mobility(double sw, long* clamps) const {
    const RelPerms kr = rel_perms(sw, model_.corey, clamps);
    return kr.krw / model_.visc.mu_w + kr.kro / model_.visc.mu_o;
  }

  // Largest slope of the fractional-flow curve over the mobile window; used
  // as the wave-speed bound in the CFL restriction. Secant scan with a small
  // safety factor.
  double max_fractional_flow_slope() const {
    const int m = 8192;
    const double lo = model_.corey.swc, hi = 1.0 - model_.corey.sor;
    const double ds = (hi - lo) / m;
    double prev = frac_flow_counted(lo, nullptr);
    double max_slope = 0.0;
    for (int k = 1; k <= m; ++k) {
      const double cur = frac_flow_counted(lo + k * ds, nullptr);
      max_slope = std::max(max_slope, std::abs(cur - prev) / ds);
      prev = cur;
    }
    return max_slope * 1.02;
  }

  void solve_pressure(std::span<const double> inj_rates_day,
                      const std::vector<char>& producer_open, double total_inj) {
    const std::size_t n = model_.n_cells();
    const double day = 86400.0;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(4 * faces_.size() + n + producers_.size());
    for (std::size_t c = 0; c < n; ++c) {
      lt_[c] = total_mobility(sw_[c], &diag_.relperm_clamps);
      // Structural diagonal entry so the sparsity pattern is mask-independent.
      trips.emplace_back(static_cast<int>(c), static_cast<int>(c), 0.0);
    }
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& fa = faces_[f];
      // Arithmetic face mobility: keeps the system symmetric positive
      // definite and the transport update monotone for any upwind direction.
      const double coeff = fa.t_geo * 0.5 * (lt_[fa.a] + lt_[fa.b]);
      face_coeff_[f] = coeff;
      trips.emplace_back(fa.a, fa.a, coeff);
      trips.emplace_back(fa.b, fa.b, coeff);
      trips.emplace_back(fa.a, fa.b, -coeff);
      trips.emplace_back(fa.b, fa.a, -coeff);
    }
    for (std::size_t w = 0; w < injectors_.size(); ++w)
      rhs[injectors_[w].cell] += inj_rates_day[w] / day;
    for (std::size_t jp = 0; jp < producers_.size(); ++jp) {
      if (!producer_open[jp]) continue;
      const auto& pw = producers_[jp];
      const double wl = pw.wi * lt_[pw.cell];
      trips.emplace_back(pw.cell, pw.cell, wl);
      rhs[pw.cell] += wl * pw.bhp;
    }
    Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    A.setFromTriplets(trips.begin(), trips.end());

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    solver.compute(A);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("pressure system singular");
    Eigen::VectorXd x = solver.solve(rhs);
    const double rhs_norm = std::max(rhs.norm(), 1e-300);
    double rel = (rhs - A * x).norm() / rhs_norm;
    for (int pass = 0; pass < 3 && rel > opts_.lin_tol; ++pass) {
      // One step of iterative refinement per pass.
      x += solver.solve(rhs - A * x);
      rel = (rhs - A * x).norm() / rhs_norm;
    }
    if (rel > opts_.lin_tol)
      throw std::runtime_error("pressure solve did not reach tolerance");
    for (std::size_t c = 0; c < n; ++c) p_[c] = x[static_cast<Eigen::Index>(c)];

    for (std::size_t f = 0; f < faces_.size(); ++f)
      face_flux_[f] = face_coeff_[f] * (p_[faces_[f].a] - p_[faces_[f].b]) * day;
    prod_q_tot_.assign(producers_.size(), 0.0);
    double total_out = 0.0;
    for (std::size_t jp = 0; jp < producers_.size(); ++jp) {
      if (!producer_open[jp]) continue;
      const auto& pw = producers_[jp];
      prod_q_tot_[jp] = pw.wi * lt_[pw.cell] * (p_[pw.cell] - pw.bhp) * day;
      total_out += prod_q_tot_[jp];
    }
    // Relative in/out balance. With no meaningful flow at all the ratio is
    // 0/0; report zero instead of roundoff noise.
    const double scale = std::max(total_inj, total_out);
    diag_.mass_residual.push_back(scale < 1e-9 ? 0.0 : std::abs(total_inj - total_out) / scale);
  }

  void transport(std::span<const double> inj_rates_day, const std::vector<char>& producer_open,
                 double dt_days) {
    const std::size_t n = model_.n_cells();
    // Per-cell throughflow for the CFL bound (in = out up to solver residual;
    // take the max to be safe).
    std::vector<double>& through = delta_;  // reuse scratch
    std::fill(through.begin(), through.end(), 0.0);
    std::vector<double> inflow(n, 0.0);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const double q = face_flux_[f];
      if (q >= 0.0) {
        through[faces_[f].a] += q;
        inflow[faces_[f].b] += q;
      } else {
        through[faces_[f].b] -= q;
        inflow[faces_[f].a] -= q;
      }
    }
    for (std::size_t w = 0; w < injectors_.size(); ++w)
      inflow[injectors_[w].cell] += inj_rates_day[w];
    for (std::size_t jp = 0; jp < producers_.size(); ++jp)
      if (producer_open[jp]) through[producers_[jp].cell] += prod_q_tot_[jp];

    double dt_stable = dt_days;
    for (std::size_t c = 0; c < n; ++c) {
      const double q = std::max(through[c], inflow[c]);
      if (q > 0.0) dt_stable = std::min(dt_stable, opts_.cfl * pv_ / (q * max_dfw_));
    }
    const int nsub = std::max(1, static_cast<int>(std::ceil(dt_days / dt_stable)));
    if (nsub > opts_.max_substeps)
      throw std::runtime_error("transport step failed: substep cap exceeded");
    const double dt_sub = dt_days / nsub;

    const double sw_lo = model_.corey.swc, sw_hi = 1.0 - model_.corey.sor;
    for (int s = 0; s < nsub; ++s) {
      for (std::size_t c = 0; c < n; ++c) fw_[c] = frac_flow(sw_[c]);
      std::fill(delta_.begin(), delta_.end(), 0.0);
      for (std::size_t f = 0; f < faces_.size(); ++f) {
        const double q = face_flux_[f];
        const auto& fa = faces_[f];
        const double m = q * fw_[q >= 0.0 ? fa.a : fa.b] * dt_sub;
        delta_[fa.a] -= m;
        delta_[fa.b] += m;
      }
      for (std::size_t w = 0; w < injectors_.size(); ++w)
        delta_[injectors_[w].cell] += inj_rates_day[w] * dt_sub;
      for (std::size_t jp = 0; jp < producers_.size(); ++jp) {
        if (!producer_open[jp]) continue;
        const int c = producers_[jp].cell;
        const double qw = prod_q_tot_[jp] * fw_[c];
        delta_[c] -= qw * dt_sub;
        produced_water_ += qw * dt_sub;
        produced_oil_ += (prod_q_tot_[jp] - qw) * dt_sub;
      }
      for (std::size_t c = 0; c < n; ++c) {
        sw_[c] += delta_[c] / pv_;
        const double viol = std::max(sw_lo - sw_[c], sw_[c] - sw_hi);
        if (viol > diag_.max_sat_violation) diag_.max_sat_violation = viol;
      }
    }
    diag_.substeps.push_back(nsub);
  }

  ReservoirModel model_;
  SimOptions opts_;
  std::vector<Face> faces_;
  std::vector<WellRef> injectors_, producers_;
  double pv_ = 0.0;  // uniform per-cell pore volume, m^3
  double max_dfw_ = 0.0;
  std::vector<double> sw_, p_;
  std::vector<double> lt_, fw_, delta_, face_coeff_, face_flux_, prod_q_tot_;
  SimDiagnostics diag_;
  double produced_oil_ = 0.0, produced_water_ = 0.0, injected_water_ = 0.0;
  double time_days_ = 0.0;
};

struct SimResult {
  double npv = 0.0;
  std::vector<WellStepRates> rates;
  std::vector<SimState> states;  // n_steps + 1 snapshots when stored
  SimDiagnostics diag;
  double produced_oil = 0.0, produced_water = 0.0, injected_water = 0.0;
};

inline double discount_factor(const EconomicParams& e, double t_end_days) {
  return std::pow(1.0 + e.d, -(t_end_days / e.tau));
}

// Discounted cash flow of a rate history:
//   sum_k dt_k * (1+d)^(-t_{k+1}/tau) * (sum_P (r_o q_o - r_wP q_w) - sum_I r_wI q).
inline double npv_of_rates(const EconomicParams& econ, const std::vector<double>& dt,
                           const std::vector<WellStepRates>& rates) {
  econ.validate();
  if (dt.size() != rates.size()) throw std::invalid_argument("npv_of_rates: step count mismatch");
  double t = 0.0, npv = 0.0;
  for (std::size_t k = 0; k < dt.size(); ++k) {
    t += dt[k];
    double cash = 0.0;  // USD/day
    for (std::size_t jp = 0; jp < rates[k].producer_q_o.size(); ++jp)
      cash += econ.r_o * rates[k].producer_q_o[jp] - econ.r_wP * rates[k].producer_q_w[jp];
    for (double q : rates[k].injector_q) cash -= econ.r_wI * q;
    npv += dt[k] * discount_factor(econ, t) * cash;
  }
  return npv;
}

inline SimResult simulate(const ReservoirModel& model, const EconomicParams& econ,
                          const ControlSchedule& u, SimOptions opts = {}) {
  econ.validate();
  u.validate();
  TwoPhaseSimulator sim(model, opts);
  if (u.n_injectors != sim.n_injectors())
    throw std::invalid_argument("simulate: schedule injector count mismatch");
  SimResult r;
  if (opts.store_states) r.states.push_back(SimState{sim.pressure(), sim.sw()});
  for (int k = 0; k < u.n_steps(); ++k) {
    const std::span<const double> step_rates(u.rates.data() + static_cast<std::size_t>(k) * u.n_injectors,
                                             static_cast<std::size_t>(u.n_injectors));
    r.rates.push_back(sim.step(step_rates, u.dt[k]));
    if (opts.store_states) r.states.push_back(SimState{sim.pressure(), sim.sw()});
  }
  r.npv = npv_of_rates(econ, u.dt, r.rates);
  r.diag = sim.diagnostics();
  r.produced_oil = sim.produced_oil();
  r.produced_water = sim.produced_water();
  r.injected_water = sim.injected_water();
  return r;
}

// One NPV per ensemble member, order preserved. Member failures are tagged
// with the scenario index.
inline ScenarioDistribution npv_distribution(std::span<const ReservoirModel> ensemble,
                                             const EconomicParams& econ, const ControlSchedule& u,
                                             SimOptions opts = {}, int n_threads = 1) {
  if (ensemble.empty()) throw std::invalid_argument("npv_distribution: empty ensemble");
  opts.store_states = false;
  ScenarioDistribution d;
  d.outcomes.resize(ensemble.size());
  parallel_for(ensemble.size(), n_threads, [&](std::size_t i) {
    try {
      d.outcomes[i] = simulate(ensemble[i], econ, u, opts).npv;
    } catch (const std::exception& e) {
      throw std::runtime_error("scenario " + std::to_string(i) + ": " + e.what());
    }
  });
  return d;
}

}  // namespace floodopt
