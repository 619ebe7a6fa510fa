#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

// Reservoir description, Corey relative permeability, Peaceman well index,
// economics, and piecewise-constant control schedules.

namespace floodopt {

struct CoreyParams {
  double krw0 = 0.75;
  double kro0 = 0.8;
  double nw = 3.0;
  double no = 4.0;
  double swc = 0.2;  // connate water saturation
  double sor = 0.1;  // residual oil saturation
};

struct Viscosities {
  double mu_w = 1.0e-3;  // Pa*s
  double mu_o = 5.0e-3;
};

struct RelPerms {
  double krw = 0.0;
  double kro = 0.0;
};

inline constexpr double kPi = 3.14159265358979323846;

namespace detail {

// Small-integer exponents dominate (Corey exponents 3 and 4); multiply
// instead of calling pow in the transport hot loop.
inline double power(double x, double e) {
  const int n = static_cast<int>(e);
  if (static_cast<double>(n) == e && n >= 0 && n <= 8) {
    double r = 1.0;
    for (int k = 0; k < n; ++k) r *= x;
    return r;
  }
  return std::pow(x, e);
}

}  // namespace detail

// Corey power-law relative permeabilities on the normalized saturation
// S* = (sw - swc) / (1 - swc - sor). Saturations outside the mobile window
// are clamped; when a counter is supplied each clamp increments it.
inline RelPerms rel_perms(double sw, const CoreyParams& c, long* clamp_count = nullptr) {
  const double width = 1.0 - c.swc - c.sor;
  double s = (sw - c.swc) / width;
  if (s < 0.0 || s > 1.0) {
    if (clamp_count) ++*clamp_count;
    s = s < 0.0 ? 0.0 : 1.0;
  }
  return RelPerms{c.krw0 * detail::power(s, c.nw), c.kro0 * detail::power(1.0 - s, c.no)};
}

enum class WellKind { Injector, Producer };

struct Well {
  std::string name;
  int i = 0;
  int j = 0;
  WellKind kind = WellKind::Producer;
  double r_well = 0.1;  // m
  double bhp = 39.5e6;  // Pa, meaningful for producers only
};

struct ReservoirModel {
  int nx = 15;
  int ny = 15;
  double dx = 8.0;  // m
  double dy = 8.0;
  double h = 4.0;
  double phi = 0.2;
  std::vector<double> perm;  // m^2, one value per cell, row-major: cell(i,j) = j*nx + i
  CoreyParams corey;
  Viscosities visc;
  double p_init = 40.0e6;  // Pa
  double sw_init = 0.1;    // raised to swc at simulation start if below
  std::vector<Well> wells;

  std::size_t cell(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(i);
  }
  std::size_t n_cells() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }

  void validate() const {
    if (nx < 1 || ny < 1) throw std::invalid_argument("model: grid must be at least 1x1");
    if (!(dx > 0.0 && dy > 0.0 && h > 0.0)) throw std::invalid_argument("model: cell dimensions must be positive");
    if (!(phi > 0.0 && phi < 1.0)) throw std::invalid_argument("model: porosity must lie in (0, 1)");
    if (perm.size() != n_cells()) throw std::invalid_argument("model: permeability field size mismatch");
    for (double k : perm)
      if (!(k > 0.0)) throw std::invalid_argument("model: permeability must be positive everywhere");
    if (!(corey.swc >= 0.0 && corey.sor >= 0.0 && corey.swc + corey.sor < 1.0))
      throw std::invalid_argument("model: saturation endpoints must satisfy swc + sor < 1");
    if (!(corey.krw0 > 0.0 && corey.krw0 <= 1.0 && corey.kro0 > 0.0 && corey.kro0 <= 1.0))
      throw std::invalid_argument("model: endpoint relative permeabilities must lie in (0, 1]");
    if (!(corey.nw >= 1.0 && corey.no >= 1.0))
      throw std::invalid_argument("model: Corey exponents must be at least 1");
    if (!(visc.mu_w > 0.0 && visc.mu_o > 0.0))
      throw std::invalid_argument("model: viscosities must be positive");
    for (const auto& w : wells) {
      if (w.i < 0 || w.i >= nx || w.j < 0 || w.j >= ny)
        throw std::invalid_argument("model: well '" + w.name + "' outside grid");
      if (!(w.r_well > 0.0))
        throw std::invalid_argument("model: well '" + w.name + "' radius must be positive");
    }
  }
};

// Peaceman well index for an isotropic cell: WI = 2*pi*k*h / ln(r_e/r_well)
// with equivalent radius r_e = 0.14*sqrt(dx^2 + dy^2).
inline double well_index(const ReservoirModel& m, const Well& w) {
  const double re = 0.14 * std::sqrt(m.dx * m.dx + m.dy * m.dy);
  if (re <= w.r_well)
    throw std::invalid_argument("well_index: well radius exceeds equivalent radius");
  return 2.0 * kPi * m.perm[m.cell(w.i, w.j)] * m.h / std::log(re / w.r_well);
}

struct EconomicParams {
  double r_o = 126.0;  // oil revenue, USD/m^3
  double r_wP = 19.0;  // produced-water separation cost
  double r_wI = 6.0;   // injected-water cost
  double d = 0.0;      // discount rate per reference period
  double tau = 365.0;  // reference period, days

  void validate() const {
    if (!(r_o > 0.0)) throw std::invalid_argument("economics: oil price must be positive");
    if (!(r_wP >= 0.0 && r_wI >= 0.0)) throw std::invalid_argument("economics: water costs must be nonnegative");
    if (!(d >= 0.0)) throw std::invalid_argument("economics: discount factor must be nonnegative");
    if (!(tau > 0.0)) throw std::invalid_argument("economics: reference period must be positive");
  }
};

// Piecewise-constant injection rates: u(t) = rates[k] on [t_k, t_{k+1}).
// Rates are stored step-major, one entry per injector per step, in m^3/day.
struct ControlSchedule {
  std::vector<double> dt;  // days, one per control step
  int n_injectors = 0;
  std::vector<double> rates;

  int n_steps() const { return static_cast<int>(dt.size()); }
  double rate(int k, int w) const {
    return rates[static_cast<std::size_t>(k) * n_injectors + static_cast<std::size_t>(w)];
  }
  double& rate(int k, int w) {
    return rates[static_cast<std::size_t>(k) * n_injectors + static_cast<std::size_t>(w)];
  }

  void validate() const {
    if (n_injectors < 0) throw std::invalid_argument("schedule: negative injector count");
    if (rates.size() != dt.size() * static_cast<std::size_t>(n_injectors))
      throw std::invalid_argument("schedule: rate matrix size mismatch");
    for (double t : dt)
      if (!(t > 0.0)) throw std::invalid_argument("schedule: step lengths must be positive");
    for (double q : rates)
      if (!(q >= 0.0) || !std::isfinite(q))
        throw std::invalid_argument("schedule: injection rates must be finite and nonnegative");
  }
};

inline ControlSchedule constant_schedule(int n_steps, double dt_days, int n_injectors, double rate) {
  ControlSchedule s;
  s.dt.assign(static_cast<std::size_t>(n_steps), dt_days);
  s.n_injectors = n_injectors;
  s.rates.assign(static_cast<std::size_t>(n_steps) * n_injectors, rate);
  return s;
}

}  // namespace floodopt
