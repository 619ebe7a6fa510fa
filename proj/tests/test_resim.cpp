#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "desk.hpp"
#include "floodopt/reservoir.hpp"
#include "floodopt/simulator.hpp"
#include "oracles.hpp"

using namespace floodopt;
using Catch::Approx;
using deskfix::desk_model;
using deskfix::homogeneous_1d;

namespace {

double mobile_oil(const ReservoirModel& m, const std::vector<double>& sw) {
  const double pv = m.dx * m.dy * m.h * m.phi;
  double vol = 0.0;
  for (double s : sw) vol += pv * (1.0 - m.corey.sor - s);
  return vol;
}

}  // namespace

TEST_CASE("Corey relative permeabilities", "[resim]") {
  const CoreyParams c;  // Table defaults: krw0 0.75, kro0 0.8, nw 3, no 4, swc 0.2, sor 0.1
  const auto at_connate = rel_perms(c.swc, c);
  CHECK(at_connate.krw == Approx(0.0).margin(1e-15));
  CHECK(at_connate.kro == Approx(c.kro0));
  const auto at_residual = rel_perms(1.0 - c.sor, c);
  CHECK(at_residual.krw == Approx(c.krw0));
  CHECK(at_residual.kro == Approx(0.0).margin(1e-15));
  // S* = 0.5 at sw = 0.55.
  const auto mid = rel_perms(0.55, c);
  CHECK(mid.krw == Approx(0.75 * 0.125));
  CHECK(mid.kro == Approx(0.8 * 0.0625));

  long clamps = 0;
  rel_perms(0.05, c, &clamps);
  rel_perms(0.95, c, &clamps);
  rel_perms(0.5, c, &clamps);
  CHECK(clamps == 2);
}

TEST_CASE("Peaceman well index", "[resim]") {
  ReservoirModel m;
  m.nx = m.ny = 1;
  m.dx = m.dy = 8.0;
  m.h = 4.0;
  m.perm = {1.0e-13};
  Well w{"P", 0, 0, WellKind::Producer, 0.1, 39.5e6};

  const double re = 0.14 * std::sqrt(128.0);
  CHECK(re == Approx(1.58392).epsilon(1e-5));
  const double expect = 2.0 * kPi * 1.0e-13 * 4.0 / std::log(re / 0.1);
  CHECK(well_index(m, w) == Approx(expect).epsilon(1e-12));
  CHECK(std::log(re / 0.1) == Approx(2.76254).epsilon(1e-4));

  m.perm = {2.0e-13};
  CHECK(well_index(m, w) == Approx(2.0 * expect).epsilon(1e-12));

  m.perm = {0.0};
  CHECK(well_index(m, w) == 0.0);

  w.r_well = 2.0;  // larger than the equivalent radius
  m.perm = {1.0e-13};
  CHECK_THROWS_WITH(well_index(m, w),
                    Catch::Matchers::ContainsSubstring("well radius exceeds equivalent radius"));
}

TEST_CASE("npv_of_rates hand evaluation", "[resim]") {
  EconomicParams econ;  // 126 / 19 / 6, d = 0
  WellStepRates r;
  r.injector_q = {12.0};
  r.producer_q_o = {10.0};
  r.producer_q_w = {2.0};
  CHECK(npv_of_rates(econ, {90.0}, {r}) == Approx(90.0 * (126.0 * 10 - 19.0 * 2 - 6.0 * 12)));
  CHECK(npv_of_rates(econ, {90.0}, {r}) == Approx(103500.0));

  // Discounting: one year at d = 0.1 divides the cash flow by 1.1.
  econ.d = 0.1;
  CHECK(npv_of_rates(econ, {365.0}, {r}) == Approx(365.0 * 1150.0 / 1.1));

  CHECK_THROWS_WITH(npv_of_rates(econ, {90.0, 90.0}, {r}),
                    Catch::Matchers::ContainsSubstring("step count mismatch"));
}

TEST_CASE("zero injection at pressure equilibrium produces nothing", "[resim]") {
  auto m = desk_model();
  m.p_init = 39.5e6;  // equal to producer bhp
  const auto u = constant_schedule(3, 90.0, 4, 0.0);
  const auto res = simulate(m, EconomicParams{}, u);
  CHECK(res.npv == Approx(0.0).margin(1e-6));
  for (const auto& r : res.rates)
    for (std::size_t j = 0; j < r.producer_q_o.size(); ++j) {
      CHECK(std::abs(r.producer_q_o[j]) < 1e-9);
      CHECK(std::abs(r.producer_q_w[j]) < 1e-9);
    }
}

TEST_CASE("conservation over a long desk run", "[resim]") {
  const auto m = desk_model();
  const auto u = constant_schedule(40, 90.0, 4, 60.0);
  const auto res = simulate(m, EconomicParams{}, u);

  for (double r : res.diag.mass_residual) CHECK(r < 1e-8);
  CHECK(res.diag.max_sat_violation <= 1e-12);

  const double oil0 = mobile_oil(m, res.states.front().sw);
  const double oilT = mobile_oil(m, res.states.back().sw);
  CHECK(res.produced_oil == Approx(oil0 - oilT).epsilon(1e-6));

  // Water bookkeeping closes the same way.
  CHECK(res.injected_water - res.produced_water ==
        Approx(oil0 - oilT).epsilon(1e-6));

  // Producers never flow backwards.
  for (const auto& r : res.rates)
    for (std::size_t j = 0; j < r.producer_q_o.size(); ++j) {
      CHECK(r.producer_q_o[j] >= 0.0);
      CHECK(r.producer_q_w[j] >= 0.0);
    }
}

TEST_CASE("four-fold rotational symmetry is preserved", "[resim]") {
  ReservoirModel m = desk_model();
  m.perm.assign(m.n_cells(), 1.0e-13);
  m.wells = {
      {"I1", 2, 2, WellKind::Injector, 0.1, 0.0},
      {"I2", 12, 2, WellKind::Injector, 0.1, 0.0},
      {"I3", 12, 12, WellKind::Injector, 0.1, 0.0},
      {"I4", 2, 12, WellKind::Injector, 0.1, 0.0},
      {"P", 7, 7, WellKind::Producer, 0.1, 39.5e6},
  };
  const auto u = constant_schedule(5, 90.0, 4, 60.0);
  const auto res = simulate(m, EconomicParams{}, u);
  const auto& sw = res.states.back().sw;
  double max_diff = 0.0;
  for (int j = 0; j < 15; ++j)
    for (int i = 0; i < 15; ++i) {
      // Quarter-turn image of (i, j).
      const double rotated = sw[m.cell(j, 14 - i)];
      max_diff = std::max(max_diff, std::abs(sw[m.cell(i, j)] - rotated));
    }
  CHECK(max_diff <= 1e-10);
}

TEST_CASE("water front converges to the Buckley-Leverett solution", "[resim]") {
  const oracles::BlParams blp{0.75, 0.8, 3.0, 4.0, 0.2, 0.1, 1.0e-3, 5.0e-3};
  const auto front = oracles::bl_front(blp);
  REQUIRE(front.s_front > blp.swc);

  const double length = 320.0, q = 30.0, t_days = 24.0;
  const double area_phi = 10.0 * 5.0 * 0.2;  // dy * h * phi
  const double x_front = q * t_days / area_phi * front.chord_slope;
  REQUIRE(x_front > 0.2 * length);
  REQUIRE(x_front < 0.8 * length);

  const double s_mid = 0.5 * (blp.swc + front.s_front);
  std::vector<double> errors;
  for (int nx : {32, 64, 128}) {
    const auto m = homogeneous_1d(nx, length);
    ControlSchedule u = constant_schedule(1, t_days, 1, q);
    const auto res = simulate(m, EconomicParams{}, u);
    const auto& sw = res.states.back().sw;
    // Interpolated position where the profile crosses the front midpoint.
    double x_sim = 0.0;
    for (int i = 0; i + 1 < nx; ++i) {
      if (sw[i] >= s_mid && sw[i + 1] < s_mid) {
        const double frac = (sw[i] - s_mid) / (sw[i] - sw[i + 1]);
        x_sim = (i + 0.5 + frac) * m.dx;
        break;
      }
    }
    REQUIRE(x_sim > 0.0);
    errors.push_back(std::abs(x_sim - x_front));
  }
  CHECK(errors[1] < errors[0]);
  CHECK(errors[2] < errors[1]);
}

TEST_CASE("NPV is monotone in the oil price and volumes are price-independent", "[resim]") {
  const auto m = desk_model();
  const auto u = constant_schedule(6, 90.0, 4, 50.0);
  EconomicParams cheap, rich;
  rich.r_o = 150.0;
  const auto res_cheap = simulate(m, cheap, u);
  const auto res_rich = simulate(m, rich, u);
  CHECK(res_rich.npv > res_cheap.npv);
  // Physics never sees prices: identical rate histories, bitwise.
  REQUIRE(res_cheap.rates.size() == res_rich.rates.size());
  for (std::size_t k = 0; k < res_cheap.rates.size(); ++k) {
    CHECK(res_cheap.rates[k].producer_q_o == res_rich.rates[k].producer_q_o);
    CHECK(res_cheap.rates[k].producer_q_w == res_rich.rates[k].producer_q_w);
  }
}

TEST_CASE("simulation is deterministic", "[resim]") {
  const auto m = desk_model();
  const auto u = constant_schedule(8, 90.0, 4, 55.0);
  const auto a = simulate(m, EconomicParams{}, u);
  const auto b = simulate(m, EconomicParams{}, u);
  CHECK(a.npv == b.npv);
  CHECK(a.states.back().sw == b.states.back().sw);
  CHECK(a.states.back().pressure == b.states.back().pressure);
}

TEST_CASE("npv_distribution matches per-member simulation", "[resim]") {
  std::vector<ReservoirModel> ensemble;
  for (int i = 0; i < 5; ++i) {
    auto m = desk_model();
    for (auto& k : m.perm) k *= 1.0 + 0.1 * i;
    ensemble.push_back(std::move(m));
  }
  ensemble.push_back(ensemble[1]);  // duplicated member
  const auto u = constant_schedule(4, 90.0, 4, 50.0);
  const EconomicParams econ;
  const auto d = npv_distribution(ensemble, econ, u);
  REQUIRE(d.size() == 6);
  for (std::size_t i = 0; i < ensemble.size(); ++i)
    CHECK(d.outcomes[i] == simulate(ensemble[i], econ, u).npv);
  CHECK(d.outcomes[5] == d.outcomes[1]);

  const std::vector<ReservoirModel> one{ensemble[0]};
  CHECK(npv_distribution(one, econ, u).outcomes ==
        std::vector<double>{simulate(ensemble[0], econ, u).npv});

  // Member failures carry the scenario index.
  ensemble[2].perm[0] = -1.0;
  CHECK_THROWS_WITH(npv_distribution(ensemble, econ, u),
                    Catch::Matchers::ContainsSubstring("scenario 2"));
}

TEST_CASE("failure modes raise the contracted errors", "[resim]") {
  // Injection with no producer has no incompressible solution.
  auto m = desk_model();
  m.wells.resize(4);  // injectors only
  const auto u = constant_schedule(1, 90.0, 4, 60.0);
  CHECK_THROWS_WITH(simulate(m, EconomicParams{}, u),
                    Catch::Matchers::ContainsSubstring("pressure system singular"));

  // Substep cap.
  SimOptions tight;
  tight.max_substeps = 1;
  CHECK_THROWS_WITH(simulate(desk_model(), EconomicParams{}, u, tight),
                    Catch::Matchers::ContainsSubstring("transport step failed"));

  // Schedule validation.
  ControlSchedule bad = constant_schedule(2, 90.0, 4, 50.0);
  bad.rate(1, 2) = -1.0;
  CHECK_THROWS_WITH(simulate(desk_model(), EconomicParams{}, bad),
                    Catch::Matchers::ContainsSubstring("nonnegative"));

  ControlSchedule zero_dt = constant_schedule(1, 90.0, 4, 50.0);
  zero_dt.dt[0] = 0.0;
  CHECK_THROWS_WITH(simulate(desk_model(), EconomicParams{}, zero_dt),
                    Catch::Matchers::ContainsSubstring("positive"));

  // Model validation.
  auto bad_model = desk_model();
  bad_model.perm[3] = 0.0;
  CHECK_THROWS_WITH(simulate(bad_model, EconomicParams{}, u),
                    Catch::Matchers::ContainsSubstring("permeability"));
}
