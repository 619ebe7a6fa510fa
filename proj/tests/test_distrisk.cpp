#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "floodopt/distrisk.hpp"
#include "oracles.hpp"

using namespace floodopt;
using Catch::Approx;

namespace {

ScenarioDistribution dist(std::vector<double> v) { return ScenarioDistribution{std::move(v)}; }

bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("expected_risk hand values", "[distrisk]") {
  CHECK(expected_risk(dist({3.7, 3.7, 3.7})) == Approx(-3.7));
  CHECK(expected_risk(dist({1, 2, 3, 4})) == Approx(-2.5));
  CHECK(expected_risk(dist({-5})) == Approx(5.0));
  CHECK_THROWS_WITH(expected_risk(dist({})), Catch::Matchers::ContainsSubstring("empty distribution"));
}

TEST_CASE("worst_case_risk hand values", "[distrisk]") {
  CHECK(worst_case_risk(dist({10, 20, 30})) == Approx(-10.0));
  CHECK(worst_case_risk(dist({2.5})) == Approx(-2.5));
  CHECK(worst_case_risk(dist({-3, 7})) == Approx(3.0));
  CHECK_THROWS_WITH(worst_case_risk(dist({})), Catch::Matchers::ContainsSubstring("empty distribution"));
}

TEST_CASE("var_risk quantile selection", "[distrisk]") {
  const auto d = dist({10, 20, 30, 40, 50});
  CHECK(var_risk(d, 0.3) == Approx(-20.0));  // floor(0.3/0.2) = 1 -> second lowest
  CHECK(var_risk(d, 0.0) == Approx(-10.0));
  CHECK(var_risk(d, 1.0) == Approx(-50.0));
  CHECK_THROWS_WITH(var_risk(d, 1.5), Catch::Matchers::ContainsSubstring("risk level"));
  CHECK_THROWS_WITH(var_risk(d, -0.1), Catch::Matchers::ContainsSubstring("risk level"));
  CHECK_THROWS_WITH(var_risk(d, std::numeric_limits<double>::quiet_NaN()),
                    Catch::Matchers::ContainsSubstring("risk level"));
  CHECK_THROWS_WITH(var_risk(dist({}), 0.5), Catch::Matchers::ContainsSubstring("empty distribution"));
}

TEST_CASE("var_risk matches sort oracle on random draws", "[distrisk]") {
  oracles::DistributionSampler sampler(20260817u);
  for (int trial = 0; trial < 500; ++trial) {
    const auto v = sampler.draw(1, 50);
    const double alpha = sampler.uniform(0.0, 1.0);
    CHECK(var_risk(dist(v), alpha) == oracles::var_by_sort(v, alpha));
  }
}

TEST_CASE("cvar_risk hand values", "[distrisk]") {
  const auto d = dist({1, 2, 3, 4});
  CHECK(cvar_risk(d, 0.5) == Approx(-1.5));
  CHECK(cvar_risk(d, 1.0) == Approx(-2.5));
  CHECK(cvar_risk(d, 0.1) == Approx(-1.0));  // alpha < p = 0.25 -> worst case
  CHECK(cvar_risk(d, 0.375) == Approx(-4.0 / 3.0));
  CHECK_THROWS_WITH(cvar_risk(dist({}), 0.5), Catch::Matchers::ContainsSubstring("empty distribution"));
  CHECK_THROWS_WITH(cvar_risk(d, 2.0), Catch::Matchers::ContainsSubstring("risk level"));
}

TEST_CASE("cvar_risk equals mean of j lowest at exact probability levels", "[distrisk]") {
  oracles::DistributionSampler sampler(77u);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = sampler.draw(2, 50);
    const auto n = v.size();
    std::uniform_int_distribution<std::size_t> pick(1, n);
    const std::size_t j = pick(sampler.rng());
    const double alpha = static_cast<double>(j) / static_cast<double>(n);
    const double got = cvar_risk(dist(v), alpha);
    const double want = -oracles::mean_of_lowest(v, j);
    CHECK(close_rel(got, want, 1e-12));
  }
}

TEST_CASE("cvar_risk matches the VaR integral identity", "[distrisk]") {
  oracles::DistributionSampler sampler(31337u);
  for (int trial = 0; trial < 500; ++trial) {
    const auto v = sampler.draw(1, 50);
    const double alpha = sampler.uniform(1e-3, 1.0);
    const double got = cvar_risk(dist(v), alpha);
    const double want = oracles::cvar_by_var_integral(v, alpha);
    CHECK(close_rel(got, want, 1e-10));
  }
}

TEST_CASE("cvar_risk reduction identities are exact", "[distrisk]") {
  oracles::DistributionSampler sampler(99u);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = sampler.draw(1, 50);
    const auto d = dist(v);
    const double p = d.probability();
    // Entire alpha mass inside the first outcome: worst case, bitwise.
    CHECK(cvar_risk(d, 0.5 * p) == worst_case_risk(d));
    CHECK(cvar_risk(d, 0.0) == worst_case_risk(d));
    // Full distribution: expected measure, bitwise (shared code path).
    CHECK(cvar_risk(d, 1.0) == expected_risk(d));
  }
}

TEST_CASE("cvar axioms on randomized distributions", "[distrisk][axioms]") {
  oracles::DistributionSampler sampler(424242u);
  const double tol = 1e-10;
  int draws = 0;
  while (draws < 1200) {
    auto v = sampler.draw(2, 50);
    const double alpha = sampler.uniform(0.01, 0.99);
    const auto d = dist(v);
    ++draws;

    // A1 constant equivalence on a matching constant distribution.
    const double c = sampler.uniform(-50.0, 50.0);
    const auto constant = dist(std::vector<double>(v.size(), c));
    CHECK(close_rel(cvar_risk(constant, alpha), -c, 1e-12));
    CHECK(close_rel(expected_risk(constant), -c, 1e-12));
    CHECK(close_rel(worst_case_risk(constant), -c, 1e-12));

    // A1 aversion: strictly riskier than the mean for alpha < 1 unless the
    // distribution is constant (continuous draws never are).
    CHECK(cvar_risk(d, alpha) > expected_risk(d));

    // A2 positive homogeneity.
    const double lambda = sampler.uniform(0.1, 10.0);
    auto scaled = v;
    for (auto& x : scaled) x *= lambda;
    CHECK(close_rel(cvar_risk(dist(scaled), alpha), lambda * cvar_risk(d, alpha), tol));

    // Translational invariance: adding a sure payoff c lowers risk by c.
    auto shifted = v;
    for (auto& x : shifted) x += c;
    CHECK(close_rel(cvar_risk(dist(shifted), alpha), cvar_risk(d, alpha) - c, tol));

    // A3 sub-additivity under scenario-wise addition.
    auto w = v;
    for (auto& x : w) x = sampler.uniform(-100.0, 100.0);
    auto sum = v;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += w[i];
    const double lhs = cvar_risk(dist(sum), alpha);
    const double rhs = cvar_risk(d, alpha) + cvar_risk(dist(w), alpha);
    CHECK(lhs <= rhs + tol * std::max({1.0, std::abs(lhs), std::abs(rhs)}));

    // A5 monotonicity: pointwise better profits never increase risk.
    auto better = v;
    for (auto& x : better) x += sampler.uniform(0.0, 10.0);
    const double r_lo = cvar_risk(d, alpha);
    const double r_hi = cvar_risk(dist(better), alpha);
    CHECK(r_hi <= r_lo + tol * std::max({1.0, std::abs(r_lo), std::abs(r_hi)}));
  }
}

TEST_CASE("cvar is continuous in alpha, var jumps at probability levels", "[distrisk]") {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto d = dist(v);
  const double spread = 9.0;
  const double lo = 0.05, step = 1e-4;
  double prev = cvar_risk(d, lo);
  double max_jump = 0.0;
  for (double a = lo + step; a <= 1.0 + 1e-12; a += step) {
    const double cur = cvar_risk(d, std::min(a, 1.0));
    max_jump = std::max(max_jump, std::abs(cur - prev));
    prev = cur;
  }
  // Lipschitz bound: |dCVaR/dalpha| <= spread / alpha_min on [lo, 1].
  CHECK(max_jump <= spread * step / lo * 1.05 + 1e-12);

  // VaR at a probability level steps by the gap between adjacent outcomes.
  const double before = var_risk(d, 0.3 - 1e-9);
  const double at = var_risk(d, 0.3);
  CHECK(std::abs(at - before) == Approx(1.0));
}

TEST_CASE("var sub-additivity fails on the frozen fixture and under search", "[distrisk]") {
  const oracles::VarSubaddFixture fx;
  std::vector<double> sum(fx.d1.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = fx.d1[i] + fx.d2[i];
  const double lhs = var_risk(dist(sum), fx.alpha);
  const double rhs = var_risk(dist(fx.d1), fx.alpha) + var_risk(dist(fx.d2), fx.alpha);
  CHECK(lhs > rhs);                    // -10 > -20
  CHECK(lhs == Approx(-10.0));
  CHECK(rhs == Approx(-20.0));
  // The exhaustive search that produced the fixture family still finds
  // violations among tiny integer books.
  CHECK(oracles::var_subadd_violations(2, 0.5) > 0);
}

TEST_CASE("mean_variance_risk hand values and A1 failure", "[distrisk]") {
  CHECK(mean_variance_risk(dist({4, 4, 4}), 0.5) == Approx(-2.0));
  const auto d = dist({3, 1, 7, -2});
  CHECK(mean_variance_risk(d, 1.0) == Approx(expected_risk(d)));
  CHECK(mean_variance_risk(dist({0, 2}), 0.5) == Approx(0.0));
  // Constant equivalence fails for lambda < 1: risk of a sure payoff c is
  // -lambda*c, not -c.
  const double c = 4.0;
  CHECK(mean_variance_risk(dist({c}), 0.5) == Approx(-0.5 * c));
  CHECK(mean_variance_risk(dist({c}), 0.5) != Approx(-c));
  CHECK_THROWS_WITH(mean_variance_risk(d, 1.5), Catch::Matchers::ContainsSubstring("[0, 1]"));
  CHECK_THROWS_WITH(mean_variance_risk(dist({}), 0.5),
                    Catch::Matchers::ContainsSubstring("empty distribution"));
}

TEST_CASE("combined_risk weighted sums and validation", "[distrisk]") {
  const auto d = dist({0, 2});
  CombinationSpec single;
  single.weights = {1.0};
  single.members = {RiskSpec{CvarSpec{0.5}}};
  CHECK(combined_risk(d, single) == Approx(cvar_risk(d, 0.5)));

  // Half CVaR_50%, half expected measure via the total-measure helper.
  const RiskSpec total = total_measure({0.5}, {0.5});
  CHECK(evaluate_risk(d, total) == Approx(-0.5));

  CombinationSpec bad;
  CHECK_THROWS_WITH(combined_risk(d, bad), Catch::Matchers::ContainsSubstring("invalid combination weights"));
  bad.weights = {-0.5, 1.5};
  bad.members = {RiskSpec{ExpectedSpec{}}, RiskSpec{ExpectedSpec{}}};
  CHECK_THROWS_WITH(combined_risk(d, bad), Catch::Matchers::ContainsSubstring("invalid combination weights"));
  CHECK_THROWS_WITH(total_measure({0.5}, {1.5}), Catch::Matchers::ContainsSubstring("invalid combination weights"));
  CHECK_THROWS_WITH(total_measure({0.5}, {0.0}), Catch::Matchers::ContainsSubstring("invalid combination weights"));
}

TEST_CASE("eleven-level total risk measure matches the sort-and-average oracle", "[distrisk]") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = static_cast<double>(i + 1);
  const auto d = dist(v);

  std::vector<double> alphas{0.005};
  for (int j = 1; j <= 10; ++j) alphas.push_back(0.1 * j);
  std::vector<double> weights(alphas.size(), 1.0 / 11.0);

  double oracle_total = 0.0;
  for (double a : alphas) oracle_total += oracles::cvar_by_var_integral(v, a) / 11.0;

  const double got = evaluate_risk(d, total_measure(alphas, weights));
  CHECK(close_rel(got, oracle_total, 1e-12));
  CHECK(got == Approx(-281.0 / 11.0));
}

TEST_CASE("offset_distribution elementwise semantics", "[distrisk]") {
  const auto a = dist({5, 7});
  const auto b = dist({4, 8});
  const auto off = offset_distribution(a, b);
  CHECK(off.offsets == std::vector<double>{1, -1});

  const auto self = offset_distribution(a, a);
  CHECK(self.offsets == std::vector<double>{0, 0});

  const auto zero = dist({0, 0});
  CHECK(offset_distribution(a, zero).offsets == a.outcomes);

  CHECK_THROWS_WITH(offset_distribution(a, dist({1})), Catch::Matchers::ContainsSubstring("length mismatch"));
}

TEST_CASE("offset_kpis partitions gains and losses", "[distrisk]") {
  const auto zeros = offset_distribution(dist({1, 2}), dist({1, 2}));
  const auto k0 = offset_kpis(zeros);
  CHECK(k0.beta == 0.0);
  CHECK_FALSE(k0.mean_negative.has_value());
  REQUIRE(k0.mean_nonnegative.has_value());
  CHECK(*k0.mean_nonnegative == 0.0);
  CHECK(k0.worst == 0.0);
  CHECK(k0.mean == 0.0);

  OffsetDistribution mixed{{1, -1, 2, -2}};
  const auto k1 = offset_kpis(mixed);
  CHECK(k1.beta == Approx(0.5));
  REQUIRE(k1.mean_negative.has_value());
  CHECK(*k1.mean_negative == Approx(-1.5));
  REQUIRE(k1.mean_nonnegative.has_value());
  CHECK(*k1.mean_nonnegative == Approx(1.5));
  CHECK(k1.worst == Approx(-2.0));
  CHECK(k1.mean == Approx(0.0));

  OffsetDistribution single{{3}};
  const auto k2 = offset_kpis(single);
  CHECK(k2.beta == 0.0);
  CHECK(*k2.mean_nonnegative == Approx(3.0));
  CHECK(k2.worst == Approx(3.0));

  CHECK_THROWS_WITH(offset_kpis(OffsetDistribution{}), Catch::Matchers::ContainsSubstring("empty distribution"));
}

TEST_CASE("acceptable compares against the sure-payoff risk", "[distrisk]") {
  CHECK(acceptable(-5.0, 4.0));
  CHECK(acceptable(-3.0, 3.0));  // boundary
  CHECK_FALSE(acceptable(0.0, 1.0));
}
