// Walks the risk measures over one discrete profit distribution: the
// VaR/CVaR profile across risk levels, the coherence properties that make
// CVaR usable as an optimization objective, and the acceptability test
// against a sure reference payoff.

#include <cstdio>
#include <vector>

#include "floodopt/distrisk.hpp"

using namespace floodopt;

int main() {
  // Ten equiprobable profit outcomes, in millions: one bad tail scenario,
  // a cluster in the middle, two good ones.
  const ScenarioDistribution d{{-2.0, 1.5, 2.0, 2.2, 2.5, 2.8, 3.0, 3.1, 4.5, 6.0}};

  std::printf("profit outcomes (MUSD):");
  for (double x : d.outcomes) std::printf(" %.1f", x);
  std::printf("\n\n");

  std::printf("%-8s %12s %12s\n", "level", "VaR risk", "CVaR risk");
  for (double alpha : {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0})
    std::printf("%-8.2f %12.4f %12.4f\n", alpha, var_risk(d, alpha), cvar_risk(d, alpha));

  std::printf("\nendpoints: worst case %.4f, negated mean %.4f\n", worst_case_risk(d),
              expected_risk(d));

  // Translational invariance: a sure payoff c lowers the risk by exactly c,
  // so risk numbers are directly comparable to cash amounts.
  ScenarioDistribution shifted = d;
  for (double& x : shifted.outcomes) x += 1.0;
  std::printf("add a sure +1.0: CVaR(30%%) %.4f -> %.4f\n", cvar_risk(d, 0.3),
              cvar_risk(shifted, 0.3));

  // Acceptability: is the risk at most as bad as settling for a sure 1.8?
  const double c_ref = 1.8;
  std::printf("acceptable against a sure %.1f at 30%%: %s, at 5%%: %s\n", c_ref,
              acceptable(cvar_risk(d, 0.3), c_ref) ? "yes" : "no",
              acceptable(cvar_risk(d, 0.05), c_ref) ? "yes" : "no");

  // The eleven-level total measure averages CVaR over the whole grid; it is
  // the single number the experiment tables report per strategy.
  std::vector<double> alphas{0.005};
  for (int j = 1; j <= 10; ++j) alphas.push_back(0.1 * j);
  const std::vector<double> weights(alphas.size(), 1.0 / 11.0);
  std::printf("total risk over the eleven-level grid: %.4f\n",
              evaluate_risk(d, total_measure(alphas, weights)));
  return 0;
}
