#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

// Risk measures on finite equiprobable profit distributions. Profits follow
// the "higher is better" convention; every measure returns a value on the
// loss side, so smaller risk is better and a risk value of -c corresponds to
// a guaranteed payoff c.

namespace floodopt {

// alpha in [0, 1]: the fraction of probability mass in the tail under
// consideration (0 = worst case only, 1 = the whole distribution).
using RiskLevel = double;

// Equiprobable discrete profit outcomes, one per scenario. The scenario
// probability p = 1/n_d is implicit; there is no per-outcome weight.
struct ScenarioDistribution {
  std::vector<double> outcomes;

  std::size_t size() const { return outcomes.size(); }
  double probability() const { return 1.0 / static_cast<double>(outcomes.size()); }
};

// Scenario-wise profit differences against a reference strategy, evaluated
// on the identical scenario ordering.
struct OffsetDistribution {
  std::vector<double> offsets;

  std::size_t size() const { return offsets.size(); }
};

namespace detail {

inline void require_nonempty(std::size_t n, const char* op) {
  if (n == 0) throw std::invalid_argument(std::string(op) + ": empty distribution");
}

inline void require_level(RiskLevel alpha, const char* op) {
  // The negated comparison also rejects NaN.
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument(std::string(op) + ": risk level must lie in [0, 1]");
}

inline std::vector<double> ascending(const std::vector<double>& v) {
  std::vector<double> s(v);
  std::sort(s.begin(), s.end());
  return s;
}

// Index of the alpha-quantile outcome in the ascending order: floor(alpha/p)
// with p = 1/n, clamped so alpha = 1 selects the largest outcome. Ties in the
// sort keep their original scenario order (which cannot change the selected
// value, only the notional index).
inline std::size_t quantile_index(RiskLevel alpha, std::size_t n) {
  const double scaled = alpha * static_cast<double>(n);
  auto j = static_cast<std::size_t>(scaled);
  return std::min(j, n - 1);
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace detail

// Risk of the expected profit: -(1/n) sum psi_i.
inline double expected_risk(const ScenarioDistribution& d) {
  detail::require_nonempty(d.size(), "expected_risk");
  double sum = 0.0;
  for (double x : d.outcomes) sum += x;
  return -(sum / static_cast<double>(d.size()));
}

// Risk of the single worst outcome: -min_i psi_i.
inline double worst_case_risk(const ScenarioDistribution& d) {
  detail::require_nonempty(d.size(), "worst_case_risk");
  return -*std::min_element(d.outcomes.begin(), d.outcomes.end());
}

// Value at risk: the negated alpha-quantile of the profit distribution. The
// tail beyond the quantile outcome is ignored entirely.
inline double var_risk(const ScenarioDistribution& d, RiskLevel alpha) {
  detail::require_nonempty(d.size(), "var_risk");
  detail::require_level(alpha, "var_risk");
  const auto s = detail::ascending(d.outcomes);
  return -s[detail::quantile_index(alpha, s.size())];
}

// Conditional value at risk: the probability-weighted average of the alpha
// lower tail,
//   -(1/alpha) * (sum_{k<j} p*psi_(k) + (alpha - j*p)*psi_(j)),
// where psi_(k) is the k-th smallest outcome and j = floor(alpha*n). The
// boundary outcome enters with the fractional mass remaining below alpha.
// Reduces to the worst case for alpha < p and to the expected measure at
// alpha = 1 (the latter branch shares expected_risk's code so the identity
// is bitwise).
inline double cvar_risk(const ScenarioDistribution& d, RiskLevel alpha) {
  detail::require_nonempty(d.size(), "cvar_risk");
  detail::require_level(alpha, "cvar_risk");
  const auto s = detail::ascending(d.outcomes);
  const auto n = s.size();
  const double p = 1.0 / static_cast<double>(n);
  if (alpha * static_cast<double>(n) < 1.0) return -s[0];
  if (alpha == 1.0) return expected_risk(d);
  const std::size_t j = detail::quantile_index(alpha, n);
  double acc = 0.0;
  for (std::size_t k = 0; k < j; ++k) acc += p * s[k];
  // Roundoff can make alpha - j*p marginally negative when alpha sits
  // exactly on a probability level; the true boundary mass is then zero.
  const double boundary = std::max(0.0, alpha - static_cast<double>(j) * p);
  acc += boundary * s[j];
  return -acc / alpha;
}

// Markowitz-style scalarization -(lambda*E - (1-lambda)*sigma^2) with the
// population variance (divide by n: the scenarios are the whole model, not a
// sample). Not a coherent measure for lambda < 1: shifting every outcome by
// a constant leaves the variance term behind, breaking constant equivalence.
inline double mean_variance_risk(const ScenarioDistribution& d, double lambda) {
  detail::require_nonempty(d.size(), "mean_variance_risk");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("mean_variance_risk: weight must lie in [0, 1]");
  const double n = static_cast<double>(d.size());
  double mean = 0.0;
  for (double x : d.outcomes) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : d.outcomes) var += (x - mean) * (x - mean);
  var /= n;
  return -(lambda * mean - (1.0 - lambda) * var);
}

struct RiskSpec;

struct ExpectedSpec {};
struct WorstCaseSpec {};
struct VarSpec {
  RiskLevel alpha = 0.0;
};
struct CvarSpec {
  RiskLevel alpha = 1.0;
};
struct MeanVarianceSpec {
  double lambda = 1.0;
};
// Weighted sum of member measures. Weights must be nonnegative; a convex
// combination (weights summing to 1) of coherent averse members is itself
// coherent and averse. Members and weights are parallel arrays so the
// recursive RiskSpec can stay a value type.
struct CombinationSpec {
  std::vector<double> weights;
  std::vector<RiskSpec> members;
};

struct RiskSpec {
  std::variant<ExpectedSpec, WorstCaseSpec, VarSpec, CvarSpec, MeanVarianceSpec, CombinationSpec>
      kind;
};

inline double evaluate_risk(const ScenarioDistribution& d, const RiskSpec& spec);

inline double combined_risk(const ScenarioDistribution& d, const CombinationSpec& spec) {
  if (spec.weights.empty() || spec.weights.size() != spec.members.size())
    throw std::invalid_argument("combined_risk: invalid combination weights");
  for (double w : spec.weights)
    if (!(w >= 0.0)) throw std::invalid_argument("combined_risk: invalid combination weights");
  double acc = 0.0;
  for (std::size_t m = 0; m < spec.members.size(); ++m)
    acc += spec.weights[m] * evaluate_risk(d, spec.members[m]);
  return acc;
}

inline double evaluate_risk(const ScenarioDistribution& d, const RiskSpec& spec) {
  return std::visit(
      detail::overloaded{
          [&](const ExpectedSpec&) { return expected_risk(d); },
          [&](const WorstCaseSpec&) { return worst_case_risk(d); },
          [&](const VarSpec& s) { return var_risk(d, s.alpha); },
          [&](const CvarSpec& s) { return cvar_risk(d, s.alpha); },
          [&](const MeanVarianceSpec& s) { return mean_variance_risk(d, s.lambda); },
          [&](const CombinationSpec& s) { return combined_risk(d, s); },
      },
      spec.kind);
}

// Total measure: sum_m lambda_m * CVaR_{alpha_m} + (1 - sum lambda_m) * (-E).
// The expected-value member absorbs the remaining weight, so the result is a
// convex combination (coherent and averse as long as the inputs are valid).
inline RiskSpec total_measure(const std::vector<RiskLevel>& alphas,
                              const std::vector<double>& weights) {
  if (alphas.empty() || alphas.size() != weights.size())
    throw std::invalid_argument("total_measure: invalid combination weights");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("total_measure: invalid combination weights");
    sum += w;
  }
  if (!(sum > 0.0) || sum > 1.0 + 1e-12)
    throw std::invalid_argument("total_measure: invalid combination weights");
  CombinationSpec spec;
  spec.weights = weights;
  for (RiskLevel a : alphas) spec.members.push_back(RiskSpec{CvarSpec{a}});
  const double remainder = 1.0 - sum;
  if (remainder > 0.0) {
    spec.weights.push_back(remainder);
    spec.members.push_back(RiskSpec{ExpectedSpec{}});
  }
  return RiskSpec{std::move(spec)};
}

inline OffsetDistribution offset_distribution(const ScenarioDistribution& d_opt,
                                              const ScenarioDistribution& d_ref) {
  if (d_opt.size() != d_ref.size())
    throw std::invalid_argument("offset_distribution: length mismatch");
  detail::require_nonempty(d_opt.size(), "offset_distribution");
  OffsetDistribution off;
  off.offsets.resize(d_opt.size());
  for (std::size_t i = 0; i < d_opt.size(); ++i)
    off.offsets[i] = d_opt.outcomes[i] - d_ref.outcomes[i];
  return off;
}

// Summary of an offset distribution: how often and how badly a strategy does
// worse than the reference, and how much better otherwise. mean_negative is
// absent (not zero) when no scenario falls below the reference.
struct OffsetKpis {
  double beta = 0.0;                    // Prob[psi_off < 0]
  std::optional<double> mean_negative;  // mean over {psi_off < 0}
  std::optional<double> mean_nonnegative;
  double mean = 0.0;
  double worst = 0.0;  // min psi_off
};

inline OffsetKpis offset_kpis(const OffsetDistribution& o) {
  detail::require_nonempty(o.size(), "offset_kpis");
  OffsetKpis k;
  double neg_sum = 0.0, pos_sum = 0.0, sum = 0.0;
  std::size_t neg_count = 0;
  k.worst = o.offsets[0];
  for (double x : o.offsets) {
    sum += x;
    if (x < 0.0) {
      neg_sum += x;
      ++neg_count;
    } else {
      pos_sum += x;
    }
    k.worst = std::min(k.worst, x);
  }
  const double n = static_cast<double>(o.size());
  k.beta = static_cast<double>(neg_count) / n;
  k.mean = sum / n;
  if (neg_count > 0) k.mean_negative = neg_sum / static_cast<double>(neg_count);
  if (neg_count < o.size())
    k.mean_nonnegative = pos_sum / static_cast<double>(o.size() - neg_count);
  return k;
}

// A risk value is acceptable relative to a deterministic reference payoff
// c_ref when it does not exceed the risk of that payoff, which is -c_ref.
inline bool acceptable(double risk_value, double c_ref) { return risk_value <= -c_ref; }

}  // namespace floodopt
