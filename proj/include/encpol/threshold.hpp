#pragma once

#include <span>
#include <string>
#include <vector>

#include "encpol/data.hpp"
#include "encpol/estimators.hpp"
#include "encpol/nuisance.hpp"
#include "encpol/policy.hpp"

namespace encpol {

// ---------------------------------------------------------------------------
// Closed-form threshold policies for the one-sided take-up parity program
//   maximize value(pi)  s.t.  E[T(pi)|A=a] - E[T(pi)|A=b] <= eps
// over two groups (a = first label, b = second). The dual over lambda >= 0 is
// convex and solved by golden-section search; the optimal policy thresholds
// the pointwise penalized coefficient (threshold_score in policy.hpp).
// ---------------------------------------------------------------------------

// Penalized pointwise score as printed in the reference derivation: the
// responsivity lift times {tau + (lambda/p(A)) (1{A=a}-1{A=b})} plus the
// cross-group baseline-responsivity difference lambda (p_{1|0}(x,a) -
// p_{1|0}(x,b)), with tau = w_y (mu1 - mu0) + w_t. Here lambda > 0 raises the
// first group's score; the solvers below use threshold_score, which carries
// the opposite orientation so that lambda >= 0 tightens the constraint.
double lagrangian_L(double lambda, std::span<const double> x, int g, const NuisanceBundle& eta,
                    const CostSpec& cost);

struct ThresholdSolution {
    double lambda = 0.0;
    PolicySpec policy;
    double dual_value = 0.0;  // empirical dual at lambda
};

// Empirical dual D(lambda) = E_n[score(lambda)_+] + lambda (eps - C0) with C0
// the policy-independent baseline take-up disparity; minimized over
// lambda >= 0 to tolerance 1e-9, bracket grown geometrically from [0,1].
// Checks eps against feasible_epsilon_range first.
ThresholdSolution solve_threshold(const Dataset& ds, const NuisanceBundle& eta,
                                  const CostSpec& cost, double eps);

// Same program restricted to policies that depend on covariates only;
// thresholds the group-membership-weighted score.
ThresholdSolution solve_threshold_covariate_only(const Dataset& ds, const NuisanceBundle& eta,
                                                 const CostSpec& cost, double eps);

struct TradeoffPoint {
    double lambda = 0.0;
    double value = 0.0;
    double value_se = 0.0;
    std::vector<double> takeup;  // one per group
    double disparity = 0.0;
};

struct TradeoffCurve {
    std::vector<TradeoffPoint> points;
    std::vector<std::string> groups;
    std::string to_csv() const;  // lambda,value,value_se,takeup_a,takeup_b,disparity
};

// Evaluates the threshold policy family along a sorted lambda grid: plug-in
// value, per-group take-up and disparity at each grid point.
TradeoffCurve sweep(const Dataset& ds, const NuisanceBundle& eta, const CostSpec& cost,
                    std::span<const double> lambda_grid);

// Extremes of E[T(pi)|a] - E[T(pi)|b] over all policies, in closed form:
// the maximum recommends exactly the positive lifts in group a and the
// negative lifts in group b; the minimum reverses both.
std::pair<double, double> feasible_epsilon_range(const Dataset& ds, const NuisanceBundle& eta);

// Minimizes a convex dual over lambda >= 0: geometric bracket growth from
// [0,1], golden-section to tol, leftmost minimizer on flat segments.
double minimize_convex_dual(const std::function<double(double)>& dual, double tol);

}  // namespace encpol
