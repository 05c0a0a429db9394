#pragma once

#include <span>
#include <string>
#include <vector>

#include "encpol/data.hpp"
#include "encpol/nuisance.hpp"
#include "encpol/policy.hpp"
#include "encpol/threshold.hpp"

namespace encpol {

// Row-level view of the no-overlap regions nov_r = {x : P(R=r|x) ~ 0}, plus
// the rule that defines them (so policies solved here can be re-evaluated at
// new points).
struct OverlapPartition {
    OverlapRule rule;
    std::vector<std::array<bool, 2>> row_nov;  // [row][r]
    std::size_t n_ov = 0;

    bool in_nov(std::size_t i, int r) const { return row_nov[i][r]; }
    bool in_nov_any(std::size_t i) const { return row_nov[i][0] || row_nov[i][1]; }
};

// A row lands in nov_r when its fitted e_r is below the threshold or its
// (r, group) stratum has no observations at all.
OverlapPartition detect_overlap(const Dataset& ds, const NuisanceBundle& eta, double threshold);

// Sharp value bounds for binary outcomes when responsivities on no-overlap
// regions are only known to lie in [blo, bhi] (pointwise; the monotone flag
// of an UncertaintySet floors them at the fitted extrapolation). Returns
// {lower, upper}; both collapse to the plug-in value when the region is
// empty or the interval degenerates.
std::pair<double, double> binary_constant_bound(const Dataset& ds, const RandomizedPolicy& pi,
                                                const NuisanceBundle& eta, double blo, double bhi,
                                                const OverlapPartition& part, const CostSpec& cost,
                                                const PolicyEvalContext* ctx = nullptr);
std::pair<double, double> binary_constant_bound(const Dataset& ds, const RandomizedPolicy& pi,
                                                const NuisanceBundle& eta,
                                                const UncertaintySet& uset,
                                                const OverlapPartition& part, const CostSpec& cost,
                                                const PolicyEvalContext* ctx = nullptr);

// Worst-case (adversarial responsivity) value of the policy over an interval
// uncertainty set: midpoint value minus half the |tau|-weighted interval
// width on the no-overlap rows. Lipschitz sets are rejected.
double robust_lp_objective(const Dataset& ds, const RandomizedPolicy& pi,
                           const NuisanceBundle& eta, const UncertaintySet& uset,
                           const OverlapPartition& part, const CostSpec& cost,
                           const PolicyEvalContext* ctx = nullptr);

// Worst-case take-up disparity (adversary inflates the first group, deflates
// the second on no-overlap rows).
double robust_worst_disparity(const Dataset& ds, const RandomizedPolicy& pi,
                              const NuisanceBundle& eta, const UncertaintySet& uset,
                              const OverlapPartition& part,
                              const PolicyEvalContext* ctx = nullptr);

// Range of the worst-case disparity over all deterministic policies.
std::pair<double, double> robust_feasible_range(const Dataset& ds, const NuisanceBundle& eta,
                                                const UncertaintySet& uset,
                                                const OverlapPartition& part);

// Maximizes the robust objective subject to worst-case disparity <= eps by
// the same dual search as solve_threshold, with the robust pointwise score.
ThresholdSolution solve_robust_threshold(const Dataset& ds, const NuisanceBundle& eta,
                                         const UncertaintySet& uset, const OverlapPartition& part,
                                         const CostSpec& cost, double eps);

// CSV "policy,lower,upper,eps,mode" rows for bound reports.
std::string bounds_csv(const std::vector<std::tuple<std::string, double, double, double,
                                                    std::string>>& rows);

}  // namespace encpol
