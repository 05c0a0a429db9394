#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "encpol/data.hpp"
#include "encpol/nuisance.hpp"

namespace encpol {

// ---------------------------------------------------------------------------
// Uncertainty sets over the unidentified responsivities q_{1|r} on regions
// where a recommendation value is never observed.
// ---------------------------------------------------------------------------

struct UncertaintySet {
    enum class Mode { interval, lipschitz };
    Mode mode = Mode::interval;

    // Interval mode: per-recommendation bounds, constant by default,
    // optionally covariate/group dependent.
    double const_lo[2] = {0.0, 0.0};
    double const_hi[2] = {1.0, 1.0};
    std::function<double(std::span<const double>, int)> lo_fn[2];
    std::function<double(std::span<const double>, int)> hi_fn[2];

    // When set, q_{1|r} is floored at the fitted p_{1|r} on the no-overlap
    // region (recommendations cannot reduce take-up there).
    bool monotone = false;

    // Lipschitz mode is representable but rejected by the optimizers.
    double lipschitz_L = 0.0;

    double lower(int r, std::span<const double> x, int g) const {
        return lo_fn[r] ? lo_fn[r](x, g) : const_lo[r];
    }
    double upper(int r, std::span<const double> x, int g) const {
        return hi_fn[r] ? hi_fn[r](x, g) : const_hi[r];
    }

    static UncertaintySet constant(double blo, double bhi, bool monotone = false);
};

// Rule form of the no-overlap regions: x is in nov_r for group g when the
// fitted e_r drops below the threshold or the (r, g) stratum had no data.
struct OverlapRule {
    double threshold = 0.01;
    std::vector<std::array<bool, 2>> empty_stratum;  // [group][r]

    bool in_nov(const NuisanceBundle& eta, int r, std::span<const double> x, int g) const {
        if (!empty_stratum.empty() && empty_stratum[g][r]) return true;
        const double e1 = eta.e1_at(x, g);
        return (r == 1 ? e1 : 1.0 - e1) < threshold;
    }
};

// ---------------------------------------------------------------------------
// Policies. Deterministic rules plus finite mixtures of them. Threshold
// policies carry only their multiplier; evaluating one needs the nuisance
// bundle (and, for the robust kind, the uncertainty set and overlap rule).
// ---------------------------------------------------------------------------

enum class ScoreKind { standard, covariate_only, robust };

struct PolicySpec {
    enum class Kind { constant, tabular, linear_index, threshold };
    Kind kind = Kind::constant;

    int constant_action = 0;

    std::map<std::string, int> table;  // cell key -> action in {0,1}

    std::vector<double> beta;               // intercept, covariates, group indicators
    std::vector<std::string> linear_groups;  // indicator order for beta tail

    double lambda = 0.0;
    ScoreKind score = ScoreKind::standard;

    static PolicySpec make_constant(int r);
    static PolicySpec make_tabular(std::map<std::string, int> table);
    static PolicySpec make_linear(std::vector<double> beta, std::vector<std::string> groups);
    static PolicySpec make_threshold(double lambda, ScoreKind score);

    bool operator==(const PolicySpec& o) const;
};

struct RandomizedPolicy {
    std::vector<std::pair<double, PolicySpec>> components;  // weights sum to 1

    RandomizedPolicy() = default;
    RandomizedPolicy(const PolicySpec& p) { components.emplace_back(1.0, p); }

    void add(double weight, const PolicySpec& p);  // merges duplicates
    void normalize();
};

struct PolicyEvalContext {
    const NuisanceBundle* eta = nullptr;
    const CostSpec* cost = nullptr;
    const UncertaintySet* uset = nullptr;
    const OverlapRule* rule = nullptr;
};

std::string cell_key(std::span<const double> x, const std::string& group);

// Probability of recommending, pi_1(x, a). Exact score ties resolve to 0.
double policy_prob1(const PolicySpec& p, std::span<const double> x, const std::string& group,
                    const PolicyEvalContext& ctx = {});
double policy_prob1(const RandomizedPolicy& q, std::span<const double> x, const std::string& group,
                    const PolicyEvalContext& ctx = {});

// Per-row probabilities for a bound dataset.
std::vector<double> policy_prob1_rows(const RandomizedPolicy& q, const Dataset& ds,
                                      const PolicyEvalContext& ctx = {});

// ---------------------------------------------------------------------------
// Threshold scores. Group 0 of the bundle's group set plays the role of the
// advantaged side: the one-sided take-up constraint is
//   E[T(pi) | first group] - E[T(pi) | second group] <= eps,
// and a larger lambda >= 0 pushes recommendations away from the first group
// and toward the second. The score is the exact per-point coefficient of
// pi_1 in the penalized objective, including the recommendation weight.
// ---------------------------------------------------------------------------

double threshold_score(double lambda, std::span<const double> x, int g,
                       const NuisanceBundle& eta, const CostSpec& cost);

// Group-marginalized score for policies restricted to depend on x only.
double covariate_only_score(double lambda, std::span<const double> x,
                            const NuisanceBundle& eta, const CostSpec& cost);

// Worst-case counterpart on no-overlap regions: the value side prices the
// interval width, the constraint side uses the upper bounds for the first
// group and the lower bounds for the second.
double robust_threshold_score(double lambda, std::span<const double> x, int g,
                              const NuisanceBundle& eta, const CostSpec& cost,
                              const UncertaintySet& uset, const OverlapRule& rule);

std::string serialize_policy(const RandomizedPolicy& q);
RandomizedPolicy parse_policy(std::istream& in);

}  // namespace encpol
