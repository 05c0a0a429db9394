#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "encpol/data.hpp"
#include "encpol/nuisance.hpp"
#include "encpol/policy.hpp"

namespace encpol {

enum class OutcomeKind { bernoulli, gaussian };

// One atom of a discrete data-generating process: covariates, group, mass,
// recommendation propensity, responsivities under both recommendation values,
// and mean outcomes under both treatments.
struct DGPCell {
    std::vector<double> x;
    std::string group;
    double mass = 0.0;
    double e1 = 0.5;
    double p11 = 0.5;
    double p10 = 0.5;
    double mu1 = 0.0;
    double mu0 = 0.0;
};

struct DGPSpec {
    std::vector<DGPCell> cells;
    OutcomeKind outcome = OutcomeKind::bernoulli;
    double sigma = 1.0;  // gaussian outcomes only

    void check() const;  // throws spec_error
    std::vector<std::string> groups() const;  // order of first appearance
    std::size_t dim() const { return cells.empty() ? 0 : cells.front().x.size(); }
    double group_mass(const std::string& g) const;

    void save(std::ostream& out) const;
    static DGPSpec load(std::istream& in);
    void save_file(const std::string& path) const;
    static DGPSpec load_file(const std::string& path);
};

// i.i.d. draws: cell ~ mass, R ~ Bern(e1), T ~ Bern(p_{1|R}), Y from the
// outcome model at mu_T. Deterministic given the seed.
Dataset generate(const DGPSpec& spec, std::size_t n, std::uint64_t seed);

// Exact bundle for a dataset drawn from this process: lookup-table predictors
// and exact group frequencies from cell masses. Row predictions are the cell
// parameters. Probabilities are not altered by clipping (clip = 1e-12).
NuisanceBundle oracle_bundle(const DGPSpec& spec, const Dataset& ds);

// ----------------------------- exact oracles -------------------------------

// Expected utility of the policy, by direct summation over cells.
double oracle_value(const DGPSpec& spec, const RandomizedPolicy& pi, const CostSpec& cost,
                    const PolicyEvalContext& ctx = {});

// E[T(pi) | A = group].
double oracle_takeup(const DGPSpec& spec, const RandomizedPolicy& pi, const std::string& group,
                     const PolicyEvalContext& ctx = {});

// take-up(first group) - take-up(second group); requires two groups.
double oracle_disparity(const DGPSpec& spec, const RandomizedPolicy& pi,
                        const PolicyEvalContext& ctx = {});

struct OracleOptimum {
    PolicySpec policy;  // tabular over cells
    double value = 0.0;
    double disparity = 0.0;
};

// Enumerates every deterministic cell policy (caps at 20 cells) and returns
// the best one subject to disparity <= eps (two_sided: |disparity| <= eps).
// Ties prefer fewer recommendations, then the lexicographically smaller
// assignment in cell order. Throws infeasibility_error reporting the
// achievable disparity range when eps excludes every policy.
OracleOptimum oracle_constrained_optimum(const DGPSpec& spec, const CostSpec& cost, double eps,
                                         bool two_sided = false, int threads = 1);

// Range of disparities achievable by deterministic cell policies.
std::pair<double, double> oracle_disparity_range(const DGPSpec& spec);

}  // namespace encpol
