#pragma once

#include <span>
#include <string>
#include <vector>

#include "encpol/data.hpp"
#include "encpol/nuisance.hpp"
#include "encpol/policy.hpp"

namespace encpol {

struct ValueEstimate {
    double point = 0.0;
    double standard_error = 0.0;
    std::vector<double> scores;  // per observation; point is their mean
    std::size_t n = 0;
    bool overlap_warning = false;  // propensities at the clip boundary on >5% of rows

    static ValueEstimate from_scores(std::vector<double> scores);
};

enum class PseudoKind { DM, IPW, DR };

// Plug-in value: per row, sum over r of pi_r(x,a) * sum over t of
// p_{t|r}(x,a) * (w_y mu_t + w_t t + w_r r).
ValueEstimate dm_value(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                       const CostSpec& cost, const PolicyEvalContext* ctx = nullptr);

// Pure importance weighting by the recommendation propensity.
ValueEstimate ipw_value(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                        const CostSpec& cost, const PolicyEvalContext* ctx = nullptr);

// Augmented estimator: propensity-weighted residual corrections around the
// plug-in, consistent when either the outcome/responsivity models or the
// recommendation propensity are correct.
ValueEstimate dr_value(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                       const CostSpec& cost, const PolicyEvalContext* ctx = nullptr);

// Marginal-treatment-propensity control variate; needs treatment overlap but
// no recommendation overlap.
ValueEstimate cv_value(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                       const CostSpec& cost, const PolicyEvalContext* ctx = nullptr);

// Augmented group take-up E[T(pi) | A = group].
ValueEstimate dr_takeup(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                        const std::string& group, const PolicyEvalContext* ctx = nullptr);

// Plug-in group take-up.
ValueEstimate plugin_takeup(const Dataset& ds, const RandomizedPolicy& pi,
                            const NuisanceBundle& eta, const std::string& group,
                            const PolicyEvalContext* ctx = nullptr);

// Per-row recommendation-effect score with E[psi | X, A] equal to the
// conditional utility contrast between recommending and not.
double pseudo_outcome(const Dataset& ds, std::size_t i, const NuisanceBundle& eta,
                      PseudoKind kind, const CostSpec& cost);

// Take-up among units whose outcome responds to treatment, for binary
// outcomes under monotone response: plug-in ratio with the group-mean effect
// in the denominator. Scores are the linearized ratio contributions.
ValueEstimate responder_takeup(const Dataset& ds, const RandomizedPolicy& pi,
                               const NuisanceBundle& eta, const std::string& group,
                               const PolicyEvalContext* ctx = nullptr);

// CSV rows "estimator,point,se,n" for a batch of named estimates.
std::string estimates_csv(const std::vector<std::pair<std::string, ValueEstimate>>& rows);

}  // namespace encpol
