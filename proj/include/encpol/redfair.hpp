#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "encpol/data.hpp"
#include "encpol/estimators.hpp"
#include "encpol/nuisance.hpp"
#include "encpol/policy.hpp"

namespace encpol {

// ---------------------------------------------------------------------------
// Constraint framework: K linear constraints over J conditional moments,
//   gamma_k(pi) = sum_j M[k][j] h_j(pi) <= d_k,
//   h_j(pi) = E_n[ g_j(O, pi) | event_j ],
// where every g_j is linear in pi_1: g_j(O_i, pi) = slope[i] pi_1(i) + intercept[i].
// Conditioning events never depend on the policy.
// ---------------------------------------------------------------------------

struct Moment {
    std::string name;
    std::vector<double> slope, intercept;  // per row
    std::vector<std::uint8_t> event;       // conditioning mask per row
    double p_hat = 1.0;                    // empirical event probability
    std::size_t count = 0;

    double value(std::span<const double> pi1) const;
};

struct ConstraintSystem {
    enum class Kind { treatment_parity, responder_parity, custom };
    Kind kind = Kind::custom;

    std::vector<Moment> moments;         // J entries
    std::vector<std::vector<double>> M;  // K rows of J coefficients
    std::vector<double> d;               // K bounds
    std::vector<std::string> row_names;
    // When nonempty, used verbatim as additive feasibility slacks instead of
    // the C' sum_j |M_kj| n_j^{-alpha} rule.
    std::vector<double> slack_override;

    std::size_t K() const { return M.size(); }
    std::size_t J() const { return moments.size(); }

    std::vector<double> moment_values(std::span<const double> pi1) const;      // h
    std::vector<double> constraint_values(std::span<const double> pi1) const;  // M h
    void check() const;
};

// Take-up parity: one moment per group plus the marginal, paired epigraph
// rows enforcing |h_group - h_marginal| <= d. Moments use the fitted
// responsivities: g = pi_1 (p11 - p10) + p10.
ConstraintSystem make_treatment_parity(const Dataset& ds, const NuisanceBundle& eta, double d);

// Same shape with responder-weighted moments: g scaled by (mu1 - mu0) over
// the row's group-mean effect. Binary outcomes; nonpositive group-mean
// effects raise monotonicity_error.
ConstraintSystem make_responder_parity(const Dataset& ds, const NuisanceBundle& eta, double d);

// ---------------------------------------------------------------------------
// Saddle-point solver
// ---------------------------------------------------------------------------

struct RedfairParams {
    // NaN fields resolve to the rate-guided defaults: nu = n^-alpha,
    // B = 10/nu, omega = 1 / (2 xi^2 n^(2 alpha)) with xi the largest
    // constraint residual at the first iterate.
    double B = std::numeric_limits<double>::quiet_NaN();
    double nu = std::numeric_limits<double>::quiet_NaN();
    double omega = std::numeric_limits<double>::quiet_NaN();
    int max_iterations = 2000;
    double alpha = 0.5;
    double cprime = 1.0;  // feasibility-slack scale; 0 disables slacks
    std::uint64_t seed = 0;

    PseudoKind psi = PseudoKind::DM;
    enum class PolicyClass { tabular, linear } policy_class = PolicyClass::tabular;
    OptimizerBudget budget;  // linear-class surrogate fits
    double surrogate_reg = 1e-9;

    double slice_scale = 2.0;  // two-stage slice width: scale * sd * n^-alpha
};

// Weighted-classification reduction weights as printed in the reference
// derivation: psi~ = psi + (lambda_A / p_A) * slope_A(row) - sum_u lambda_u,
// with lambda_u = lambda[(u,+)] - lambda[(u,-)] over the parity row layout.
// Returns {|psi~|, sign} with sign(0) = -1.
std::pair<double, int> lagrangian_weights(const Dataset& ds, std::size_t i,
                                          const NuisanceBundle& eta,
                                          std::span<const double> lambda,
                                          const ConstraintSystem& sys, PseudoKind kind,
                                          const CostSpec& cost);

// Exact maximizer of the penalized objective over the policy class. Tabular
// solves each covariate-group cell by the sign of its summed coefficient;
// the linear class minimizes the weighted logistic surrogate.
PolicySpec best_response_policy(std::span<const double> lambda, const Dataset& ds,
                                const NuisanceBundle& eta, const ConstraintSystem& sys,
                                const CostSpec& cost, const RedfairParams& params);

// Zero when every constraint holds, otherwise B on the most violated one
// (ties to the lowest index).
std::vector<double> best_response_lambda(std::span<const double> gamma,
                                         std::span<const double> d_hat, double B);

struct TraceRow {
    int iter = 0;
    std::vector<double> lambda;
    double gap = 0.0;
    double value = 0.0;
    std::vector<double> violations;
};

struct SaddleResult {
    RandomizedPolicy Q;
    std::vector<double> lambda_avg;
    double gap = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
    double value = 0.0;                     // objective estimate at Q
    std::vector<double> constraint_values;  // gamma(Q)
    std::vector<double> d_hat;              // bounds including slack
    double B_used = 0.0, nu_target = 0.0, omega_used = 0.0;
    std::vector<TraceRow> trace;

    std::string trace_csv() const;
};

// Multiplicative-weights multiplier player against exact best responses,
// averaged iterates, terminating when the certified saddle gap reaches nu.
// Hitting the iteration cap returns the averaged iterate with its gap,
// flagged via converged = false.
SaddleResult redfair(const Dataset& ds, const ConstraintSystem& sys, const NuisanceBundle& eta,
                     const CostSpec& cost, const RedfairParams& params);

// Post-hoc audit of a claimed approximate saddle point.
double saddle_gap(const Dataset& ds, const ConstraintSystem& sys, const NuisanceBundle& eta,
                  const CostSpec& cost, const RedfairParams& params, const RandomizedPolicy& Q,
                  std::span<const double> lambda, std::span<const double> d_hat, double B);

// ---------------------------------------------------------------------------
// Two-stage refinement: solve on one half, re-solve on the other half with
// variance-calibrated slacks and slice constraints tying the second-stage
// policy to the first stage's value and binding moments.
// ---------------------------------------------------------------------------

using NuisanceMaker = std::function<NuisanceBundle(const Dataset&)>;
using SystemMaker = std::function<ConstraintSystem(const Dataset&, const NuisanceBundle&)>;

struct TwoStageResult {
    SaddleResult stage1, stage2;
    RandomizedPolicy final_policy;
    bool fallback = false;  // stage-2 system could not be satisfied
    std::vector<double> sigma2;        // per-moment variance estimates at stage-1 policy
    std::vector<std::size_t> binding;  // stage-1 near-tight constraint rows
    double epsilon_n = 0.0;
    std::vector<double> d_hat2;           // variance-calibrated stage-2 bounds
    double stage1_value_on_stage2 = 0.0;  // slice reference point
};

TwoStageResult two_stage(const Dataset& ds, const SystemMaker& make_system,
                         const NuisanceMaker& make_nuisances, const CostSpec& cost,
                         const RedfairParams& params);

// d + 2 sum_j |M_kj| sigma2_j n^-alpha.
double augmented_bound(double d, std::span<const double> M_row, std::span<const double> sigma2,
                       std::size_t n, double alpha);

}  // namespace encpol
