#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "encpol/common.hpp"
#include "encpol/data.hpp"

namespace encpol {

// ---------------------------------------------------------------------------
// Linear models
// ---------------------------------------------------------------------------

enum class Link { logistic, identity };

struct LinearModel {
    std::vector<double> w;  // w[0] intercept, then one coefficient per feature
    Link link = Link::logistic;
    bool converged = true;
    int iterations = 0;

    double index(std::span<const double> x) const;
    double predict(std::span<const double> x) const;  // logistic: in (0,1)
};

struct OptimizerBudget {
    int max_iterations = 10000;
    double grad_tol = 1e-8;  // on the sample-mean-scaled objective
};

// Weighted penalized fit by full-batch gradient descent with backtracking
// line search, deterministic from zero initialization. The intercept is not
// penalized. Single-class labels with reg == 0 are rejected.
LinearModel fit_logistic(std::span<const double> features, std::size_t n, std::size_t d,
                         std::span<const double> labels, std::span<const double> weights,
                         double reg, const OptimizerBudget& budget = {});

// Identity-link analogue (penalized weighted least squares), same optimizer.
LinearModel fit_linear(std::span<const double> features, std::size_t n, std::size_t d,
                       std::span<const double> labels, std::span<const double> weights,
                       double reg, const OptimizerBudget& budget = {});

// Generic convex surrogate fit: minimizes mean_i weight_i * loss(f(x_i), label_i)
// over linear f; loss(g, s) = 2*log(1+exp(g)) - (s+1)*g with s in {-1,+1}.
LinearModel fit_weighted_surrogate(std::span<const double> features, std::size_t n, std::size_t d,
                                   std::span<const double> weights, std::span<const double> signs,
                                   double reg, const OptimizerBudget& budget = {});

// ---------------------------------------------------------------------------
// Nuisance bundle
// ---------------------------------------------------------------------------

struct NuisanceConfig {
    int folds = 5;          // 1 = in-sample fit
    double reg = 1e-6;
    OptimizerBudget budget;
    double clip = 0.01;     // probability predictions live in [clip, 1-clip]
    bool fit_membership = true;  // group-membership models (covariate-only rules)
};

// One prediction function: a fitted linear model or an exact lookup table
// keyed by covariate values (used when the data-generating process is known).
struct Predictor {
    enum class Kind { linear, table } kind = Kind::linear;
    LinearModel model;
    std::map<std::string, double> table;  // covariate key -> value
    double eval(std::span<const double> x) const;
};

// Fitted recommendation propensity e_1, responsivities p_{1|1}, p_{1|0},
// outcome regressions mu_1, mu_0, marginal treatment propensity p_1, and
// group frequencies. Row-level predictions are cross-fitted for the dataset
// the bundle was built on; *_at predictions use the full-data (or exact)
// model and may extrapolate, including across groups.
class NuisanceBundle {
  public:
    enum Fn { E1 = 0, P11, P10, MU1, MU0, P1M, N_FN };

    // Cross-fitted per-row predictions on the bound dataset.
    double e1(std::size_t i) const { return rows_[E1][i]; }
    double p11(std::size_t i) const { return rows_[P11][i]; }
    double p10(std::size_t i) const { return rows_[P10][i]; }
    double mu1(std::size_t i) const { return rows_[MU1][i]; }
    double mu0(std::size_t i) const { return rows_[MU0][i]; }
    double p1_marginal(std::size_t i) const { return rows_[P1M][i]; }
    double lift(std::size_t i) const { return rows_[P11][i] - rows_[P10][i]; }
    double e_r(std::size_t i, int r) const { return r == 1 ? e1(i) : 1.0 - e1(i); }
    double p1_given_r(std::size_t i, int r) const { return r == 1 ? p11(i) : p10(i); }

    // Arbitrary-point predictions (full-data models; cross-group evaluation
    // is extrapolation for fitted bundles, exact for oracle bundles).
    double at(Fn f, std::span<const double> x, int group) const;
    double e1_at(std::span<const double> x, int g) const { return at(E1, x, g); }
    double p11_at(std::span<const double> x, int g) const { return at(P11, x, g); }
    double p10_at(std::span<const double> x, int g) const { return at(P10, x, g); }
    double mu1_at(std::span<const double> x, int g) const { return at(MU1, x, g); }
    double mu0_at(std::span<const double> x, int g) const { return at(MU0, x, g); }
    double lift_at(std::span<const double> x, int g) const {
        return at(P11, x, g) - at(P10, x, g);
    }

    // P(A = g | X = x), normalized over groups.
    std::vector<double> group_membership_at(std::span<const double> x) const;

    const std::vector<std::string>& group_set() const { return groups_; }
    std::size_t n_groups() const { return groups_.size(); }
    double p_group(int g) const { return p_group_[g]; }
    double clip() const { return clip_; }
    std::size_t n_rows() const { return n_; }
    int fold_of(std::size_t i) const { return fold_[i]; }
    int folds() const { return n_folds_; }
    bool y_binary() const { return y_binary_; }
    bool all_models_converged() const { return converged_; }

    void export_text(std::ostream& out) const;
    static NuisanceBundle import_text(std::istream& in, const Dataset& ds);

    friend NuisanceBundle fit_nuisances(const Dataset& ds, const NuisanceConfig& cfg);
    friend class BundleBuilder;

  private:
    std::size_t n_ = 0;
    int n_folds_ = 1;
    double clip_ = 0.01;
    bool y_binary_ = true;
    bool converged_ = true;
    std::vector<std::string> groups_;
    std::vector<double> p_group_;
    std::vector<double> rows_[N_FN];
    std::vector<int> fold_;
    // full-data predictors, per function per group
    std::vector<std::array<Predictor, N_FN>> full_;
    std::vector<Predictor> membership_;  // per group, unnormalized P(A=g|x)
    friend struct BundleAccess;
};

// Direct construction; used for oracle bundles and tests.
class BundleBuilder {
  public:
    BundleBuilder(const Dataset& ds, double clip);
    void set_row(std::size_t i, NuisanceBundle::Fn f, double v);
    void set_predictor(int group, NuisanceBundle::Fn f, Predictor p);
    void set_membership(int group, Predictor p);
    NuisanceBundle build();

  private:
    NuisanceBundle b_;
};

// Cross-fitted fit: per group, e_1 on all rows, p_{1|r} on the R=r stratum,
// mu_t on the T=t stratum (logistic when y is binary, identity otherwise),
// p_1 on all rows. Fold of row i is i mod K; row i's prediction comes from
// the model trained on the other folds. Probability outputs are clipped.
// An empty (r, group) stratum raises no_overlap_error.
NuisanceBundle fit_nuisances(const Dataset& ds, const NuisanceConfig& cfg);

std::string covariate_key(std::span<const double> x);

}  // namespace encpol
