#include "encpol/robust.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace encpol {

OverlapPartition detect_overlap(const Dataset& ds, const NuisanceBundle& eta, double threshold) {
    if (threshold < 0.0) throw domain_error("detect_overlap: threshold must be >= 0");
    OverlapPartition part;
    part.rule.threshold = threshold;
    part.rule.empty_stratum.assign(ds.n_groups(), {false, false});

    std::vector<std::array<std::size_t, 2>> counts(ds.n_groups(), {0, 0});
    for (std::size_t i = 0; i < ds.size(); ++i) counts[ds.group(i)][ds.r(i)]++;
    for (std::size_t g = 0; g < ds.n_groups(); ++g)
        for (int r = 0; r < 2; ++r) part.rule.empty_stratum[g][r] = counts[g][r] == 0;

    part.row_nov.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double e1 = eta.e1(i);
        for (int r = 0; r < 2; ++r) {
            const double er = r == 1 ? e1 : 1.0 - e1;
            part.row_nov[i][r] = er < threshold || part.rule.empty_stratum[ds.group(i)][r];
        }
        if (!part.row_nov[i][0] && !part.row_nov[i][1]) part.n_ov++;
    }
    return part;
}

namespace {

// Effective responsivity interval for (row, r): degenerate at the fitted
// value on identified rows, the uncertainty bounds on no-overlap rows.
struct Interval {
    double lo, hi;
};

Interval q_interval(const Dataset& ds, const NuisanceBundle& eta, const UncertaintySet& uset,
                    const OverlapPartition& part, std::size_t i, int r) {
    const double fitted = r == 1 ? eta.p11(i) : eta.p10(i);
    if (!part.in_nov(i, r)) return {fitted, fitted};
    const auto x = ds.x(i);
    const int g = ds.group(i);
    double lo = uset.lower(r, x, g), hi = uset.upper(r, x, g);
    if (uset.monotone) lo = std::min(std::max(lo, fitted), hi);
    return {lo, hi};
}

void require_interval(const UncertaintySet& uset) {
    if (uset.mode != UncertaintySet::Mode::interval)
        throw unsupported_mode_error(
            "only interval uncertainty sets are supported by the robust optimizers");
}

}  // namespace

std::pair<double, double> binary_constant_bound(const Dataset& ds, const RandomizedPolicy& pi,
                                                const NuisanceBundle& eta,
                                                const UncertaintySet& uset,
                                                const OverlapPartition& part, const CostSpec& cost,
                                                const PolicyEvalContext* ctx) {
    require_interval(uset);
    if (!ds.y_binary()) throw domain_error("binary_constant_bound needs binary outcomes");
    PolicyEvalContext def;
    def.eta = &eta;
    def.cost = &cost;
    const PolicyEvalContext& c = ctx ? *ctx : def;
    const auto p1 = policy_prob1_rows(pi, ds, c);

    std::vector<double> lo_scores(ds.size()), hi_scores(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double tau = cost.w_y * (eta.mu1(i) - eta.mu0(i)) + cost.w_t;
        double slo = 0.0, shi = 0.0;
        for (int r = 0; r < 2; ++r) {
            const double pr = r == 1 ? p1[i] : 1.0 - p1[i];
            const double u0 = cost.w_y * eta.mu0(i) + cost.w_r * r;
            const Interval q = q_interval(ds, eta, uset, part, i, r);
            // value contribution pr * (u0 + tau * q); adversary picks the end
            const double at_lo = pr * (u0 + tau * q.lo);
            const double at_hi = pr * (u0 + tau * q.hi);
            slo += std::min(at_lo, at_hi);
            shi += std::max(at_lo, at_hi);
        }
        lo_scores[i] = slo;
        hi_scores[i] = shi;
    }
    return {mean(lo_scores), mean(hi_scores)};
}

std::pair<double, double> binary_constant_bound(const Dataset& ds, const RandomizedPolicy& pi,
                                                const NuisanceBundle& eta, double blo, double bhi,
                                                const OverlapPartition& part, const CostSpec& cost,
                                                const PolicyEvalContext* ctx) {
    return binary_constant_bound(ds, pi, eta, UncertaintySet::constant(blo, bhi), part, cost, ctx);
}

double robust_lp_objective(const Dataset& ds, const RandomizedPolicy& pi,
                           const NuisanceBundle& eta, const UncertaintySet& uset,
                           const OverlapPartition& part, const CostSpec& cost,
                           const PolicyEvalContext* ctx) {
    require_interval(uset);
    PolicyEvalContext def;
    def.eta = &eta;
    def.cost = &cost;
    const PolicyEvalContext& c = ctx ? *ctx : def;
    const auto p1 = policy_prob1_rows(pi, ds, c);

    std::vector<double> scores(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double tau = cost.w_y * (eta.mu1(i) - eta.mu0(i)) + cost.w_t;
        double s = 0.0;
        for (int r = 0; r < 2; ++r) {
            const double pr = r == 1 ? p1[i] : 1.0 - p1[i];
            const double u0 = cost.w_y * eta.mu0(i) + cost.w_r * r;
            const Interval q = q_interval(ds, eta, uset, part, i, r);
            const double mid = 0.5 * (q.lo + q.hi), width = q.hi - q.lo;
            s += pr * (u0 + tau * mid - 0.5 * std::abs(tau) * width);
        }
        scores[i] = s;
    }
    return mean(scores);
}

namespace {

// Worst-case take-up of a row under the adversary that works against group
// `dir` (+1: inflate, -1: deflate); returns {const_part, pi1_coefficient}.
std::pair<double, double> worst_takeup_terms(const Dataset& ds, const NuisanceBundle& eta,
                                             const UncertaintySet& uset,
                                             const OverlapPartition& part, std::size_t i,
                                             int dir) {
    const Interval q1 = q_interval(ds, eta, uset, part, i, 1);
    const Interval q0 = q_interval(ds, eta, uset, part, i, 0);
    const double b1 = dir > 0 ? q1.hi : q1.lo;
    const double b0 = dir > 0 ? q0.hi : q0.lo;
    return {b0, b1 - b0};
}

}  // namespace

double robust_worst_disparity(const Dataset& ds, const RandomizedPolicy& pi,
                              const NuisanceBundle& eta, const UncertaintySet& uset,
                              const OverlapPartition& part, const PolicyEvalContext* ctx) {
    require_interval(uset);
    if (ds.n_groups() != 2) throw domain_error("robust disparity needs exactly two groups");
    PolicyEvalContext def;
    def.eta = &eta;
    const PolicyEvalContext& c = ctx ? *ctx : def;
    const auto p1 = policy_prob1_rows(pi, ds, c);

    double out[2];
    for (int g = 0; g < 2; ++g) {
        std::vector<double> v;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds.group(i) != g) continue;
            const auto [b0, coef] = worst_takeup_terms(ds, eta, uset, part, i, g == 0 ? 1 : -1);
            v.push_back(b0 + coef * p1[i]);
        }
        out[g] = mean(v);
    }
    return out[0] - out[1];
}

std::pair<double, double> robust_feasible_range(const Dataset& ds, const NuisanceBundle& eta,
                                                const UncertaintySet& uset,
                                                const OverlapPartition& part) {
    require_interval(uset);
    if (ds.n_groups() != 2) throw domain_error("robust feasible range needs exactly two groups");
    double lo_a = 0, hi_a = 0, lo_b = 0, hi_b = 0;
    std::vector<double> amax, amin, bmax, bmin;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int g = ds.group(i);
        const auto [b0, coef] = worst_takeup_terms(ds, eta, uset, part, i, g == 0 ? 1 : -1);
        if (g == 0) {
            amax.push_back(b0 + std::max(coef, 0.0));
            amin.push_back(b0 + std::min(coef, 0.0));
        } else {
            bmax.push_back(b0 + std::max(coef, 0.0));
            bmin.push_back(b0 + std::min(coef, 0.0));
        }
    }
    hi_a = mean(amax);
    lo_a = mean(amin);
    hi_b = mean(bmax);
    lo_b = mean(bmin);
    return {lo_a - hi_b, hi_a - lo_b};
}

ThresholdSolution solve_robust_threshold(const Dataset& ds, const NuisanceBundle& eta,
                                         const UncertaintySet& uset, const OverlapPartition& part,
                                         const CostSpec& cost, double eps) {
    require_interval(uset);
    if (ds.n_groups() != 2)
        throw domain_error("robust threshold solver needs exactly two groups");

    const auto [eps_min, eps_max] = robust_feasible_range(ds, eta, uset, part);
    if (eps < eps_min - 1e-12)
        throw infeasibility_error("constraint level " + format_double(eps) +
                                      " below the robust feasible range [" +
                                      format_double(eps_min) + ", " + format_double(eps_max) + "]",
                                  eps_min, eps_max);

    // score(lambda) = base - lambda * slope per row, from the robust score.
    std::vector<double> base(ds.size()), slope(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        base[i] = robust_threshold_score(0.0, ds.x(i), ds.group(i), eta, cost, uset, part.rule);
        slope[i] =
            base[i] - robust_threshold_score(1.0, ds.x(i), ds.group(i), eta, cost, uset, part.rule);
    }
    // Baseline (never-recommend) worst-case disparity.
    double c0;
    {
        std::vector<double> a, b;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const int g = ds.group(i);
            const auto [b0, coef] = worst_takeup_terms(ds, eta, uset, part, i, g == 0 ? 1 : -1);
            (void)coef;
            (g == 0 ? a : b).push_back(b0);
        }
        c0 = mean(a) - mean(b);
    }

    auto dual = [&](double lambda) {
        std::vector<double> hinge(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i)
            hinge[i] = std::max(base[i] - lambda * slope[i], 0.0);
        return mean(hinge) + lambda * (eps - c0);
    };
    double lambda = minimize_convex_dual(dual, 1e-9);

    PolicyEvalContext ctx;
    ctx.eta = &eta;
    ctx.cost = &cost;
    ctx.uset = &uset;
    ctx.rule = &part.rule;
    auto worst_disp = [&](double lam) {
        const RandomizedPolicy q(PolicySpec::make_threshold(lam, ScoreKind::robust));
        return robust_worst_disparity(ds, q, eta, uset, part, &ctx);
    };
    double step = std::max(1e-9, 1e-9 * lambda);
    while (worst_disp(lambda) > eps + 1e-9 && lambda < 1e7) {
        lambda += step;
        step *= 2.0;
    }

    ThresholdSolution sol;
    sol.lambda = lambda;
    sol.policy = PolicySpec::make_threshold(lambda, ScoreKind::robust);
    sol.dual_value = dual(lambda);
    return sol;
}

std::string bounds_csv(
    const std::vector<std::tuple<std::string, double, double, double, std::string>>& rows) {
    std::ostringstream os;
    os << "policy,lower,upper,eps,mode\n";
    for (const auto& [name, lo, hi, eps, mode] : rows)
        os << name << "," << format_double(lo) << "," << format_double(hi) << ","
           << format_double(eps) << "," << mode << "\n";
    return os.str();
}

}  // namespace encpol
