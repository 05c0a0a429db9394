#include "encpol/threshold.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace encpol {

double lagrangian_L(double lambda, std::span<const double> x, int g, const NuisanceBundle& eta,
                    const CostSpec& cost) {
    if (eta.n_groups() != 2)
        throw domain_error("lagrangian_L is defined for exactly two groups; use the saddle-point "
                           "solver for more");
    const double lift = eta.lift_at(x, g);
    const double tau = cost.w_y * (eta.mu1_at(x, g) - eta.mu0_at(x, g)) + cost.w_t;
    const double s = g == 0 ? 1.0 : -1.0;
    const double cross = eta.p10_at(x, 0) - eta.p10_at(x, 1);
    return lift * (tau + lambda * s / eta.p_group(g)) + lambda * cross;
}

namespace {

double golden_min(const std::function<double(double)>& f, double lo, double hi, double tol) {
    const double phi = 0.6180339887498949;
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

double minimize_convex_dual(const std::function<double(double)>& dual, double tol) {
    double hi = 1.0;
    while (hi < 1e6 && dual(hi) < dual(0.5 * hi)) hi *= 2.0;
    double lambda = golden_min(dual, 0.0, std::min(hi, 1e6), tol);
    const double dmin = dual(lambda);
    const double flat = 1e-12 * (1.0 + std::abs(dmin));
    if (dual(0.0) <= dmin + flat) return 0.0;
    double lo = 0.0, up = lambda;
    while (up - lo > tol) {
        const double mid = 0.5 * (lo + up);
        if (dual(mid) <= dmin + flat) up = mid;
        else lo = mid;
    }
    return up;
}

namespace {

struct ScoreRows {
    std::vector<double> base, slope;  // score(lambda) = base - lambda * slope
    double score(std::size_t i, double lambda) const { return base[i] - lambda * slope[i]; }
};

double dual_at(const ScoreRows& rows, double lambda, double eps_minus_c0) {
    std::vector<double> hinge(rows.base.size());
    for (std::size_t i = 0; i < rows.base.size(); ++i)
        hinge[i] = std::max(rows.score(i, lambda), 0.0);
    return mean(hinge) + lambda * eps_minus_c0;
}

struct GroupMeans {
    std::vector<std::vector<std::size_t>> rows;  // per group
};

GroupMeans group_rows(const Dataset& ds) {
    GroupMeans gm;
    gm.rows.resize(ds.n_groups());
    for (std::size_t i = 0; i < ds.size(); ++i) gm.rows[ds.group(i)].push_back(i);
    return gm;
}

// Baseline (never-recommend) take-up disparity, first minus second group.
double baseline_disparity(const Dataset& ds, const NuisanceBundle& eta, const GroupMeans& gm) {
    double out[2];
    for (int g = 0; g < 2; ++g) {
        std::vector<double> v;
        v.reserve(gm.rows[g].size());
        for (std::size_t i : gm.rows[g]) v.push_back(eta.p10_at(ds.x(i), g));
        out[g] = mean(v);
    }
    return out[0] - out[1];
}

double policy_disparity(const Dataset& ds, const NuisanceBundle& eta, const GroupMeans& gm,
                        const std::function<double(std::size_t, int)>& pi1) {
    double out[2];
    for (int g = 0; g < 2; ++g) {
        std::vector<double> v;
        v.reserve(gm.rows[g].size());
        for (std::size_t i : gm.rows[g]) {
            const auto x = ds.x(i);
            v.push_back(eta.p10_at(x, g) + eta.lift_at(x, g) * pi1(i, g));
        }
        out[g] = mean(v);
    }
    return out[0] - out[1];
}

ThresholdSolution solve_generic(const Dataset& ds, const NuisanceBundle& eta,
                                const CostSpec& cost, double eps, ScoreKind kind) {
    if (ds.n_groups() == 1) {
        ThresholdSolution sol;
        sol.lambda = 0.0;
        sol.policy = PolicySpec::make_threshold(0.0, kind);
        std::vector<double> hinge(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const double s = kind == ScoreKind::covariate_only
                                 ? covariate_only_score(0.0, ds.x(i), eta, cost)
                                 : threshold_score(0.0, ds.x(i), ds.group(i), eta, cost);
            hinge[i] = std::max(s, 0.0);
        }
        sol.dual_value = mean(hinge);
        return sol;
    }
    if (ds.n_groups() != 2)
        throw domain_error("threshold solver handles at most two groups; use the saddle-point "
                           "solver for more");

    const auto [eps_min, eps_max] = feasible_epsilon_range(ds, eta);
    if (eps < eps_min - 1e-12)
        throw infeasibility_error("constraint level " + format_double(eps) +
                                      " below the feasible range [" + format_double(eps_min) +
                                      ", " + format_double(eps_max) + "]",
                                  eps_min, eps_max);

    ScoreRows rows;
    rows.base.resize(ds.size());
    rows.slope.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto x = ds.x(i);
        const int g = ds.group(i);
        if (kind == ScoreKind::covariate_only) {
            rows.base[i] = covariate_only_score(0.0, x, eta, cost);
            rows.slope[i] = rows.base[i] - covariate_only_score(1.0, x, eta, cost);
        } else {
            rows.base[i] = threshold_score(0.0, x, g, eta, cost);
            rows.slope[i] = rows.base[i] - threshold_score(1.0, x, g, eta, cost);
        }
    }

    const auto gm = group_rows(ds);
    const double c0 = baseline_disparity(ds, eta, gm);
    const auto dual = [&](double lambda) { return dual_at(rows, lambda, eps - c0); };
    double lambda = minimize_convex_dual(dual, 1e-9);

    // At a kink of the dual the tie rule can land on the infeasible side;
    // step forward past it when that happens.
    auto disparity_of = [&](double lam) {
        return policy_disparity(ds, eta, gm, [&](std::size_t i, int) {
            return rows.score(i, lam) > 0.0 ? 1.0 : 0.0;
        });
    };
    double step = std::max(1e-9, 1e-9 * lambda);
    while (disparity_of(lambda) > eps + 1e-9 && lambda < 1e7) {
        lambda += step;
        step *= 2.0;
    }

    ThresholdSolution sol;
    sol.lambda = lambda;
    sol.policy = PolicySpec::make_threshold(lambda, kind);
    sol.dual_value = dual(lambda);
    return sol;
}

}  // namespace

ThresholdSolution solve_threshold(const Dataset& ds, const NuisanceBundle& eta,
                                  const CostSpec& cost, double eps) {
    return solve_generic(ds, eta, cost, eps, ScoreKind::standard);
}

ThresholdSolution solve_threshold_covariate_only(const Dataset& ds, const NuisanceBundle& eta,
                                                 const CostSpec& cost, double eps) {
    return solve_generic(ds, eta, cost, eps, ScoreKind::covariate_only);
}

TradeoffCurve sweep(const Dataset& ds, const NuisanceBundle& eta, const CostSpec& cost,
                    std::span<const double> lambda_grid) {
    if (lambda_grid.empty()) throw domain_error("sweep: empty lambda grid");
    if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end()))
        throw domain_error("sweep: lambda grid must be sorted");
    for (std::size_t k = 1; k < lambda_grid.size(); ++k)
        if (lambda_grid[k] == lambda_grid[k - 1])
            throw domain_error("sweep: lambda grid must be strictly increasing");

    TradeoffCurve curve;
    curve.groups = ds.group_set();
    PolicyEvalContext ctx;
    ctx.eta = &eta;
    ctx.cost = &cost;
    for (double lambda : lambda_grid) {
        const auto pol = PolicySpec::make_threshold(lambda, ScoreKind::standard);
        const RandomizedPolicy q(pol);
        TradeoffPoint pt;
        pt.lambda = lambda;
        const auto v = dm_value(ds, q, eta, cost, &ctx);
        pt.value = v.point;
        pt.value_se = v.standard_error;
        for (const auto& g : ds.group_set())
            pt.takeup.push_back(plugin_takeup(ds, q, eta, g, &ctx).point);
        pt.disparity = pt.takeup.size() >= 2 ? pt.takeup[0] - pt.takeup[1] : 0.0;
        curve.points.push_back(std::move(pt));
    }
    return curve;
}

std::string TradeoffCurve::to_csv() const {
    std::ostringstream os;
    os << "lambda,value,value_se";
    if (groups.size() == 2) {
        os << ",takeup_a,takeup_b";
    } else {
        for (const auto& g : groups) os << ",takeup_" << g;
    }
    os << ",disparity\n";
    for (const auto& p : points) {
        os << format_double(p.lambda) << "," << format_double(p.value) << ","
           << format_double(p.value_se);
        for (double t : p.takeup) os << "," << format_double(t);
        os << "," << format_double(p.disparity) << "\n";
    }
    return os.str();
}

std::pair<double, double> feasible_epsilon_range(const Dataset& ds, const NuisanceBundle& eta) {
    if (ds.n_groups() != 2)
        throw domain_error("feasible_epsilon_range needs exactly two groups");
    double hi_a = 0, lo_a = 0, hi_b = 0, lo_b = 0;
    const auto gm = group_rows(ds);
    for (int g = 0; g < 2; ++g) {
        std::vector<double> himax, himin;
        for (std::size_t i : gm.rows[g]) {
            const auto x = ds.x(i);
            const double p10 = eta.p10_at(x, g), lift = eta.lift_at(x, g);
            himax.push_back(p10 + std::max(lift, 0.0));
            himin.push_back(p10 + std::min(lift, 0.0));
        }
        if (g == 0) {
            hi_a = mean(himax);
            lo_a = mean(himin);
        } else {
            hi_b = mean(himax);
            lo_b = mean(himin);
        }
    }
    return {lo_a - hi_b, hi_a - lo_b};
}

}  // namespace encpol
