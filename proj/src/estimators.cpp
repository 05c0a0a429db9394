#include "encpol/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace encpol {

ValueEstimate ValueEstimate::from_scores(std::vector<double> scores) {
    ValueEstimate v;
    v.n = scores.size();
    v.point = mean(scores);
    v.standard_error = v.n > 1 ? sample_sd(scores) / std::sqrt(double(v.n)) : 0.0;
    v.scores = std::move(scores);
    return v;
}

namespace {

void check_bound(const Dataset& ds, const NuisanceBundle& eta) {
    if (eta.n_rows() != ds.size())
        throw domain_error("estimator: bundle was built for a different dataset");
    for (const auto& g : ds.group_set())
        if (std::find(eta.group_set().begin(), eta.group_set().end(), g) == eta.group_set().end())
            throw domain_error("estimator: bundle does not cover group " + g);
}

PolicyEvalContext default_ctx(const NuisanceBundle& eta, const CostSpec& cost,
                              const PolicyEvalContext* ctx) {
    if (ctx) return *ctx;
    PolicyEvalContext c;
    c.eta = &eta;
    c.cost = &cost;
    return c;
}

// w_y mu_t + w_t t + w_r r evaluated from row predictions.
inline double util_reg(const NuisanceBundle& eta, std::size_t i, int r, int t,
                       const CostSpec& cost) {
    return cost.w_y * (t == 1 ? eta.mu1(i) : eta.mu0(i)) + cost.w_t * t + cost.w_r * r;
}

// Fraction of rows with a propensity pinned at the clip boundary.
bool boundary_warning(const std::vector<double>& probs, double clip) {
    if (probs.empty()) return false;
    const double tol = 1e-12 + clip * 1e-9;
    std::size_t hits = 0;
    for (double p : probs)
        if (p <= clip + tol || p >= 1.0 - clip - tol) ++hits;
    return hits > probs.size() / 20;
}

}  // namespace

ValueEstimate dm_value(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                       const CostSpec& cost, const PolicyEvalContext* ctx) {
    check_bound(ds, eta);
    const auto c = default_ctx(eta, cost, ctx);
    const auto p1 = policy_prob1_rows(pi, ds, c);
    std::vector<double> scores(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double s = 0.0;
        for (int r = 0; r < 2; ++r) {
            const double pr = r == 1 ? p1[i] : 1.0 - p1[i];
            const double pt1 = eta.p1_given_r(i, r);
            s += pr * (pt1 * util_reg(eta, i, r, 1, cost) +
                       (1.0 - pt1) * util_reg(eta, i, r, 0, cost));
        }
        scores[i] = s;
    }
    return ValueEstimate::from_scores(std::move(scores));
}

ValueEstimate ipw_value(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                        const CostSpec& cost, const PolicyEvalContext* ctx) {
    check_bound(ds, eta);
    const auto c = default_ctx(eta, cost, ctx);
    const auto p1 = policy_prob1_rows(pi, ds, c);
    std::vector<double> scores(ds.size()), es(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int r = ds.r(i);
        const double er = eta.e_r(i, r);
        es[i] = eta.e1(i);
        const double pr = r == 1 ? p1[i] : 1.0 - p1[i];
        scores[i] = pr / er * cost.utility(r, ds.t(i), ds.y(i));
    }
    auto v = ValueEstimate::from_scores(std::move(scores));
    v.overlap_warning = boundary_warning(es, eta.clip());
    return v;
}

ValueEstimate dr_value(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                       const CostSpec& cost, const PolicyEvalContext* ctx) {
    check_bound(ds, eta);
    const auto c = default_ctx(eta, cost, ctx);
    const auto p1 = policy_prob1_rows(pi, ds, c);
    std::vector<double> scores(ds.size()), es(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        es[i] = eta.e1(i);
        double s = 0.0;
        for (int r = 0; r < 2; ++r) {
            const double pr = r == 1 ? p1[i] : 1.0 - p1[i];
            if (pr == 0.0) continue;
            double term = 0.0;
            for (int t = 0; t < 2; ++t) {
                const double ptr = t == 1 ? eta.p1_given_r(i, r) : 1.0 - eta.p1_given_r(i, r);
                const double ureg = util_reg(eta, i, r, t, cost);
                double corr = 0.0;
                if (ds.r(i) == r) {
                    const double obs = ds.t(i) == t ? cost.utility(r, t, ds.y(i)) : 0.0;
                    corr = (obs - ureg * ptr) / eta.e_r(i, r);
                }
                term += corr + ureg * ptr;
            }
            s += pr * term;
        }
        scores[i] = s;
    }
    auto v = ValueEstimate::from_scores(std::move(scores));
    v.overlap_warning = boundary_warning(es, eta.clip());
    return v;
}

ValueEstimate cv_value(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                       const CostSpec& cost, const PolicyEvalContext* ctx) {
    check_bound(ds, eta);
    const auto c = default_ctx(eta, cost, ctx);
    const auto p1 = policy_prob1_rows(pi, ds, c);
    std::vector<double> scores(ds.size()), pts(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        pts[i] = eta.p1_marginal(i);
        double s = 0.0;
        for (int r = 0; r < 2; ++r) {
            const double pr = r == 1 ? p1[i] : 1.0 - p1[i];
            if (pr == 0.0) continue;
            for (int t = 0; t < 2; ++t) {
                const double ptr = t == 1 ? eta.p1_given_r(i, r) : 1.0 - eta.p1_given_r(i, r);
                const double pt = t == 1 ? eta.p1_marginal(i) : 1.0 - eta.p1_marginal(i);
                const double ind = ds.t(i) == t ? 1.0 : 0.0;
                const double ureg = util_reg(eta, i, r, t, cost);
                const double uobs = cost.utility(r, t, ds.y(i));
                s += pr * ptr * (uobs * ind / pt + (1.0 - ind / pt) * ureg);
            }
        }
        scores[i] = s;
    }
    auto v = ValueEstimate::from_scores(std::move(scores));
    v.overlap_warning = boundary_warning(pts, eta.clip());
    return v;
}

ValueEstimate dr_takeup(const Dataset& ds, const RandomizedPolicy& pi, const NuisanceBundle& eta,
                        const std::string& group, const PolicyEvalContext* ctx) {
    check_bound(ds, eta);
    const int g = ds.group_index(group);
    if (g < 0) throw domain_error("dr_takeup: group '" + group + "' not in dataset");
    const auto c = default_ctx(eta, CostSpec{}, ctx);
    std::vector<double> scores, es;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.group(i) != g) continue;
        const double p1 = policy_prob1(pi, ds.x(i), ds.group_label(i), c);
        es.push_back(eta.e1(i));
        double s = 0.0;
        for (int r = 0; r < 2; ++r) {
            const double pr = r == 1 ? p1 : 1.0 - p1;
            if (pr == 0.0) continue;
            const double p1r = eta.p1_given_r(i, r);
            double term = p1r;
            if (ds.r(i) == r) term += (ds.t(i) - p1r) / eta.e_r(i, r);
            s += pr * term;
        }
        scores.push_back(s);
    }
    auto v = ValueEstimate::from_scores(std::move(scores));
    v.overlap_warning = boundary_warning(es, eta.clip());
    return v;
}

ValueEstimate plugin_takeup(const Dataset& ds, const RandomizedPolicy& pi,
                            const NuisanceBundle& eta, const std::string& group,
                            const PolicyEvalContext* ctx) {
    check_bound(ds, eta);
    const int g = ds.group_index(group);
    if (g < 0) throw domain_error("plugin_takeup: group '" + group + "' not in dataset");
    const auto c = default_ctx(eta, CostSpec{}, ctx);
    std::vector<double> scores;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.group(i) != g) continue;
        const double p1 = policy_prob1(pi, ds.x(i), ds.group_label(i), c);
        scores.push_back(p1 * eta.lift(i) + eta.p10(i));
    }
    return ValueEstimate::from_scores(std::move(scores));
}

double pseudo_outcome(const Dataset& ds, std::size_t i, const NuisanceBundle& eta,
                      PseudoKind kind, const CostSpec& cost) {
    check_bound(ds, eta);
    const double tau = cost.w_y * (eta.mu1(i) - eta.mu0(i)) + cost.w_t;
    const double dm = eta.lift(i) * tau + cost.w_r;
    switch (kind) {
        case PseudoKind::DM:
            return dm;
        case PseudoKind::IPW: {
            const int r = ds.r(i);
            return (2.0 * r - 1.0) * cost.utility(r, ds.t(i), ds.y(i)) / eta.e_r(i, r);
        }
        case PseudoKind::DR: {
            const int r = ds.r(i);
            // E[u(r, T, Y) | R=r, x] under the fitted models
            const double ureg = cost.w_y * eta.mu0(i) + eta.p1_given_r(i, r) * tau + cost.w_r * r;
            const double u = cost.utility(r, ds.t(i), ds.y(i));
            return dm + (2.0 * r - 1.0) * (u - ureg) / eta.e_r(i, r);
        }
    }
    throw domain_error("pseudo_outcome: unknown kind");
}

ValueEstimate responder_takeup(const Dataset& ds, const RandomizedPolicy& pi,
                               const NuisanceBundle& eta, const std::string& group,
                               const PolicyEvalContext* ctx) {
    check_bound(ds, eta);
    if (!ds.y_binary()) throw domain_error("responder take-up needs binary outcomes");
    const int g = ds.group_index(group);
    if (g < 0) throw domain_error("responder_takeup: group '" + group + "' not in dataset");
    const auto c = default_ctx(eta, CostSpec{}, ctx);

    std::vector<double> num, den;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.group(i) != g) continue;
        const double effect = eta.mu1(i) - eta.mu0(i);
        const double p1 = policy_prob1(pi, ds.x(i), ds.group_label(i), c);
        num.push_back((p1 * eta.lift(i) + eta.p10(i)) * effect);
        den.push_back(effect);
    }
    const double nbar = mean(num), dbar = mean(den);
    if (dbar <= 0.0)
        throw monotonicity_error("responder take-up: group mean effect is not positive for " +
                                 group);
    // Linearized ratio scores: mean recovers num/den, sd gives a delta-method
    // standard error.
    const double ratio = nbar / dbar;
    std::vector<double> scores(num.size());
    for (std::size_t k = 0; k < num.size(); ++k)
        scores[k] = ratio + (num[k] - ratio * den[k]) / dbar;
    return ValueEstimate::from_scores(std::move(scores));
}

std::string estimates_csv(const std::vector<std::pair<std::string, ValueEstimate>>& rows) {
    std::ostringstream os;
    os << "estimator,point,se,n\n";
    for (const auto& [name, v] : rows)
        os << name << "," << format_double(v.point) << "," << format_double(v.standard_error)
           << "," << v.n << "\n";
    return os.str();
}

}  // namespace encpol
