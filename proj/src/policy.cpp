#include "encpol/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace encpol {

UncertaintySet UncertaintySet::constant(double blo, double bhi, bool monotone) {
    if (!(0.0 <= blo && blo <= bhi && bhi <= 1.0))
        throw domain_error("uncertainty set: need 0 <= lo <= hi <= 1");
    UncertaintySet u;
    u.const_lo[0] = u.const_lo[1] = blo;
    u.const_hi[0] = u.const_hi[1] = bhi;
    u.monotone = monotone;
    return u;
}

PolicySpec PolicySpec::make_constant(int r) {
    if (r != 0 && r != 1) throw domain_error("constant policy action must be 0 or 1");
    PolicySpec p;
    p.kind = Kind::constant;
    p.constant_action = r;
    return p;
}

PolicySpec PolicySpec::make_tabular(std::map<std::string, int> table) {
    PolicySpec p;
    p.kind = Kind::tabular;
    p.table = std::move(table);
    return p;
}

PolicySpec PolicySpec::make_linear(std::vector<double> beta, std::vector<std::string> groups) {
    PolicySpec p;
    p.kind = Kind::linear_index;
    p.beta = std::move(beta);
    p.linear_groups = std::move(groups);
    return p;
}

PolicySpec PolicySpec::make_threshold(double lambda, ScoreKind score) {
    PolicySpec p;
    p.kind = Kind::threshold;
    p.lambda = lambda;
    p.score = score;
    return p;
}

bool PolicySpec::operator==(const PolicySpec& o) const {
    if (kind != o.kind) return false;
    switch (kind) {
        case Kind::constant: return constant_action == o.constant_action;
        case Kind::tabular: return table == o.table;
        case Kind::linear_index: return beta == o.beta && linear_groups == o.linear_groups;
        case Kind::threshold: return lambda == o.lambda && score == o.score;
    }
    return false;
}

void RandomizedPolicy::add(double weight, const PolicySpec& p) {
    if (weight < 0.0) throw domain_error("mixture weight must be nonnegative");
    for (auto& [w, comp] : components) {
        if (comp == p) {
            w += weight;
            return;
        }
    }
    components.emplace_back(weight, p);
}

void RandomizedPolicy::normalize() {
    double tot = 0.0;
    for (const auto& [w, p] : components) tot += w;
    if (tot <= 0.0) throw domain_error("mixture weights sum to zero");
    for (auto& [w, p] : components) w /= tot;
}

std::string cell_key(std::span<const double> x, const std::string& group) {
    return covariate_key(x) + "|" + group;
}

// ------------------------------- evaluation --------------------------------

namespace {

int group_index_in(const NuisanceBundle& eta, const std::string& label) {
    const auto& gs = eta.group_set();
    for (std::size_t g = 0; g < gs.size(); ++g)
        if (gs[g] == label) return static_cast<int>(g);
    throw domain_error("policy evaluation: group '" + label + "' not covered by bundle");
}

double tau_at(const NuisanceBundle& eta, const CostSpec& cost, std::span<const double> x, int g) {
    return cost.w_y * (eta.mu1_at(x, g) - eta.mu0_at(x, g)) + cost.w_t;
}

}  // namespace

double threshold_score(double lambda, std::span<const double> x, int g,
                       const NuisanceBundle& eta, const CostSpec& cost) {
    const double lift = eta.lift_at(x, g);
    const double tau = tau_at(eta, cost, x, g);
    if (eta.n_groups() == 1) return lift * tau + cost.w_r;  // no one to compare against
    if (eta.n_groups() != 2)
        throw domain_error("threshold score requires exactly two groups; use the saddle-point "
                           "solver for more");
    const double s = g == 0 ? 1.0 : -1.0;
    return lift * (tau - lambda * s / eta.p_group(g)) + cost.w_r;
}

double covariate_only_score(double lambda, std::span<const double> x,
                            const NuisanceBundle& eta, const CostSpec& cost) {
    const auto m = eta.group_membership_at(x);
    double s = cost.w_r;
    for (int g = 0; g < static_cast<int>(eta.n_groups()); ++g) {
        if (m[g] <= 0.0) continue;
        const double lift = eta.lift_at(x, g);
        const double tau = tau_at(eta, cost, x, g);
        double pen = 0.0;
        if (eta.n_groups() == 2) {
            const double sg = g == 0 ? 1.0 : -1.0;
            pen = lambda * sg / eta.p_group(g);
        } else if (lambda != 0.0) {
            throw domain_error("covariate-only score: penalty requires exactly two groups");
        }
        s += m[g] * lift * (tau - pen);
    }
    return s;
}

double robust_threshold_score(double lambda, std::span<const double> x, int g,
                              const NuisanceBundle& eta, const CostSpec& cost,
                              const UncertaintySet& uset, const OverlapRule& rule) {
    if (uset.mode != UncertaintySet::Mode::interval)
        throw unsupported_mode_error("robust optimization supports interval uncertainty only");
    if (eta.n_groups() != 2)
        throw domain_error("robust threshold score requires exactly two groups");
    const double tau = tau_at(eta, cost, x, g);
    double lo[2], hi[2];
    for (int r = 0; r < 2; ++r) {
        const double fitted = r == 1 ? eta.p11_at(x, g) : eta.p10_at(x, g);
        if (rule.in_nov(eta, r, x, g)) {
            lo[r] = uset.lower(r, x, g);
            hi[r] = uset.upper(r, x, g);
            if (uset.monotone) lo[r] = std::min(std::max(lo[r], fitted), hi[r]);
        } else {
            lo[r] = hi[r] = fitted;
        }
    }
    const double mid1 = 0.5 * (lo[1] + hi[1]), mid0 = 0.5 * (lo[0] + hi[0]);
    const double db1 = hi[1] - lo[1], db0 = hi[0] - lo[0];
    const double value_coef =
        cost.w_r + tau * (mid1 - mid0) - 0.5 * std::abs(tau) * (db1 - db0);
    const double s = g == 0 ? 1.0 : -1.0;
    // Adversary inflates the first group's take-up and deflates the second's.
    const double takeup_coef = g == 0 ? (hi[1] - hi[0]) : (lo[1] - lo[0]);
    return value_coef - lambda * s / eta.p_group(g) * takeup_coef;
}

double policy_prob1(const PolicySpec& p, std::span<const double> x, const std::string& group,
                    const PolicyEvalContext& ctx) {
    switch (p.kind) {
        case PolicySpec::Kind::constant:
            return p.constant_action;
        case PolicySpec::Kind::tabular: {
            auto it = p.table.find(cell_key(x, group));
            if (it == p.table.end())
                throw domain_error("tabular policy has no action for this cell");
            return it->second;
        }
        case PolicySpec::Kind::linear_index: {
            double z = p.beta.empty() ? 0.0 : p.beta[0];
            for (std::size_t j = 0; j < x.size(); ++j) z += p.beta.at(j + 1) * x[j];
            for (std::size_t k = 0; k < p.linear_groups.size(); ++k)
                if (p.linear_groups[k] == group) z += p.beta.at(1 + x.size() + k);
            return z > 0.0 ? 1.0 : 0.0;
        }
        case PolicySpec::Kind::threshold: {
            if (!ctx.eta || !ctx.cost)
                throw domain_error("threshold policy evaluation needs a nuisance bundle and costs");
            double s;
            if (p.score == ScoreKind::covariate_only) {
                s = covariate_only_score(p.lambda, x, *ctx.eta, *ctx.cost);
            } else if (p.score == ScoreKind::robust) {
                if (!ctx.uset || !ctx.rule)
                    throw domain_error("robust threshold policy needs uncertainty set and overlap rule");
                s = robust_threshold_score(p.lambda, x, group_index_in(*ctx.eta, group), *ctx.eta,
                                           *ctx.cost, *ctx.uset, *ctx.rule);
            } else {
                s = threshold_score(p.lambda, x, group_index_in(*ctx.eta, group), *ctx.eta,
                                    *ctx.cost);
            }
            return s > 0.0 ? 1.0 : 0.0;
        }
    }
    throw domain_error("unknown policy kind");
}

double policy_prob1(const RandomizedPolicy& q, std::span<const double> x,
                    const std::string& group, const PolicyEvalContext& ctx) {
    if (q.components.empty()) throw domain_error("empty randomized policy");
    double p = 0.0;
    for (const auto& [w, comp] : q.components) p += w * policy_prob1(comp, x, group, ctx);
    return p;
}

std::vector<double> policy_prob1_rows(const RandomizedPolicy& q, const Dataset& ds,
                                      const PolicyEvalContext& ctx) {
    std::vector<double> out(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        out[i] = policy_prob1(q, ds.x(i), ds.group_label(i), ctx);
    return out;
}

// ------------------------------ serialization ------------------------------

std::string serialize_policy(const RandomizedPolicy& q) {
    std::ostringstream os;
    os << "policy mixture " << q.components.size() << "\n";
    for (const auto& [w, p] : q.components) {
        os << "component " << format_double(w) << "\n";
        switch (p.kind) {
            case PolicySpec::Kind::constant:
                os << "constant " << p.constant_action << "\n";
                break;
            case PolicySpec::Kind::tabular:
                os << "tabular " << p.table.size() << "\n";
                for (const auto& [k, a] : p.table) os << k << " " << a << "\n";
                break;
            case PolicySpec::Kind::linear_index: {
                os << "linear " << p.beta.size();
                for (double b : p.beta) os << " " << format_double(b);
                os << " groups ";
                for (std::size_t k = 0; k < p.linear_groups.size(); ++k)
                    os << (k ? "," : "") << p.linear_groups[k];
                os << "\n";
                break;
            }
            case PolicySpec::Kind::threshold:
                os << "threshold " << format_double(p.lambda) << " "
                   << (p.score == ScoreKind::standard
                           ? "standard"
                           : p.score == ScoreKind::covariate_only ? "covariate_only" : "robust")
                   << "\n";
                break;
        }
    }
    return os.str();
}

RandomizedPolicy parse_policy(std::istream& in) {
    std::string tok;
    in >> tok;
    if (tok != "policy") throw parse_error("policy parse: bad header");
    std::size_t k;
    in >> tok >> k;
    if (tok != "mixture") throw parse_error("policy parse: expected 'mixture'");
    RandomizedPolicy q;
    for (std::size_t c = 0; c < k; ++c) {
        double w;
        in >> tok >> w;
        if (tok != "component") throw parse_error("policy parse: expected 'component'");
        in >> tok;
        PolicySpec p;
        if (tok == "constant") {
            int a;
            in >> a;
            p = PolicySpec::make_constant(a);
        } else if (tok == "tabular") {
            std::size_t m;
            in >> m;
            std::map<std::string, int> table;
            for (std::size_t i = 0; i < m; ++i) {
                std::string key;
                int a;
                in >> key >> a;
                table[key] = a;
            }
            p = PolicySpec::make_tabular(std::move(table));
        } else if (tok == "linear") {
            std::size_t d;
            in >> d;
            std::vector<double> beta(d);
            for (auto& b : beta) in >> b;
            in >> tok;
            if (tok != "groups") throw parse_error("policy parse: expected 'groups'");
            std::string glist;
            in >> glist;
            p = PolicySpec::make_linear(std::move(beta), split(glist, ','));
        } else if (tok == "threshold") {
            double lambda;
            std::string sk;
            in >> lambda >> sk;
            ScoreKind kind = sk == "covariate_only" ? ScoreKind::covariate_only
                             : sk == "robust"       ? ScoreKind::robust
                                                    : ScoreKind::standard;
            p = PolicySpec::make_threshold(lambda, kind);
        } else {
            throw parse_error("policy parse: unknown component kind " + tok);
        }
        q.components.emplace_back(w, p);
    }
    q.normalize();
    return q;
}

}  // namespace encpol
