#include "encpol/redfair.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace encpol {

double Moment::value(std::span<const double> pi1) const {
    std::vector<double> terms;
    terms.reserve(count);
    for (std::size_t i = 0; i < event.size(); ++i)
        if (event[i]) terms.push_back(slope[i] * pi1[i] + intercept[i]);
    return mean(terms);
}

std::vector<double> ConstraintSystem::moment_values(std::span<const double> pi1) const {
    std::vector<double> h(J());
    for (std::size_t j = 0; j < J(); ++j) h[j] = moments[j].value(pi1);
    return h;
}

std::vector<double> ConstraintSystem::constraint_values(std::span<const double> pi1) const {
    const auto h = moment_values(pi1);
    std::vector<double> gamma(K(), 0.0);
    for (std::size_t k = 0; k < K(); ++k)
        for (std::size_t j = 0; j < J(); ++j) gamma[k] += M[k][j] * h[j];
    return gamma;
}

void ConstraintSystem::check() const {
    if (M.size() != d.size()) throw domain_error("constraint system: M rows vs d mismatch");
    for (const auto& row : M)
        if (row.size() != J()) throw domain_error("constraint system: M columns vs moments mismatch");
    for (const auto& m : moments) {
        if (m.count == 0)
            throw domain_error("constraint system: conditioning event '" + m.name +
                               "' matches no observation");
        if (m.slope.size() != m.event.size() || m.intercept.size() != m.event.size())
            throw domain_error("constraint system: moment arrays misaligned");
    }
    if (!slack_override.empty() && slack_override.size() != K())
        throw domain_error("constraint system: slack override length mismatch");
}

// ------------------------------ parity builders ----------------------------

namespace {

ConstraintSystem parity_shell(const Dataset& ds, double d, ConstraintSystem::Kind kind) {
    ConstraintSystem sys;
    sys.kind = kind;
    const std::size_t G = ds.n_groups();
    const std::size_t J = G + 1;
    sys.M.assign(2 * G, std::vector<double>(J, 0.0));
    sys.d.assign(2 * G, d);
    for (std::size_t g = 0; g < G; ++g) {
        sys.M[2 * g][g] = 1.0;
        sys.M[2 * g][J - 1] = -1.0;
        sys.M[2 * g + 1][g] = -1.0;
        sys.M[2 * g + 1][J - 1] = 1.0;
        sys.row_names.push_back(ds.group_set()[g] + "+");
        sys.row_names.push_back(ds.group_set()[g] + "-");
    }
    return sys;
}

Moment make_group_moment(const Dataset& ds, int g, std::vector<double> slope,
                         std::vector<double> intercept) {
    Moment m;
    m.slope = std::move(slope);
    m.intercept = std::move(intercept);
    m.event.assign(ds.size(), 0);
    if (g < 0) {
        m.name = "marginal";
        m.event.assign(ds.size(), 1);
        m.count = ds.size();
        m.p_hat = 1.0;
    } else {
        m.name = ds.group_set()[g];
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.group(i) == g) {
                m.event[i] = 1;
                m.count++;
            }
        m.p_hat = static_cast<double>(m.count) / ds.size();
    }
    return m;
}

}  // namespace

ConstraintSystem make_treatment_parity(const Dataset& ds, const NuisanceBundle& eta, double d) {
    if (eta.n_rows() != ds.size())
        throw domain_error("make_treatment_parity: bundle bound to a different dataset");
    std::vector<double> slope(ds.size()), intercept(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        slope[i] = eta.lift(i);
        intercept[i] = eta.p10(i);
    }
    ConstraintSystem sys = parity_shell(ds, d, ConstraintSystem::Kind::treatment_parity);
    for (int g = 0; g < static_cast<int>(ds.n_groups()); ++g)
        sys.moments.push_back(make_group_moment(ds, g, slope, intercept));
    sys.moments.push_back(make_group_moment(ds, -1, slope, intercept));
    sys.check();
    return sys;
}

ConstraintSystem make_responder_parity(const Dataset& ds, const NuisanceBundle& eta, double d) {
    if (!ds.y_binary()) throw domain_error("responder parity needs binary outcomes");
    if (eta.n_rows() != ds.size())
        throw domain_error("make_responder_parity: bundle bound to a different dataset");

    // Group-mean effects; each row is scaled by its own group's mean.
    std::vector<double> denom(ds.n_groups(), 0.0);
    std::vector<std::size_t> counts(ds.n_groups(), 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        denom[ds.group(i)] += eta.mu1(i) - eta.mu0(i);
        counts[ds.group(i)]++;
    }
    for (std::size_t g = 0; g < ds.n_groups(); ++g) {
        denom[g] /= static_cast<double>(counts[g]);
        if (denom[g] <= 0.0)
            throw monotonicity_error("responder parity: group mean effect not positive for " +
                                     ds.group_set()[g]);
    }

    std::vector<double> slope(ds.size()), intercept(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double w = (eta.mu1(i) - eta.mu0(i)) / denom[ds.group(i)];
        slope[i] = eta.lift(i) * w;
        intercept[i] = eta.p10(i) * w;
    }
    ConstraintSystem sys = parity_shell(ds, d, ConstraintSystem::Kind::responder_parity);
    for (int g = 0; g < static_cast<int>(ds.n_groups()); ++g)
        sys.moments.push_back(make_group_moment(ds, g, slope, intercept));
    sys.moments.push_back(make_group_moment(ds, -1, slope, intercept));
    sys.check();
    return sys;
}

// ------------------------------ value rows ---------------------------------

namespace {

// Per-row linear representation of the chosen value estimator:
// score_i(pi) = slope[i] * pi_1(i) + intercept[i].
struct ValueRows {
    std::vector<double> slope, intercept;

    double value(std::span<const double> pi1) const {
        std::vector<double> terms(slope.size());
        for (std::size_t i = 0; i < slope.size(); ++i)
            terms[i] = slope[i] * pi1[i] + intercept[i];
        return mean(terms);
    }
};

ValueRows build_value_rows(const Dataset& ds, const NuisanceBundle& eta, const CostSpec& cost,
                           PseudoKind kind) {
    ValueRows v;
    v.slope.resize(ds.size());
    v.intercept.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        switch (kind) {
            case PseudoKind::DM: {
                const double tau = cost.w_y * (eta.mu1(i) - eta.mu0(i)) + cost.w_t;
                v.slope[i] = eta.lift(i) * tau + cost.w_r;
                v.intercept[i] = cost.w_y * eta.mu0(i) + eta.p10(i) * tau;
                break;
            }
            case PseudoKind::IPW: {
                const int r = ds.r(i);
                const double w = cost.utility(r, ds.t(i), ds.y(i)) / eta.e_r(i, r);
                v.slope[i] = (2.0 * r - 1.0) * w;
                v.intercept[i] = r == 1 ? 0.0 : w;
                break;
            }
            case PseudoKind::DR: {
                double bracket[2];
                for (int r = 0; r < 2; ++r) {
                    double term = 0.0;
                    for (int t = 0; t < 2; ++t) {
                        const double ptr =
                            t == 1 ? eta.p1_given_r(i, r) : 1.0 - eta.p1_given_r(i, r);
                        const double ureg = cost.w_y * (t == 1 ? eta.mu1(i) : eta.mu0(i)) +
                                            cost.w_t * t + cost.w_r * r;
                        double corr = 0.0;
                        if (ds.r(i) == r) {
                            const double obs =
                                ds.t(i) == t ? cost.utility(r, t, ds.y(i)) : 0.0;
                            corr = (obs - ureg * ptr) / eta.e_r(i, r);
                        }
                        term += corr + ureg * ptr;
                    }
                    bracket[r] = term;
                }
                v.slope[i] = bracket[1] - bracket[0];
                v.intercept[i] = bracket[0];
                break;
            }
        }
    }
    return v;
}

// Exact coefficient of pi_1(i) in the penalized objective
//   L(pi, lambda) = V(pi) - sum_k lambda_k (gamma_k(pi) - d_k),
// scaled by n (scale does not affect best responses).
std::vector<double> penalized_coefficients(const ValueRows& v, const ConstraintSystem& sys,
                                           std::span<const double> lambda) {
    const std::size_t n = v.slope.size();
    std::vector<double> coef(v.slope);
    if (sys.K() == 0 || lambda.empty()) return coef;
    // mt[j] = sum_k lambda_k M[k][j]
    std::vector<double> mt(sys.J(), 0.0);
    for (std::size_t k = 0; k < sys.K(); ++k)
        for (std::size_t j = 0; j < sys.J(); ++j) mt[j] += lambda[k] * sys.M[k][j];
    for (std::size_t j = 0; j < sys.J(); ++j) {
        if (mt[j] == 0.0) continue;
        const Moment& m = sys.moments[j];
        const double scale = static_cast<double>(n) / static_cast<double>(m.count);
        for (std::size_t i = 0; i < n; ++i)
            if (m.event[i]) coef[i] -= mt[j] * m.slope[i] * scale;
    }
    return coef;
}

// Row -> covariate-group cell index, computed once so the saddle loop never
// touches string keys.
struct CellIndex {
    std::vector<int> of_row;
    std::vector<std::string> keys;  // per cell
    int count = 0;
};

CellIndex build_cells(const Dataset& ds) {
    CellIndex ci;
    ci.of_row.resize(ds.size());
    std::map<std::string, int> ids;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::string key = cell_key(ds.x(i), ds.group_label(i));
        auto [it, fresh] = ids.emplace(key, ci.count);
        if (fresh) {
            ci.keys.push_back(key);
            ++ci.count;
        }
        ci.of_row[i] = it->second;
    }
    return ci;
}

PolicySpec linear_best_response(const Dataset& ds, std::span<const double> coef,
                                const RedfairParams& params) {
    const std::size_t d = ds.dim();
    const std::size_t G = ds.n_groups();
    const std::size_t df = d + G;
    std::vector<double> feats(ds.size() * df, 0.0);
    std::vector<double> weights(ds.size()), signs(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto x = ds.x(i);
        for (std::size_t j = 0; j < d; ++j) feats[i * df + j] = x[j];
        feats[i * df + d + ds.group(i)] = 1.0;
        weights[i] = std::abs(coef[i]);
        signs[i] = coef[i] > 0.0 ? 1.0 : -1.0;
    }
    LinearModel m = fit_weighted_surrogate(feats, ds.size(), df, weights, signs,
                                           params.surrogate_reg, params.budget);
    return PolicySpec::make_linear(m.w, ds.group_set());
}

struct Engine {
    const Dataset& ds;
    const ConstraintSystem& sys;
    const NuisanceBundle& eta;
    const CostSpec& cost;
    const RedfairParams& params;
    ValueRows vrows;
    std::vector<double> d_hat;
    CellIndex cells;
    bool tabular = true;

    Engine(const Dataset& ds_, const ConstraintSystem& sys_, const NuisanceBundle& eta_,
           const CostSpec& cost_, const RedfairParams& params_)
        : ds(ds_), sys(sys_), eta(eta_), cost(cost_), params(params_) {
        sys.check();
        if (eta.n_rows() != ds.size())
            throw domain_error("redfair: bundle bound to a different dataset");
        vrows = build_value_rows(ds, eta, cost, params.psi);
        tabular = params.policy_class == RedfairParams::PolicyClass::tabular;
        if (tabular) cells = build_cells(ds);
        d_hat = sys.d;
        for (std::size_t k = 0; k < sys.K(); ++k) {
            if (!sys.slack_override.empty()) {
                d_hat[k] += sys.slack_override[k];
            } else if (params.cprime > 0.0) {
                double eps_k = 0.0;
                for (std::size_t j = 0; j < sys.J(); ++j)
                    eps_k += std::abs(sys.M[k][j]) *
                             std::pow(static_cast<double>(sys.moments[j].count), -params.alpha);
                d_hat[k] += params.cprime * eps_k;
            }
        }
    }

    // Tabular fast path: per-cell best-response actions and their row view.
    std::vector<std::int8_t> best_cells(std::span<const double> lambda) const {
        const auto coef = penalized_coefficients(vrows, sys, lambda);
        std::vector<double> cell_sum(cells.count, 0.0);
        for (std::size_t i = 0; i < ds.size(); ++i) cell_sum[cells.of_row[i]] += coef[i];
        std::vector<std::int8_t> act(cells.count);
        for (int c = 0; c < cells.count; ++c) act[c] = cell_sum[c] > 0.0 ? 1 : 0;
        return act;
    }

    std::vector<double> cell_rows(const std::vector<std::int8_t>& act) const {
        std::vector<double> pi1(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) pi1[i] = act[cells.of_row[i]];
        return pi1;
    }

    PolicySpec cells_to_policy(const std::vector<std::int8_t>& act) const {
        std::map<std::string, int> table;
        for (int c = 0; c < cells.count; ++c) table[cells.keys[c]] = act[c];
        return PolicySpec::make_tabular(std::move(table));
    }

    std::vector<double> best_rows(std::span<const double> lambda) const {
        if (tabular) return cell_rows(best_cells(lambda));
        const auto coef = penalized_coefficients(vrows, sys, lambda);
        return rows_of(linear_best_response(ds, coef, params));
    }

    PolicySpec best_policy(std::span<const double> lambda) const {
        if (tabular) return cells_to_policy(best_cells(lambda));
        const auto coef = penalized_coefficients(vrows, sys, lambda);
        return linear_best_response(ds, coef, params);
    }

    std::vector<double> rows_of(const PolicySpec& p) const {
        PolicyEvalContext ctx;
        ctx.eta = &eta;
        ctx.cost = &cost;
        return policy_prob1_rows(RandomizedPolicy(p), ds, ctx);
    }

    double lagrangian(std::span<const double> pi1, std::span<const double> lambda) const {
        double L = vrows.value(pi1);
        const auto gamma = sys.constraint_values(pi1);
        for (std::size_t k = 0; k < sys.K(); ++k) L -= lambda[k] * (gamma[k] - d_hat[k]);
        return L;
    }

    // Certified distance of (pi1_avg, lambda_avg) from a saddle point.
    double gap(std::span<const double> pi1_avg, std::span<const double> lambda_avg,
               double B) const {
        const double Lhat = lagrangian(pi1_avg, lambda_avg);
        const auto gamma = sys.constraint_values(pi1_avg);
        const auto br_lambda = best_response_lambda(gamma, d_hat, B);
        const double Llow = lagrangian(pi1_avg, br_lambda);
        const double Lup = lagrangian(best_rows(lambda_avg), lambda_avg);
        return std::max(Lup - Lhat, Lhat - Llow);
    }
};

}  // namespace

std::pair<double, int> lagrangian_weights(const Dataset& ds, std::size_t i,
                                          const NuisanceBundle& eta,
                                          std::span<const double> lambda,
                                          const ConstraintSystem& sys, PseudoKind kind,
                                          const CostSpec& cost) {
    const std::size_t G = ds.n_groups();
    if (sys.K() != 2 * G || sys.J() != G + 1)
        throw domain_error("lagrangian_weights expects a parity-shaped system");
    if (lambda.size() != sys.K()) throw domain_error("lagrangian_weights: lambda length mismatch");

    const double psi = pseudo_outcome(ds, i, eta, kind, cost);
    std::vector<double> lam_u(G);
    double lam_sum = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
        lam_u[g] = lambda[2 * g] - lambda[2 * g + 1];
        lam_sum += lam_u[g];
    }
    const int g = ds.group(i);
    const Moment& own = sys.moments[g];
    const double psit = psi + lam_u[g] / own.p_hat * own.slope[i] - lam_sum;
    return {std::abs(psit), psit > 0.0 ? 1 : -1};
}

PolicySpec best_response_policy(std::span<const double> lambda, const Dataset& ds,
                                const NuisanceBundle& eta, const ConstraintSystem& sys,
                                const CostSpec& cost, const RedfairParams& params) {
    Engine eng(ds, sys, eta, cost, params);
    return eng.best_policy(lambda);
}

std::vector<double> best_response_lambda(std::span<const double> gamma,
                                         std::span<const double> d_hat, double B) {
    if (gamma.size() != d_hat.size()) throw domain_error("best_response_lambda: length mismatch");
    std::vector<double> lambda(gamma.size(), 0.0);
    std::size_t kstar = 0;
    double worst = 0.0;
    bool violated = false;
    for (std::size_t k = 0; k < gamma.size(); ++k) {
        const double v = gamma[k] - d_hat[k];
        if (v > 0.0 && (!violated || v > worst)) {
            violated = true;
            worst = v;
            kstar = k;
        }
    }
    if (violated) lambda[kstar] = B;
    return lambda;
}

SaddleResult redfair(const Dataset& ds, const ConstraintSystem& sys, const NuisanceBundle& eta,
                     const CostSpec& cost, const RedfairParams& params) {
    Engine eng(ds, sys, eta, cost, params);
    const std::size_t n = ds.size();
    const std::size_t K = sys.K();

    SaddleResult res;
    res.d_hat = eng.d_hat;

    if (K == 0) {
        const auto pol = eng.best_policy({});
        res.Q = RandomizedPolicy(pol);
        const auto pi1 = eng.rows_of(pol);
        res.value = eng.vrows.value(pi1);
        res.gap = 0.0;
        res.converged = true;
        res.iterations = 1;
        res.B_used = 0.0;
        res.nu_target = std::isnan(params.nu) ? std::pow(double(n), -params.alpha) : params.nu;
        return res;
    }

    // Rate-guided defaults; xi comes from the unpenalized first iterate.
    const double nu = std::isnan(params.nu) ? std::pow(double(n), -params.alpha) : params.nu;
    const double B = std::isnan(params.B) ? 10.0 / nu : params.B;
    std::vector<double> zeros(K, 0.0);
    const auto first = eng.best_policy(zeros);
    const auto first_rows = eng.rows_of(first);
    const auto first_gamma = sys.constraint_values(first_rows);
    double xi = 1e-6;
    for (std::size_t k = 0; k < K; ++k)
        xi = std::max(xi, std::abs(first_gamma[k] - eng.d_hat[k]));
    const double omega = std::isnan(params.omega)
                             ? 1.0 / (2.0 * xi * xi * std::pow(double(n), 2.0 * params.alpha))
                             : params.omega;
    res.B_used = B;
    res.nu_target = nu;
    res.omega_used = omega;

    std::vector<double> theta(K, 0.0);
    std::vector<double> lambda_sum(K, 0.0);
    std::vector<double> pi1_sum(n, 0.0);
    // Distinct tabular action profiles with visit counts; the linear class
    // accumulates policy specs directly.
    std::vector<std::pair<std::vector<std::int8_t>, double>> profiles;
    RandomizedPolicy q_accum;

    std::vector<double> lambda(K), pi1_avg(n), lambda_avg(K);
    for (int t = 1; t <= params.max_iterations; ++t) {
        // lambda_k = B exp(theta_k) / (1 + sum exp(theta)), computed stably.
        const double m = std::max(0.0, *std::max_element(theta.begin(), theta.end()));
        double denom = std::exp(-m);
        for (double th : theta) denom += std::exp(th - m);
        for (std::size_t k = 0; k < K; ++k) lambda[k] = B * std::exp(theta[k] - m) / denom;

        std::vector<double> pi1;
        if (eng.tabular) {
            auto act = eng.best_cells(lambda);
            pi1 = eng.cell_rows(act);
            bool found = false;
            for (auto& [prof, cnt] : profiles)
                if (prof == act) {
                    cnt += 1.0;
                    found = true;
                    break;
                }
            if (!found) profiles.emplace_back(std::move(act), 1.0);
        } else {
            const auto pol = eng.best_policy(lambda);
            pi1 = eng.rows_of(pol);
            q_accum.add(1.0, pol);
        }
        for (std::size_t i = 0; i < n; ++i) pi1_sum[i] += pi1[i];
        for (std::size_t k = 0; k < K; ++k) lambda_sum[k] += lambda[k];

        for (std::size_t i = 0; i < n; ++i) pi1_avg[i] = pi1_sum[i] / t;
        for (std::size_t k = 0; k < K; ++k) lambda_avg[k] = lambda_sum[k] / t;

        const double gap = eng.gap(pi1_avg, lambda_avg, B);
        const auto gamma_avg = sys.constraint_values(pi1_avg);

        TraceRow row;
        row.iter = t;
        row.lambda = lambda;
        row.gap = gap;
        row.value = eng.vrows.value(pi1_avg);
        row.violations.resize(K);
        for (std::size_t k = 0; k < K; ++k) row.violations[k] = gamma_avg[k] - eng.d_hat[k];
        res.trace.push_back(std::move(row));

        res.iterations = t;
        if (gap <= nu) {
            res.converged = true;
            res.gap = gap;
            break;
        }
        res.gap = gap;

        // Multiplier update from the current iterate's residuals.
        const auto gamma_t = sys.constraint_values(pi1);
        for (std::size_t k = 0; k < K; ++k) {
            const double arg = 1.0 + omega * (gamma_t[k] - eng.d_hat[k]);
            theta[k] += std::log(std::max(arg, 1e-12));
        }
    }

    if (eng.tabular) {
        for (const auto& [prof, cnt] : profiles)
            q_accum.add(cnt, eng.cells_to_policy(prof));
    }
    q_accum.normalize();
    res.Q = std::move(q_accum);
    res.lambda_avg = lambda_avg;
    res.value = eng.vrows.value(pi1_avg);
    res.constraint_values = sys.constraint_values(pi1_avg);
    return res;
}

double saddle_gap(const Dataset& ds, const ConstraintSystem& sys, const NuisanceBundle& eta,
                  const CostSpec& cost, const RedfairParams& params, const RandomizedPolicy& Q,
                  std::span<const double> lambda, std::span<const double> d_hat, double B) {
    Engine eng(ds, sys, eta, cost, params);
    eng.d_hat.assign(d_hat.begin(), d_hat.end());
    PolicyEvalContext ctx;
    ctx.eta = &eta;
    ctx.cost = &cost;
    const auto pi1 = policy_prob1_rows(Q, ds, ctx);
    return eng.gap(pi1, lambda, B);
}

std::string SaddleResult::trace_csv() const {
    std::ostringstream os;
    const std::size_t K = trace.empty() ? 0 : trace.front().lambda.size();
    os << "iter";
    for (std::size_t k = 0; k < K; ++k) os << ",lambda_" << k;
    os << ",gap,value";
    for (std::size_t k = 0; k < K; ++k) os << ",violation_" << k;
    os << "\n";
    for (const auto& r : trace) {
        os << r.iter;
        for (double l : r.lambda) os << "," << format_double(l);
        os << "," << format_double(r.gap) << "," << format_double(r.value);
        for (double v : r.violations) os << "," << format_double(v);
        os << "\n";
    }
    return os.str();
}

// ------------------------------- two stage ---------------------------------

double augmented_bound(double d, std::span<const double> M_row, std::span<const double> sigma2,
                       std::size_t n, double alpha) {
    if (M_row.size() != sigma2.size()) throw domain_error("augmented_bound: length mismatch");
    double add = 0.0;
    for (std::size_t j = 0; j < M_row.size(); ++j)
        add += std::abs(M_row[j]) * sigma2[j];
    return d + 2.0 * add * std::pow(static_cast<double>(n), -alpha);
}

TwoStageResult two_stage(const Dataset& ds, const SystemMaker& make_system,
                         const NuisanceMaker& make_nuisances, const CostSpec& cost,
                         const RedfairParams& params) {
    if (ds.size() < 4) throw domain_error("two_stage: dataset too small to split");

    // Seeded half split.
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(params.seed);
    rng.shuffle(idx);
    const std::size_t n1 = ds.size() / 2;
    std::vector<std::size_t> rows1(idx.begin(), idx.begin() + n1);
    std::vector<std::size_t> rows2(idx.begin() + n1, idx.end());
    std::sort(rows1.begin(), rows1.end());
    std::sort(rows2.begin(), rows2.end());
    const Dataset d1 = ds.subset(rows1);
    const Dataset d2 = ds.subset(rows2);

    TwoStageResult out;

    // Stage 1.
    const NuisanceBundle eta1 = make_nuisances(d1);
    const ConstraintSystem sys1 = make_system(d1, eta1);
    out.stage1 = redfair(d1, sys1, eta1, cost, params);

    PolicyEvalContext ctx1;
    ctx1.eta = &eta1;
    ctx1.cost = &cost;
    const auto pi1_q1 = policy_prob1_rows(out.stage1.Q, d1, ctx1);

    // Slice width from the stage-1 value scores.
    {
        const auto vrows = build_value_rows(d1, eta1, cost, params.psi);
        std::vector<double> scores(d1.size());
        for (std::size_t i = 0; i < d1.size(); ++i)
            scores[i] = vrows.slope[i] * pi1_q1[i] + vrows.intercept[i];
        out.epsilon_n = params.slice_scale * sample_sd(scores) *
                        std::pow(static_cast<double>(d1.size()), -params.alpha);
    }

    // Variance of the normalized moments at the stage-1 policy.
    out.sigma2.resize(sys1.J());
    for (std::size_t j = 0; j < sys1.J(); ++j) {
        const Moment& m = sys1.moments[j];
        std::vector<double> v(d1.size(), 0.0);
        for (std::size_t i = 0; i < d1.size(); ++i)
            if (m.event[i]) v[i] = (m.slope[i] * pi1_q1[i] + m.intercept[i]) / m.p_hat;
        out.sigma2[j] = sample_variance(v);
    }

    // Binding rows: within epsilon_n of the effective bound.
    {
        const auto gamma1 = sys1.constraint_values(pi1_q1);
        for (std::size_t k = 0; k < sys1.K(); ++k)
            if (gamma1[k] >= out.stage1.d_hat[k] - out.epsilon_n) out.binding.push_back(k);
    }

    // Stage 2: rebuild moments on the second half, calibrate slacks by the
    // stage-1 variances, and add the slice rows.
    const NuisanceBundle eta2 = make_nuisances(d2);
    ConstraintSystem sys2 = make_system(d2, eta2);
    out.d_hat2.resize(sys2.K());
    sys2.slack_override.assign(sys2.K(), 0.0);
    for (std::size_t k = 0; k < sys2.K(); ++k) {
        const double dk = augmented_bound(sys2.d[k], sys2.M[k], out.sigma2, d1.size(), params.alpha);
        sys2.slack_override[k] = dk - sys2.d[k];
        out.d_hat2[k] = dk;
    }

    PolicyEvalContext ctx2;
    ctx2.eta = &eta2;
    ctx2.cost = &cost;
    const auto pi1_q1_on2 = policy_prob1_rows(out.stage1.Q, d2, ctx2);

    // Constraint slices for binding rows: gamma_k(Q1) - gamma_k(Q) <= eps_n.
    // Each needed moment j gets a difference counterpart g_j(O, Q1) - g_j(O, pi)
    // on the same event; slice row k reuses M[k][j] on those columns.
    const std::size_t J0 = sys2.J();
    const std::size_t K0 = sys2.K();
    std::vector<std::vector<std::pair<std::size_t, double>>> slice_cols(out.binding.size());
    for (std::size_t b = 0; b < out.binding.size(); ++b) {
        const std::size_t k = out.binding[b];
        for (std::size_t j = 0; j < J0; ++j) {
            if (sys2.M[k][j] == 0.0) continue;
            Moment diff = sys2.moments[j];
            diff.name = "slice_" + sys2.moments[j].name;
            for (std::size_t i = 0; i < d2.size(); ++i) {
                diff.intercept[i] = sys2.moments[j].slope[i] * pi1_q1_on2[i];
                diff.slope[i] = -sys2.moments[j].slope[i];
            }
            slice_cols[b].emplace_back(sys2.moments.size(), sys2.M[k][j]);
            sys2.moments.push_back(std::move(diff));
        }
    }
    const std::size_t Jnew = sys2.moments.size();
    for (auto& mrow : sys2.M) mrow.resize(Jnew, 0.0);
    for (std::size_t b = 0; b < out.binding.size(); ++b) {
        std::vector<double> mrow(Jnew, 0.0);
        for (const auto& [col, coef] : slice_cols[b]) mrow[col] = coef;
        sys2.M.push_back(std::move(mrow));
        sys2.d.push_back(out.epsilon_n);
        sys2.slack_override.push_back(0.0);
        const std::size_t k = out.binding[b];
        sys2.row_names.push_back(
            "slice_" + (k < K0 && k < sys2.row_names.size() ? sys2.row_names[k] : std::to_string(k)));
    }

    // Value slice: value(Q1) - value(Q) <= eps_n.
    {
        const auto vrows2 = build_value_rows(d2, eta2, cost, params.psi);
        out.stage1_value_on_stage2 = vrows2.value(pi1_q1_on2);
        Moment vm;
        vm.name = "value_slice";
        vm.event.assign(d2.size(), 1);
        vm.count = d2.size();
        vm.p_hat = 1.0;
        vm.slope.resize(d2.size());
        vm.intercept.resize(d2.size());
        for (std::size_t i = 0; i < d2.size(); ++i) {
            vm.slope[i] = -vrows2.slope[i];
            vm.intercept[i] = vrows2.slope[i] * pi1_q1_on2[i];
        }
        sys2.moments.push_back(std::move(vm));
        for (auto& mrow : sys2.M) mrow.resize(sys2.moments.size(), 0.0);
        std::vector<double> mrow(sys2.moments.size(), 0.0);
        mrow.back() = 1.0;
        sys2.M.push_back(std::move(mrow));
        sys2.d.push_back(out.epsilon_n);
        sys2.slack_override.push_back(0.0);
        sys2.row_names.push_back("value_slice");
    }

    sys2.check();
    out.stage2 = redfair(d2, sys2, eta2, cost, params);

    // Fall back to the stage-1 policy when the augmented system was not
    // satisfiable within the saddle guarantee. The allowance uses the target
    // gap: a run that could not converge gets no extra slack from its own
    // failure.
    PolicyEvalContext ctx2b;
    ctx2b.eta = &eta2;
    ctx2b.cost = &cost;
    const auto pi2 = policy_prob1_rows(out.stage2.Q, d2, ctx2b);
    const auto gamma2 = sys2.constraint_values(pi2);
    const double gap_for_bound = std::min(std::max(out.stage2.gap, 0.0), out.stage2.nu_target);
    const double allowance =
        (1.0 + 2.0 * gap_for_bound) / std::max(out.stage2.B_used, 1e-12) + 1e-9;
    for (std::size_t k = 0; k < sys2.K(); ++k) {
        if (gamma2[k] > out.stage2.d_hat[k] + allowance) {
            out.fallback = true;
            break;
        }
    }
    out.final_policy = out.fallback ? out.stage1.Q : out.stage2.Q;
    return out;
}

}  // namespace encpol
