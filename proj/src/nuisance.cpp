#include "encpol/nuisance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace encpol {

double LinearModel::index(std::span<const double> x) const {
    double z = w.empty() ? 0.0 : w[0];
    const std::size_t d = w.size() > 0 ? w.size() - 1 : 0;
    for (std::size_t j = 0; j < d && j < x.size(); ++j) z += w[j + 1] * x[j];
    return z;
}

double LinearModel::predict(std::span<const double> x) const {
    const double z = index(x);
    if (link == Link::identity) return z;
    return 1.0 / (1.0 + std::exp(-z));
}

namespace {

// Minimizes a smooth convex objective by gradient descent with Armijo
// backtracking. Objective and gradient are of the full parameter vector
// (intercept first). Deterministic from zero start.
struct GdProblem {
    std::function<double(std::span<const double>)> value;
    std::function<void(std::span<const double>, std::vector<double>&)> grad;
};

LinearModel run_gd(std::size_t d, const GdProblem& prob, Link link, const OptimizerBudget& budget) {
    LinearModel m;
    m.link = link;
    m.w.assign(d + 1, 0.0);
    std::vector<double> g(d + 1), trial(d + 1);
    double step = 1.0;
    double f = prob.value(m.w);
    int it = 0;
    for (; it < budget.max_iterations; ++it) {
        prob.grad(m.w, g);
        double gnorm2 = 0.0;
        for (double v : g) gnorm2 += v * v;
        if (std::sqrt(gnorm2) <= budget.grad_tol) {
            m.converged = true;
            m.iterations = it;
            return m;
        }
        // Backtracking from a step that grows when the previous one was accepted.
        step = std::min(step * 2.0, 1e8);
        bool accepted = false;
        for (int h = 0; h < 80; ++h) {
            for (std::size_t j = 0; j <= d; ++j) trial[j] = m.w[j] - step * g[j];
            const double ft = prob.value(trial);
            if (ft <= f - 1e-4 * step * gnorm2) {
                m.w = trial;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // Step underflow: gradient direction no longer improves at double
            // precision; treat as converged at machine accuracy.
            m.converged = true;
            m.iterations = it;
            return m;
        }
    }
    m.converged = false;
    m.iterations = it;
    return m;
}

}  // namespace

LinearModel fit_logistic(std::span<const double> features, std::size_t n, std::size_t d,
                         std::span<const double> labels, std::span<const double> weights,
                         double reg, const OptimizerBudget& budget) {
    if (labels.size() != n || weights.size() != n || features.size() != n * d)
        throw domain_error("fit_logistic: shape mismatch");
    double wsum = pairwise_sum(weights);
    if (wsum <= 0.0) throw domain_error("fit_logistic: all weights zero");
    bool all0 = true, all1 = true;
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] <= 0.0) continue;
        if (labels[i] != 0.0) all0 = false;
        if (labels[i] != 1.0) all1 = false;
    }
    if ((all0 || all1) && reg == 0.0)
        throw domain_error("fit_logistic: single-class labels need regularization > 0");

    // Objective is scaled by total weight; same minimizer as the unscaled
    // penalized likelihood, better conditioned for the line search.
    const double scale = 1.0 / wsum;
    GdProblem prob;
    prob.value = [&, scale](std::span<const double> w) {
        std::vector<double> terms(n);
        for (std::size_t i = 0; i < n; ++i) {
            double z = w[0];
            for (std::size_t j = 0; j < d; ++j) z += w[j + 1] * features[i * d + j];
            // log(1+e^z) - y z, computed stably
            const double lse = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            terms[i] = weights[i] * (lse - labels[i] * z);
        }
        double val = pairwise_sum(terms) * scale;
        for (std::size_t j = 1; j <= d; ++j) val += 0.5 * reg * scale * w[j] * w[j];
        return val;
    };
    prob.grad = [&, scale](std::span<const double> w, std::vector<double>& g) {
        g.assign(d + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double z = w[0];
            for (std::size_t j = 0; j < d; ++j) z += w[j + 1] * features[i * d + j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double gi = weights[i] * (p - labels[i]);
            g[0] += gi;
            for (std::size_t j = 0; j < d; ++j) g[j + 1] += gi * features[i * d + j];
        }
        for (std::size_t j = 0; j <= d; ++j) g[j] *= scale;
        for (std::size_t j = 1; j <= d; ++j) g[j] += reg * scale * w[j];
    };
    return run_gd(d, prob, Link::logistic, budget);
}

LinearModel fit_linear(std::span<const double> features, std::size_t n, std::size_t d,
                       std::span<const double> labels, std::span<const double> weights,
                       double reg, const OptimizerBudget& budget) {
    if (labels.size() != n || weights.size() != n || features.size() != n * d)
        throw domain_error("fit_linear: shape mismatch");
    double wsum = pairwise_sum(weights);
    if (wsum <= 0.0) throw domain_error("fit_linear: all weights zero");
    const double scale = 1.0 / wsum;
    GdProblem prob;
    prob.value = [&, scale](std::span<const double> w) {
        std::vector<double> terms(n);
        for (std::size_t i = 0; i < n; ++i) {
            double z = w[0];
            for (std::size_t j = 0; j < d; ++j) z += w[j + 1] * features[i * d + j];
            const double r = z - labels[i];
            terms[i] = 0.5 * weights[i] * r * r;
        }
        double val = pairwise_sum(terms) * scale;
        for (std::size_t j = 1; j <= d; ++j) val += 0.5 * reg * scale * w[j] * w[j];
        return val;
    };
    prob.grad = [&, scale](std::span<const double> w, std::vector<double>& g) {
        g.assign(d + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double z = w[0];
            for (std::size_t j = 0; j < d; ++j) z += w[j + 1] * features[i * d + j];
            const double gi = weights[i] * (z - labels[i]);
            g[0] += gi;
            for (std::size_t j = 0; j < d; ++j) g[j + 1] += gi * features[i * d + j];
        }
        for (std::size_t j = 0; j <= d; ++j) g[j] *= scale;
        for (std::size_t j = 1; j <= d; ++j) g[j] += reg * scale * w[j];
    };
    return run_gd(d, prob, Link::identity, budget);
}

LinearModel fit_weighted_surrogate(std::span<const double> features, std::size_t n, std::size_t d,
                                   std::span<const double> weights, std::span<const double> signs,
                                   double reg, const OptimizerBudget& budget) {
    if (signs.size() != n || weights.size() != n || features.size() != n * d)
        throw domain_error("fit_weighted_surrogate: shape mismatch");
    double wsum = pairwise_sum(weights);
    if (wsum <= 0.0) wsum = 1.0;  // all-zero weights: any model is optimal
    const double scale = 1.0 / wsum;
    GdProblem prob;
    // loss(g, s) = 2 log(1+exp(g)) - (s+1) g
    prob.value = [&, scale](std::span<const double> w) {
        std::vector<double> terms(n);
        for (std::size_t i = 0; i < n; ++i) {
            double z = w[0];
            for (std::size_t j = 0; j < d; ++j) z += w[j + 1] * features[i * d + j];
            const double lse = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            terms[i] = weights[i] * (2.0 * lse - (signs[i] + 1.0) * z);
        }
        double val = pairwise_sum(terms) * scale;
        for (std::size_t j = 1; j <= d; ++j) val += 0.5 * reg * scale * w[j] * w[j];
        return val;
    };
    prob.grad = [&, scale](std::span<const double> w, std::vector<double>& g) {
        g.assign(d + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double z = w[0];
            for (std::size_t j = 0; j < d; ++j) z += w[j + 1] * features[i * d + j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double gi = weights[i] * (2.0 * p - (signs[i] + 1.0));
            g[0] += gi;
            for (std::size_t j = 0; j < d; ++j) g[j + 1] += gi * features[i * d + j];
        }
        for (std::size_t j = 0; j <= d; ++j) g[j] *= scale;
        for (std::size_t j = 1; j <= d; ++j) g[j] += reg * scale * w[j];
    };
    return run_gd(d, prob, Link::identity, budget);
}

// ---------------------------------------------------------------------------

std::string covariate_key(std::span<const double> x) {
    std::string key;
    char buf[20];
    for (double v : x) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        std::snprintf(buf, sizeof(buf), "%016llx.", static_cast<unsigned long long>(bits));
        key += buf;
    }
    return key;
}

double Predictor::eval(std::span<const double> x) const {
    if (kind == Kind::linear) return model.predict(x);
    auto it = table.find(covariate_key(x));
    if (it == table.end())
        throw domain_error("table predictor: no entry for requested covariates");
    return it->second;
}

double NuisanceBundle::at(Fn f, std::span<const double> x, int group) const {
    if (group < 0 || group >= static_cast<int>(groups_.size()))
        throw domain_error("bundle: group index out of range");
    double v = full_[group][f].eval(x);
    const bool prob = (f != MU1 && f != MU0) || y_binary_;
    if (prob) v = std::min(std::max(v, clip_), 1.0 - clip_);
    return v;
}

std::vector<double> NuisanceBundle::group_membership_at(std::span<const double> x) const {
    std::vector<double> m(groups_.size(), 0.0);
    double tot = 0.0;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        m[g] = std::max(membership_[g].eval(x), 0.0);
        tot += m[g];
    }
    if (tot <= 0.0) throw domain_error("bundle: group membership sums to zero at x");
    for (auto& v : m) v /= tot;
    return m;
}

BundleBuilder::BundleBuilder(const Dataset& ds, double clip) {
    b_.n_ = ds.size();
    b_.clip_ = clip;
    b_.groups_ = ds.group_set();
    b_.y_binary_ = ds.y_binary();
    b_.n_folds_ = 1;
    b_.fold_.assign(ds.size(), 0);
    for (auto& r : b_.rows_) r.assign(ds.size(), 0.0);
    b_.p_group_.assign(b_.groups_.size(), 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) b_.p_group_[ds.group(i)] += 1.0;
    for (auto& p : b_.p_group_) p /= static_cast<double>(ds.size());
    b_.full_.resize(b_.groups_.size());
    b_.membership_.resize(b_.groups_.size());
}

void BundleBuilder::set_row(std::size_t i, NuisanceBundle::Fn f, double v) { b_.rows_[f][i] = v; }
void BundleBuilder::set_predictor(int group, NuisanceBundle::Fn f, Predictor p) {
    b_.full_[group][f] = std::move(p);
}
void BundleBuilder::set_membership(int group, Predictor p) {
    b_.membership_[group] = std::move(p);
}
NuisanceBundle BundleBuilder::build() { return b_; }

// ---------------------------------------------------------------------------

namespace {

struct StratumData {
    std::vector<double> X;  // rows*d
    std::vector<double> label;
    std::vector<std::size_t> rows;
};

LinearModel fit_predictor(const StratumData& s, std::size_t d, Link link, double reg,
                          const OptimizerBudget& budget) {
    std::vector<double> w(s.label.size(), 1.0);
    if (link == Link::logistic)
        return fit_logistic(s.X, s.label.size(), d, s.label, w, reg, budget);
    return fit_linear(s.X, s.label.size(), d, s.label, w, reg, budget);
}

}  // namespace

NuisanceBundle fit_nuisances(const Dataset& ds, const NuisanceConfig& cfg) {
    if (cfg.folds < 1) throw domain_error("fit_nuisances: folds must be >= 1");
    if (cfg.clip <= 0.0 || cfg.clip >= 0.5)
        throw domain_error("fit_nuisances: clip must lie in (0, 0.5)");
    const std::size_t n = ds.size();
    const std::size_t d = ds.dim();
    const int K = cfg.folds;

    NuisanceBundle b;
    b.n_ = n;
    b.n_folds_ = K;
    b.clip_ = cfg.clip;
    b.groups_ = ds.group_set();
    b.y_binary_ = ds.y_binary();
    b.fold_.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.fold_[i] = static_cast<int>(i % K);
    for (auto& r : b.rows_) r.assign(n, 0.0);
    b.p_group_.assign(b.groups_.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) b.p_group_[ds.group(i)] += 1.0;
    for (auto& p : b.p_group_) p /= static_cast<double>(n);
    b.full_.resize(b.groups_.size());
    b.membership_.resize(b.groups_.size());

    const Link mu_link = ds.y_binary() ? Link::logistic : Link::identity;

    for (int g = 0; g < static_cast<int>(b.groups_.size()); ++g) {
        const auto grows = ds.rows_of_group(g);
        // Overlap screen: both recommendation strata must be populated.
        for (int r = 0; r < 2; ++r) {
            bool any = false;
            for (std::size_t i : grows)
                if (ds.r(i) == r) { any = true; break; }
            if (!any)
                throw no_overlap_error("empty stratum (r=" + std::to_string(r) + ", group=" +
                                       b.groups_[g] + "); use the robust-bounds path");
        }

        // Selector per model: which rows train it and what the label is.
        struct ModelDef {
            NuisanceBundle::Fn fn;
            std::function<bool(std::size_t)> in;
            std::function<double(std::size_t)> label;
            Link link;
        };
        const std::vector<ModelDef> defs = {
            {NuisanceBundle::E1, [&](std::size_t) { return true; },
             [&](std::size_t i) { return double(ds.r(i)); }, Link::logistic},
            {NuisanceBundle::P11, [&](std::size_t i) { return ds.r(i) == 1; },
             [&](std::size_t i) { return double(ds.t(i)); }, Link::logistic},
            {NuisanceBundle::P10, [&](std::size_t i) { return ds.r(i) == 0; },
             [&](std::size_t i) { return double(ds.t(i)); }, Link::logistic},
            {NuisanceBundle::MU1, [&](std::size_t i) { return ds.t(i) == 1; },
             [&](std::size_t i) { return ds.y(i); }, mu_link},
            {NuisanceBundle::MU0, [&](std::size_t i) { return ds.t(i) == 0; },
             [&](std::size_t i) { return ds.y(i); }, mu_link},
            {NuisanceBundle::P1M, [&](std::size_t) { return true; },
             [&](std::size_t i) { return double(ds.t(i)); }, Link::logistic},
        };

        for (const auto& def : defs) {
            // Full-data model (for arbitrary-point prediction).
            StratumData full;
            for (std::size_t i : grows) {
                if (!def.in(i)) continue;
                auto xi = ds.x(i);
                full.X.insert(full.X.end(), xi.begin(), xi.end());
                full.label.push_back(def.label(i));
            }
            if (full.label.empty())
                throw no_overlap_error("no training rows for model " + std::to_string(def.fn) +
                                       " in group " + b.groups_[g]);
            Predictor p;
            p.kind = Predictor::Kind::linear;
            p.model = fit_predictor(full, d, def.link, cfg.reg, cfg.budget);
            if (!p.model.converged) b.converged_ = false;
            b.full_[g][def.fn] = p;

            // Cross-fitted row predictions.
            if (K == 1) {
                for (std::size_t i : grows) {
                    double v = p.model.predict(ds.x(i));
                    if (def.link == Link::logistic || (ds.y_binary() && def.link == mu_link))
                        v = std::min(std::max(v, cfg.clip), 1.0 - cfg.clip);
                    b.rows_[def.fn][i] = v;
                }
            } else {
                for (int f = 0; f < K; ++f) {
                    StratumData train;
                    for (std::size_t i : grows) {
                        if (b.fold_[i] == f || !def.in(i)) continue;
                        auto xi = ds.x(i);
                        train.X.insert(train.X.end(), xi.begin(), xi.end());
                        train.label.push_back(def.label(i));
                    }
                    if (train.label.empty())
                        throw no_overlap_error("fold " + std::to_string(f) +
                                               " complement has no rows for a model in group " +
                                               b.groups_[g]);
                    LinearModel m = fit_predictor(train, d, def.link, cfg.reg, cfg.budget);
                    if (!m.converged) b.converged_ = false;
                    for (std::size_t i : grows) {
                        if (b.fold_[i] != f) continue;
                        double v = m.predict(ds.x(i));
                        if (def.link == Link::logistic)
                            v = std::min(std::max(v, cfg.clip), 1.0 - cfg.clip);
                        b.rows_[def.fn][i] = v;
                    }
                }
            }
        }

        // Group-membership model, one-vs-rest over the whole dataset.
        if (cfg.fit_membership) {
            StratumData mem;
            mem.X.reserve(n * d);
            for (std::size_t i = 0; i < n; ++i) {
                auto xi = ds.x(i);
                mem.X.insert(mem.X.end(), xi.begin(), xi.end());
                mem.label.push_back(ds.group(i) == g ? 1.0 : 0.0);
            }
            Predictor pm;
            pm.kind = Predictor::Kind::linear;
            pm.model = fit_predictor(mem, d, Link::logistic, std::max(cfg.reg, 1e-8), cfg.budget);
            b.membership_[g] = pm;
        } else {
            // uninformative fallback: uniform membership
            Predictor pm;
            pm.kind = Predictor::Kind::linear;
            pm.model.link = Link::logistic;
            pm.model.w.assign(d + 1, 0.0);
            b.membership_[g] = pm;
        }
    }
    return b;
}

// ------------------------------ serialization ------------------------------

namespace {
const char* fn_name(int f) {
    static const char* names[NuisanceBundle::N_FN] = {"e1", "p11", "p10", "mu1", "mu0", "p1"};
    return names[f];
}
int fn_index(const std::string& s) {
    for (int f = 0; f < NuisanceBundle::N_FN; ++f)
        if (s == fn_name(f)) return f;
    if (s == "membership") return NuisanceBundle::N_FN;
    throw parse_error("bundle import: unknown model name " + s);
}

void export_predictor(std::ostream& out, const Predictor& p) {
    if (p.kind == Predictor::Kind::linear) {
        out << "linear " << (p.model.link == Link::logistic ? "logistic" : "identity");
        for (double w : p.model.w) out << " " << format_double(w);
        out << "\n";
    } else {
        out << "table " << p.table.size() << "\n";
        for (const auto& [k, v] : p.table) out << k << " " << format_double(v) << "\n";
    }
}

Predictor import_predictor(std::istream& in) {
    std::string kind;
    in >> kind;
    Predictor p;
    if (kind == "linear") {
        p.kind = Predictor::Kind::linear;
        std::string link;
        in >> link;
        p.model.link = link == "logistic" ? Link::logistic : Link::identity;
        std::string rest;
        std::getline(in, rest);
        std::istringstream is(rest);
        double w;
        while (is >> w) p.model.w.push_back(w);
    } else if (kind == "table") {
        p.kind = Predictor::Kind::table;
        std::size_t m;
        in >> m;
        for (std::size_t i = 0; i < m; ++i) {
            std::string key;
            double v;
            in >> key >> v;
            p.table[key] = v;
        }
    } else {
        throw parse_error("bundle import: unknown predictor kind " + kind);
    }
    return p;
}
}  // namespace

void NuisanceBundle::export_text(std::ostream& out) const {
    out << "nuisance_bundle clip=" << format_double(clip_) << " ybinary=" << (y_binary_ ? 1 : 0)
        << " groups=";
    for (std::size_t g = 0; g < groups_.size(); ++g) out << (g ? "," : "") << groups_[g];
    out << "\n";
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        out << "pgroup " << groups_[g] << " " << format_double(p_group_[g]) << "\n";
        for (int f = 0; f < N_FN; ++f) {
            out << "model " << fn_name(f) << " " << groups_[g] << " ";
            export_predictor(out, full_[g][f]);
        }
        out << "model membership " << groups_[g] << " ";
        export_predictor(out, membership_[g]);
    }
}

NuisanceBundle NuisanceBundle::import_text(std::istream& in, const Dataset& ds) {
    std::string tok;
    in >> tok;
    if (tok != "nuisance_bundle") throw parse_error("bundle import: bad header");
    double clip = 0.01;
    bool ybin = true;
    std::vector<std::string> groups;
    while (in >> tok && tok.find('=') != std::string::npos) {
        auto eq = tok.find('=');
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "clip") clip = std::stod(val);
        else if (key == "ybinary") ybin = val == "1";
        else if (key == "groups") groups = split(val, ',');
    }
    if (groups != ds.group_set())
        throw domain_error("bundle import: group set differs from dataset");

    BundleBuilder bb(ds, clip);
    NuisanceBundle tmp = bb.build();
    tmp.y_binary_ = ybin;
    // tok currently holds the first directive ("pgroup" or "model")
    do {
        if (tok == "pgroup") {
            std::string glabel;
            double p;
            in >> glabel >> p;
            // group frequencies are recomputed from the dataset; value kept for the record
            (void)p;
        } else if (tok == "model") {
            std::string name, glabel;
            in >> name >> glabel;
            const int f = fn_index(name);
            const int g = ds.group_index(glabel);
            if (g < 0) throw domain_error("bundle import: unknown group " + glabel);
            Predictor p = import_predictor(in);
            if (f == N_FN) tmp.membership_[g] = std::move(p);
            else tmp.full_[g][f] = std::move(p);
        } else {
            throw parse_error("bundle import: unexpected token " + tok);
        }
    } while (in >> tok);

    // Row predictions come from the imported full-data models.
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (int f = 0; f < N_FN; ++f)
            tmp.rows_[f][i] = tmp.at(static_cast<Fn>(f), ds.x(i), ds.group(i));
    return tmp;
}

}  // namespace encpol
