#include "encpol/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace encpol {

void DGPSpec::check() const {
    if (cells.empty()) throw spec_error("dgp: no cells");
    const std::size_t d = cells.front().x.size();
    double tot = 0.0;
    for (const auto& c : cells) {
        if (c.x.size() != d) throw spec_error("dgp: covariate dimension mismatch across cells");
        if (!(c.mass >= 0.0)) throw spec_error("dgp: negative cell mass");
        tot += c.mass;
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(c.e1) || !prob(c.p11) || !prob(c.p10))
            throw spec_error("dgp: propensities must lie in [0,1]");
        if (outcome == OutcomeKind::bernoulli && (!prob(c.mu1) || !prob(c.mu0)))
            throw spec_error("dgp: bernoulli outcomes need mu_t in [0,1]");
        if (!std::isfinite(c.mu1) || !std::isfinite(c.mu0))
            throw spec_error("dgp: non-finite mean outcome");
    }
    if (std::abs(tot - 1.0) > 1e-12) throw spec_error("dgp: cell masses must sum to 1");
    if (outcome == OutcomeKind::gaussian && !(sigma >= 0.0))
        throw spec_error("dgp: gaussian sigma must be nonnegative");
}

std::vector<std::string> DGPSpec::groups() const {
    std::vector<std::string> out;
    for (const auto& c : cells)
        if (std::find(out.begin(), out.end(), c.group) == out.end()) out.push_back(c.group);
    return out;
}

double DGPSpec::group_mass(const std::string& g) const {
    double m = 0.0;
    for (const auto& c : cells)
        if (c.group == g) m += c.mass;
    return m;
}

void DGPSpec::save(std::ostream& out) const {
    out << "dgp " << (outcome == OutcomeKind::bernoulli ? "bernoulli" : "gaussian");
    if (outcome == OutcomeKind::gaussian) out << " " << format_double(sigma);
    out << "\n";
    for (const auto& c : cells) {
        out << format_double(c.mass);
        for (double v : c.x) out << " " << format_double(v);
        out << " " << c.group << " " << format_double(c.e1) << " " << format_double(c.p11) << " "
            << format_double(c.p10) << " " << format_double(c.mu1) << " " << format_double(c.mu0)
            << "\n";
    }
}

DGPSpec DGPSpec::load(std::istream& in) {
    DGPSpec s;
    std::string line;
    if (!std::getline(in, line)) throw parse_error("dgp: empty input");
    {
        std::istringstream hs(line);
        std::string tag, kind;
        hs >> tag >> kind;
        if (tag != "dgp") throw parse_error("dgp: bad header");
        if (kind == "bernoulli") {
            s.outcome = OutcomeKind::bernoulli;
        } else if (kind == "gaussian") {
            s.outcome = OutcomeKind::gaussian;
            if (!(hs >> s.sigma)) throw parse_error("dgp: gaussian header needs sigma");
        } else {
            throw parse_error("dgp: unknown outcome kind " + kind);
        }
    }
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::vector<std::string> toks;
        std::string t;
        while (ls >> t) toks.push_back(t);
        if (toks.size() < 8) throw parse_error("dgp: cell line needs mass, covariates, group and 5 parameters");
        DGPCell c;
        c.mass = std::stod(toks[0]);
        const std::size_t ncov = toks.size() - 7;
        for (std::size_t j = 0; j < ncov; ++j) c.x.push_back(std::stod(toks[1 + j]));
        c.group = toks[1 + ncov];
        c.e1 = std::stod(toks[2 + ncov]);
        c.p11 = std::stod(toks[3 + ncov]);
        c.p10 = std::stod(toks[4 + ncov]);
        c.mu1 = std::stod(toks[5 + ncov]);
        c.mu0 = std::stod(toks[6 + ncov]);
        s.cells.push_back(std::move(c));
    }
    s.check();
    return s;
}

void DGPSpec::save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write dgp file: " + path);
    save(out);
}

DGPSpec DGPSpec::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open dgp file: " + path);
    return load(in);
}

Dataset generate(const DGPSpec& spec, std::size_t n, std::uint64_t seed) {
    spec.check();
    if (n < 1) throw spec_error("generate: n must be >= 1");
    std::vector<double> cum;
    cum.reserve(spec.cells.size());
    double acc = 0.0;
    for (const auto& c : spec.cells) {
        acc += c.mass;
        cum.push_back(acc);
    }
    cum.back() = 1.0;

    std::vector<std::string> names;
    for (std::size_t j = 0; j < spec.dim(); ++j) names.push_back("x" + std::to_string(j));
    DatasetBuilder b(names);
    b.declare_groups(spec.groups());

    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        const std::size_t ci =
            std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
        const DGPCell& c = spec.cells[std::min(ci, spec.cells.size() - 1)];
        const int r = rng.bernoulli(c.e1) ? 1 : 0;
        const int t = rng.bernoulli(r == 1 ? c.p11 : c.p10) ? 1 : 0;
        const double mu = t == 1 ? c.mu1 : c.mu0;
        double y;
        if (spec.outcome == OutcomeKind::bernoulli) {
            y = rng.bernoulli(mu) ? 1.0 : 0.0;
        } else {
            y = rng.gaussian(mu, spec.sigma);
        }
        b.add_row(c.x, c.group, r, t, y);
    }
    return b.finalize();
}

NuisanceBundle oracle_bundle(const DGPSpec& spec, const Dataset& ds) {
    spec.check();
    const auto groups = ds.group_set();
    BundleBuilder bb(ds, 1e-12);

    // Lookup tables per group and function; group frequencies from masses.
    std::vector<double> gmass(groups.size(), 0.0);
    std::vector<std::array<Predictor, NuisanceBundle::N_FN>> preds(groups.size());
    std::vector<Predictor> member(groups.size());
    std::map<std::string, double> xmass;  // total mass at covariate point
    for (auto& parr : preds)
        for (auto& p : parr) p.kind = Predictor::Kind::table;
    for (auto& p : member) p.kind = Predictor::Kind::table;

    for (const auto& c : spec.cells) {
        int g = -1;
        for (std::size_t k = 0; k < groups.size(); ++k)
            if (groups[k] == c.group) g = static_cast<int>(k);
        if (g < 0) continue;  // cell group not present in the dataset
        gmass[g] += c.mass;
        const std::string key = covariate_key(c.x);
        const double p1m = c.e1 * c.p11 + (1.0 - c.e1) * c.p10;
        preds[g][NuisanceBundle::E1].table[key] = c.e1;
        preds[g][NuisanceBundle::P11].table[key] = c.p11;
        preds[g][NuisanceBundle::P10].table[key] = c.p10;
        preds[g][NuisanceBundle::MU1].table[key] = c.mu1;
        preds[g][NuisanceBundle::MU0].table[key] = c.mu0;
        preds[g][NuisanceBundle::P1M].table[key] = p1m;
        member[g].table[key] = c.mass;
        xmass[key] += c.mass;
    }
    const double gtot = pairwise_sum(gmass);
    if (gtot <= 0.0) throw domain_error("oracle bundle: dataset groups not covered by dgp");

    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (int f = 0; f < NuisanceBundle::N_FN; ++f)
            bb.set_predictor(static_cast<int>(g), static_cast<NuisanceBundle::Fn>(f), preds[g][f]);
        // membership tables hold m(g,x) = mass(x,g); the bundle normalizes at query
        bb.set_membership(static_cast<int>(g), member[g]);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (int f = 0; f < NuisanceBundle::N_FN; ++f) {
            const auto fn = static_cast<NuisanceBundle::Fn>(f);
            bb.set_row(i, fn, preds[ds.group(i)][f].eval(ds.x(i)));
        }
    }
    return bb.build();
}

// ----------------------------- exact oracles -------------------------------

namespace {

double cell_value_at(const DGPCell& c, double pi1, const CostSpec& cost) {
    // sum over r of pi_r * sum over t of p_{t|r} * (w_y mu_t + w_t t + w_r r)
    auto value_r = [&](int r) {
        const double p1 = r == 1 ? c.p11 : c.p10;
        const double u1 = cost.w_y * c.mu1 + cost.w_t + cost.w_r * r;
        const double u0 = cost.w_y * c.mu0 + cost.w_r * r;
        return p1 * u1 + (1.0 - p1) * u0;
    };
    return pi1 * value_r(1) + (1.0 - pi1) * value_r(0);
}

double cell_takeup_at(const DGPCell& c, double pi1) {
    return pi1 * (c.p11 - c.p10) + c.p10;
}

}  // namespace

double oracle_value(const DGPSpec& spec, const RandomizedPolicy& pi, const CostSpec& cost,
                    const PolicyEvalContext& ctx) {
    spec.check();
    std::vector<double> terms;
    terms.reserve(spec.cells.size());
    for (const auto& c : spec.cells) {
        const double p1 = policy_prob1(pi, c.x, c.group, ctx);
        terms.push_back(c.mass * cell_value_at(c, p1, cost));
    }
    return pairwise_sum(terms);
}

double oracle_takeup(const DGPSpec& spec, const RandomizedPolicy& pi, const std::string& group,
                     const PolicyEvalContext& ctx) {
    spec.check();
    const double gm = spec.group_mass(group);
    if (gm <= 0.0) throw domain_error("oracle takeup: group '" + group + "' not in the process");
    std::vector<double> terms;
    for (const auto& c : spec.cells) {
        if (c.group != group) continue;
        const double p1 = policy_prob1(pi, c.x, c.group, ctx);
        terms.push_back(c.mass / gm * cell_takeup_at(c, p1));
    }
    return pairwise_sum(terms);
}

double oracle_disparity(const DGPSpec& spec, const RandomizedPolicy& pi,
                        const PolicyEvalContext& ctx) {
    const auto gs = spec.groups();
    if (gs.size() != 2) throw domain_error("oracle disparity needs exactly two groups");
    return oracle_takeup(spec, pi, gs[0], ctx) - oracle_takeup(spec, pi, gs[1], ctx);
}

namespace {

struct EnumBest {
    bool found = false;
    double value = -std::numeric_limits<double>::infinity();
    std::uint32_t mask = 0;
    int ones = 0;
    double disparity = 0.0;
};

// Prefer value, then fewer recommendations, then the lexicographically
// smaller assignment read in cell order (cell 0 first).
bool lex_smaller(std::uint32_t a, std::uint32_t b, int m) {
    for (int i = 0; i < m; ++i) {
        const int ba = (a >> i) & 1, bb = (b >> i) & 1;
        if (ba != bb) return ba < bb;
    }
    return false;
}

bool better(const EnumBest& cand, const EnumBest& cur, int m) {
    if (!cur.found) return cand.found;
    if (cand.value != cur.value) return cand.value > cur.value;
    if (cand.ones != cur.ones) return cand.ones < cur.ones;
    return lex_smaller(cand.mask, cur.mask, m);
}

}  // namespace

OracleOptimum oracle_constrained_optimum(const DGPSpec& spec, const CostSpec& cost, double eps,
                                         bool two_sided, int threads) {
    spec.check();
    const int m = static_cast<int>(spec.cells.size());
    if (m > 20) throw domain_error("enumeration oracle caps at 20 cells");
    const auto gs = spec.groups();
    if (gs.size() != 2) throw domain_error("enumeration oracle needs exactly two groups");
    const double ma = spec.group_mass(gs[0]), mb = spec.group_mass(gs[1]);

    // Per-cell contributions at pi=0 and pi=1.
    std::vector<double> v0(m), v1(m), dsp0(m), dsp1(m);
    for (int i = 0; i < m; ++i) {
        const auto& c = spec.cells[i];
        v0[i] = c.mass * cell_value_at(c, 0.0, cost);
        v1[i] = c.mass * cell_value_at(c, 1.0, cost);
        const double sign = c.group == gs[0] ? 1.0 / ma : -1.0 / mb;
        dsp0[i] = sign * c.mass * cell_takeup_at(c, 0.0);
        dsp1[i] = sign * c.mass * cell_takeup_at(c, 1.0);
    }

    const std::uint64_t total = 1ull << m;
    auto scan = [&](std::uint64_t lo, std::uint64_t hi) {
        EnumBest best;
        double dmin = std::numeric_limits<double>::infinity();
        double dmax = -std::numeric_limits<double>::infinity();
        for (std::uint64_t mask = lo; mask < hi; ++mask) {
            double val = 0.0, dsp = 0.0;
            int ones = 0;
            for (int i = 0; i < m; ++i) {
                if ((mask >> i) & 1ull) {
                    val += v1[i];
                    dsp += dsp1[i];
                    ++ones;
                } else {
                    val += v0[i];
                    dsp += dsp0[i];
                }
            }
            dmin = std::min(dmin, dsp);
            dmax = std::max(dmax, dsp);
            const bool feasible = two_sided ? std::abs(dsp) <= eps + 1e-12 : dsp <= eps + 1e-12;
            if (!feasible) continue;
            EnumBest cand{true, val, static_cast<std::uint32_t>(mask), ones, dsp};
            if (better(cand, best, m)) best = cand;
        }
        return std::tuple<EnumBest, double, double>(best, dmin, dmax);
    };

    EnumBest best;
    double dmin = std::numeric_limits<double>::infinity();
    double dmax = -std::numeric_limits<double>::infinity();
    const int nthreads = std::max(1, std::min<int>(threads, 16));
    if (nthreads == 1 || total < 4096) {
        std::tie(best, dmin, dmax) = scan(0, total);
    } else {
        std::vector<std::future<std::tuple<EnumBest, double, double>>> futs;
        const std::uint64_t chunk = (total + nthreads - 1) / nthreads;
        for (int k = 0; k < nthreads; ++k) {
            const std::uint64_t lo = k * chunk;
            const std::uint64_t hi = std::min<std::uint64_t>(total, lo + chunk);
            if (lo >= hi) break;
            futs.push_back(std::async(std::launch::async, scan, lo, hi));
        }
        for (auto& f : futs) {
            auto [b, lo_d, hi_d] = f.get();
            dmin = std::min(dmin, lo_d);
            dmax = std::max(dmax, hi_d);
            if (better(b, best, m)) best = b;
        }
    }

    if (!best.found)
        throw infeasibility_error(
            "constraint level " + format_double(eps) + " infeasible; achievable disparity in [" +
                format_double(dmin) + ", " + format_double(dmax) + "]",
            dmin, dmax);

    std::map<std::string, int> table;
    for (int i = 0; i < m; ++i)
        table[cell_key(spec.cells[i].x, spec.cells[i].group)] =
            static_cast<int>((best.mask >> i) & 1ull);
    OracleOptimum out;
    out.policy = PolicySpec::make_tabular(std::move(table));
    out.value = best.value;
    out.disparity = best.disparity;
    return out;
}

std::pair<double, double> oracle_disparity_range(const DGPSpec& spec) {
    spec.check();
    const auto gs = spec.groups();
    if (gs.size() != 2) throw domain_error("disparity range needs exactly two groups");
    const double ma = spec.group_mass(gs[0]), mb = spec.group_mass(gs[1]);
    double lo = 0.0, hi = 0.0;
    for (const auto& c : spec.cells) {
        const double sign = c.group == gs[0] ? 1.0 / ma : -1.0 / mb;
        const double d0 = sign * c.mass * cell_takeup_at(c, 0.0);
        const double d1 = sign * c.mass * cell_takeup_at(c, 1.0);
        lo += std::min(d0, d1);
        hi += std::max(d0, d1);
    }
    return {lo, hi};
}

}  // namespace encpol
