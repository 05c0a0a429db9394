#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "encpol/dgp.hpp"
#include "encpol/redfair.hpp"
#include "encpol/threshold.hpp"

using namespace encpol;

namespace {

DGPSpec grid_dgp(std::uint64_t seed, int points_per_group) {
    Rng rng(seed);
    DGPSpec s;
    const int m = 2 * points_per_group;
    for (int k = 0; k < points_per_group; ++k) {
        for (const char* g : {"a", "b"}) {
            DGPCell c;
            c.x = {double(k)};
            c.group = g;
            c.mass = 1.0 / m;
            c.e1 = rng.uniform(0.25, 0.75);
            c.p10 = rng.uniform(0.05, 0.45);
            c.p11 = c.p10 + rng.uniform(0.05, 0.5);
            c.mu1 = rng.uniform(0.1, 0.9);
            c.mu0 = rng.uniform(0.1, 0.9);
            s.cells.push_back(std::move(c));
        }
    }
    return s;
}

Dataset census(const DGPSpec& spec, int per_unit = 64) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < spec.dim(); ++j) names.push_back("x" + std::to_string(j));
    DatasetBuilder b(names);
    b.declare_groups(spec.groups());
    Rng rng(7);
    for (const auto& c : spec.cells) {
        const int copies = int(std::lround(c.mass * per_unit));
        for (int k = 0; k < copies; ++k) {
            const int r = rng.bernoulli(c.e1) ? 1 : 0;
            const int t = rng.bernoulli(r ? c.p11 : c.p10) ? 1 : 0;
            const double y = rng.bernoulli(t ? c.mu1 : c.mu0) ? 1.0 : 0.0;
            b.add_row(c.x, c.group, r, t, y);
        }
    }
    return b.finalize();
}

RedfairParams quick_params() {
    RedfairParams p;
    p.psi = PseudoKind::DM;
    p.policy_class = RedfairParams::PolicyClass::tabular;
    p.cprime = 0.0;
    p.nu = 1e-4;
    p.B = 100.0;
    p.omega = std::numeric_limits<double>::quiet_NaN();
    p.max_iterations = 5000;
    return p;
}

}  // namespace

TEST_CASE("treatment parity shapes") {
    const auto spec = grid_dgp(1, 4);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);
    const auto sys = make_treatment_parity(ds, eta, 0.05);
    CHECK(sys.K() == 4);
    CHECK(sys.J() == 3);
    CHECK(sys.d == std::vector<double>{0.05, 0.05, 0.05, 0.05});
    // moment value at always-recommend tracks the exact take-up
    PolicyEvalContext ctx;
    ctx.eta = &eta;
    const auto pi1 = policy_prob1_rows(RandomizedPolicy(PolicySpec::make_constant(1)), ds, ctx);
    const auto h = sys.moment_values(pi1);
    CHECK(h[0] == doctest::Approx(oracle_takeup(spec, PolicySpec::make_constant(1), "a"))
                       .epsilon(1e-9));
}

TEST_CASE("constant responsivities make the parity constraints vacuous") {
    DGPSpec s;
    s.cells = {
        {{0.0}, "a", 0.5, 0.5, 0.4, 0.4, 0.9, 0.1},
        {{0.0}, "b", 0.5, 0.5, 0.4, 0.4, 0.7, 0.2},
    };
    const auto ds = census(s, 64);
    const auto eta = oracle_bundle(s, ds);
    const auto sys = make_treatment_parity(ds, eta, 0.0);
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> pi1(ds.size());
        for (auto& p : pi1) p = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const auto h = sys.moment_values(pi1);
        CHECK(h[0] == doctest::Approx(h[2]).epsilon(1e-12));
        CHECK(h[1] == doctest::Approx(h[2]).epsilon(1e-12));
        for (double g : sys.constraint_values(pi1)) CHECK(g <= 1e-12);
    }
}

TEST_CASE("responder parity") {
    const auto spec = grid_dgp(5, 3);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);

    // constant effect within each group reduces to treatment parity
    DGPSpec flat = spec;
    for (auto& c : flat.cells) {
        c.mu1 = c.group == "a" ? 0.7 : 0.6;
        c.mu0 = c.group == "a" ? 0.3 : 0.4;
    }
    const auto dsf = census(flat, 64);
    const auto etaf = oracle_bundle(flat, dsf);
    const auto tp = make_treatment_parity(dsf, etaf, 0.1);
    const auto rp = make_responder_parity(dsf, etaf, 0.1);
    Rng rng(13);
    std::vector<double> pi1(dsf.size());
    for (auto& p : pi1) p = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const auto ht = tp.moment_values(pi1);
    const auto hr = rp.moment_values(pi1);
    for (std::size_t j = 0; j < ht.size(); ++j)
        CHECK(ht[j] == doctest::Approx(hr[j]).epsilon(1e-9));

    // group moment equals the responder take-up estimator
    const auto sys = make_responder_parity(ds, eta, 0.1);
    const RandomizedPolicy all1(PolicySpec::make_constant(1));
    PolicyEvalContext ctx;
    ctx.eta = &eta;
    const auto pall = policy_prob1_rows(all1, ds, ctx);
    const auto h = sys.moment_values(pall);
    const auto est = responder_takeup(ds, all1, eta, "a");
    CHECK(h[0] == doctest::Approx(est.point).epsilon(1e-9));

    // negative mean effect is rejected
    DGPSpec bad = spec;
    for (auto& c : bad.cells)
        if (c.group == "b") {
            c.mu1 = 0.2;
            c.mu0 = 0.8;
        }
    const auto dsb = census(bad, 64);
    const auto etab = oracle_bundle(bad, dsb);
    CHECK_THROWS_AS(make_responder_parity(dsb, etab, 0.1), monotonicity_error);
}

TEST_CASE("single group parity is trivially satisfied") {
    DGPSpec s;
    s.cells = {
        {{0.0}, "a", 0.5, 0.5, 0.8, 0.2, 0.9, 0.1},
        {{1.0}, "a", 0.5, 0.5, 0.6, 0.3, 0.4, 0.6},
    };
    const auto ds = census(s, 64);
    const auto eta = oracle_bundle(s, ds);
    const auto sys = make_responder_parity(ds, eta, 0.0);
    CHECK(sys.K() == 2);
    std::vector<double> pi1(ds.size(), 1.0);
    for (double g : sys.constraint_values(pi1)) CHECK(std::abs(g) <= 1e-12);
}

TEST_CASE("reduction weights") {
    const auto spec = grid_dgp(7, 3);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);
    const auto sys = make_treatment_parity(ds, eta, 0.05);
    const CostSpec cost{1.0, 0.0, 0.0};

    // zero multipliers reproduce the raw pseudo-outcome
    std::vector<double> lam(4, 0.0);
    for (std::size_t i = 0; i < ds.size(); i += 11) {
        const auto [w, s] = lagrangian_weights(ds, i, eta, lam, sys, PseudoKind::DM, cost);
        const double psi = pseudo_outcome(ds, i, eta, PseudoKind::DM, cost);
        CHECK(w == doctest::Approx(std::abs(psi)).epsilon(1e-12));
        CHECK(s == (psi > 0 ? 1 : -1));
    }

    // printed arithmetic: psi .3, lambda_a .2, p_a .5, lift .5 keeps .3
    DGPSpec hand;
    hand.cells = {
        {{0.0}, "a", 0.5, 0.5, 0.7, 0.2, 0.8, 0.2},  // lift .5, tau .6 -> psi .3
        {{0.0}, "b", 0.5, 0.5, 0.7, 0.2, 0.8, 0.2},
    };
    const auto dsh = census(hand, 64);
    const auto etah = oracle_bundle(hand, dsh);
    const auto sysh = make_treatment_parity(dsh, etah, 0.0);
    std::vector<double> lam2 = {0.2, 0.0, 0.0, 0.0};  // lambda_(a,+) = .2
    std::size_t row_a = 0;
    while (dsh.group_label(row_a) != "a") ++row_a;
    const auto [w2, s2] = lagrangian_weights(dsh, row_a, etah, lam2, sysh, PseudoKind::DM, cost);
    CHECK(w2 == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(s2 == 1);

    // an exactly zero weight labels as do-not-recommend
    DGPSpec flat0;
    flat0.cells = {
        {{0.0}, "a", 0.5, 0.5, 0.7, 0.2, 0.5, 0.5},  // tau = 0 so psi = 0
        {{0.0}, "b", 0.5, 0.5, 0.7, 0.2, 0.5, 0.5},
    };
    const auto ds0 = census(flat0, 64);
    const auto eta0 = oracle_bundle(flat0, ds0);
    const auto sys0 = make_treatment_parity(ds0, eta0, 0.0);
    const auto [w0, s0] =
        lagrangian_weights(ds0, 0, eta0, std::vector<double>(4, 0.0), sys0, PseudoKind::DM, cost);
    CHECK(w0 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s0 == -1);

    // responder weights follow the scaled formula
    const auto sysr = make_responder_parity(ds, eta, 0.05);
    std::vector<double> lam3 = {0.1, 0.0, 0.05, 0.0};
    for (std::size_t i = 0; i < ds.size(); i += 23) {
        const auto [w3, s3] = lagrangian_weights(ds, i, eta, lam3, sysr, PseudoKind::DM, cost);
        const int g = ds.group(i);
        const double lam_g = lam3[2 * g] - lam3[2 * g + 1];
        const double lam_sum = lam3[0] - lam3[1] + lam3[2] - lam3[3];
        // group-mean effect over the group rows
        std::vector<double> eff;
        for (std::size_t k = 0; k < ds.size(); ++k)
            if (ds.group(k) == g) eff.push_back(eta.mu1(k) - eta.mu0(k));
        const double scale = (eta.mu1(i) - eta.mu0(i)) / mean(eff);
        const double psit = pseudo_outcome(ds, i, eta, PseudoKind::DM, cost) +
                            lam_g / eta.p_group(g) * eta.lift(i) * scale - lam_sum;
        CHECK(w3 == doctest::Approx(std::abs(psit)).epsilon(1e-9));
        CHECK(s3 == (psit > 0 ? 1 : -1));
    }
}

TEST_CASE("tabular best response at zero multipliers is the pointwise rule") {
    const auto spec = grid_dgp(9, 4);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);
    const auto sys = make_treatment_parity(ds, eta, 0.05);
    const CostSpec cost{1.0, -0.1, 0.0};
    RedfairParams params = quick_params();
    std::vector<double> lam(4, 0.0);
    const auto pol = best_response_policy(lam, ds, eta, sys, cost, params);
    PolicyEvalContext ctx;
    ctx.eta = &eta;
    ctx.cost = &cost;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double tau = cost.w_y * (eta.mu1(i) - eta.mu0(i)) + cost.w_t;
        const int want = eta.lift(i) * tau > 0 ? 1 : 0;
        CHECK(policy_prob1(pol, ds.x(i), ds.group_label(i), ctx) == want);
    }
}

TEST_CASE("uniformly positive weights recommend everyone") {
    DGPSpec s;
    s.cells = {
        {{0.0}, "a", 0.5, 0.5, 0.9, 0.2, 0.9, 0.1},
        {{0.0}, "b", 0.5, 0.5, 0.9, 0.2, 0.9, 0.1},
    };
    const auto ds = census(s, 64);
    const auto eta = oracle_bundle(s, ds);
    const auto sys = make_treatment_parity(ds, eta, 1.0);
    const CostSpec cost{1.0, 0.0, 0.0};
    RedfairParams params = quick_params();
    const auto pol = best_response_policy(std::vector<double>(4, 0.0), ds, eta, sys, cost, params);
    PolicyEvalContext ctx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(policy_prob1(pol, ds.x(i), ds.group_label(i), ctx) == 1.0);
}

TEST_CASE("linear class drives the surrogate to separability") {
    // scores separable in x: positive iff x > 0.5
    DGPSpec s;
    s.cells = {
        {{0.0}, "a", 0.5, 0.5, 0.8, 0.4, 0.2, 0.8},  // negative effect
        {{1.0}, "a", 0.5, 0.5, 0.8, 0.4, 0.9, 0.1},  // positive effect
    };
    const auto ds = census(s, 64);
    const auto eta = oracle_bundle(s, ds);
    const auto sys = make_treatment_parity(ds, eta, 10.0);
    const CostSpec cost{1.0, 0.0, 0.0};
    RedfairParams params = quick_params();
    params.policy_class = RedfairParams::PolicyClass::linear;
    params.budget.max_iterations = 20000;
    const auto pol = best_response_policy(std::vector<double>(2 * 1 + 2, 0.0), ds, eta, sys, cost,
                                          params);
    PolicyEvalContext ctx;
    CHECK(policy_prob1(pol, s.cells[0].x, "a", ctx) == 0.0);
    CHECK(policy_prob1(pol, s.cells[1].x, "a", ctx) == 1.0);
}

TEST_CASE("multiplier best responses") {
    std::vector<double> d = {0.0, 0.0};
    CHECK(best_response_lambda(std::vector<double>{-0.1, -0.2}, d, 2.0) ==
          std::vector<double>{0.0, 0.0});
    CHECK(best_response_lambda(std::vector<double>{0.1, 0.3}, d, 2.0) ==
          std::vector<double>{0.0, 2.0});
    CHECK(best_response_lambda(std::vector<double>{0.3, 0.3}, d, 2.0) ==
          std::vector<double>{2.0, 0.0});
}

TEST_CASE("no constraints reduces to a single best response") {
    const auto spec = grid_dgp(15, 4);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);
    const CostSpec cost{1.0, -0.1, 0.0};
    ConstraintSystem sys;  // K = 0
    RedfairParams params = quick_params();
    const auto res = redfair(ds, sys, eta, cost, params);
    CHECK(res.converged);
    CHECK(res.gap == 0.0);
    REQUIRE(res.Q.components.size() == 1);
    const auto direct = best_response_policy({}, ds, eta, sys, cost, params);
    CHECK(res.Q.components[0].second == direct);
}

TEST_CASE("first multiplier iterate matches the softmax form") {
    // theta = 0, K = 1, B = 2: lambda = 2 e^0 / (1 + e^0) = 1
    DGPSpec s;
    s.cells = {
        {{0.0}, "a", 0.5, 0.5, 0.9, 0.1, 0.9, 0.1},
        {{0.0}, "b", 0.5, 0.5, 0.3, 0.1, 0.9, 0.1},
    };
    const auto ds = census(s, 64);
    const auto eta = oracle_bundle(s, ds);
    auto sys = make_treatment_parity(ds, eta, 0.0);
    // keep only the first row to get K = 1
    sys.M.resize(1);
    sys.d.resize(1);
    sys.row_names.resize(1);
    const CostSpec cost{1.0, 0.0, 0.0};
    RedfairParams params = quick_params();
    params.B = 2.0;
    params.max_iterations = 1;
    const auto res = redfair(ds, sys, eta, cost, params);
    REQUIRE_FALSE(res.trace.empty());
    CHECK(res.trace[0].lambda[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("multiplier iterates stay inside the ball") {
    const auto spec = grid_dgp(17, 4);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);
    const auto sys = make_treatment_parity(ds, eta, 0.02);
    const CostSpec cost{1.0, -0.1, 0.0};
    RedfairParams params = quick_params();
    params.max_iterations = 200;
    params.nu = 1e-9;  // force many iterations
    const auto res = redfair(ds, sys, eta, cost, params);
    for (const auto& row : res.trace) {
        double l1 = 0.0;
        for (double l : row.lambda) l1 += std::abs(l);
        CHECK(l1 <= params.B + 1e-9);
    }
}

TEST_CASE("gap audit reproduces the reported gap") {
    const auto spec = grid_dgp(19, 4);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);
    const auto sys = make_treatment_parity(ds, eta, 0.03);
    const CostSpec cost{1.0, -0.1, 0.0};
    RedfairParams params = quick_params();
    const auto res = redfair(ds, sys, eta, cost, params);
    const double audited = saddle_gap(ds, sys, eta, cost, params, res.Q, res.lambda_avg,
                                      res.d_hat, res.B_used);
    CHECK(audited == doctest::Approx(res.gap).epsilon(1e-9));
}

TEST_CASE("slack parity reproduces the unconstrained solution exactly") {
    // a small multiplier ball keeps every best response at the unpenalized
    // rule when the constraint has slack, so the averaged policy stays pure;
    // cells are built with coefficient margins larger than any multiplier
    // drift the ball allows
    DGPSpec spec;
    for (int k = 0; k < 4; ++k) {
        for (const char* g : {"a", "b"}) {
            DGPCell c;
            c.x = {double(k)};
            c.group = g;
            c.mass = 1.0 / 8.0;
            c.e1 = 0.5;
            c.p10 = 0.2;
            c.p11 = 0.55;
            c.mu1 = (k % 2 == 0) ? 0.8 : 0.2;
            c.mu0 = (k % 2 == 0) ? 0.3 : 0.7;
            spec.cells.push_back(std::move(c));
        }
    }
    const auto ds = census(spec, 128);
    const auto eta = oracle_bundle(spec, ds);
    const CostSpec cost{1.0, -0.1, 0.0};

    ConstraintSystem none;
    RedfairParams params = quick_params();
    params.B = 0.5;
    params.nu = 1e-4;
    params.max_iterations = 100000;
    const auto unc = redfair(ds, none, eta, cost, params);

    PolicyEvalContext ctx;
    ctx.eta = &eta;
    ctx.cost = &cost;
    const auto pi1 = policy_prob1_rows(unc.Q, ds, ctx);
    const auto probe = make_treatment_parity(ds, eta, 0.0);
    const auto h = probe.moment_values(pi1);
    const double gap_a = std::abs(h[0] - h[2]), gap_b = std::abs(h[1] - h[2]);
    const double d = std::max(gap_a, gap_b) + 0.05;  // slack margin

    const auto sys = make_treatment_parity(ds, eta, d);
    const auto res = redfair(ds, sys, eta, cost, params);
    CHECK(res.converged);
    CHECK(res.gap <= params.nu);
    REQUIRE(res.Q.components.size() == 1);
    CHECK(res.value == doctest::Approx(unc.value).epsilon(1e-12));
    for (std::size_t k = 0; k < sys.K(); ++k)
        CHECK(res.constraint_values[k] <=
              res.d_hat[k] + (1.0 + 2.0 * res.gap) / res.B_used + 1e-9);

    // the one-sided threshold program agrees at a slack level too
    const auto [flo, fhi] = feasible_epsilon_range(ds, eta);
    const auto thr = solve_threshold(ds, eta, cost, fhi + 1.0);
    const double vthr = dm_value(ds, RandomizedPolicy(thr.policy), eta, cost, &ctx).point;
    CHECK(std::abs(res.value - vthr) <= 1e-6);
}

TEST_CASE("saddle point approaches the oracle under a binding constraint") {
    const auto spec = grid_dgp(23, 4);
    const auto ds = census(spec, 128);
    const auto eta = oracle_bundle(spec, ds);
    const CostSpec cost{1.0, -0.1, 0.0};
    const double d = 0.05;
    const auto sys = make_treatment_parity(ds, eta, d);
    RedfairParams params = quick_params();
    params.nu = 0.02;
    params.B = 30.0;
    params.max_iterations = 50000;
    const auto res = redfair(ds, sys, eta, cost, params);
    CHECK(res.converged);
    CHECK(res.gap <= params.nu);

    // the two-sided parity bound implies |takeup_a - takeup_b| <= d / max share
    const double share = std::max(eta.p_group(0), eta.p_group(1));
    const auto opt = oracle_constrained_optimum(spec, cost, d / share, /*two_sided=*/true);
    // the randomized saddle value may exceed the deterministic optimum but
    // must come close from below
    CHECK(res.value >= opt.value - 0.01);
    for (std::size_t k = 0; k < sys.K(); ++k)
        CHECK(res.constraint_values[k] <=
              res.d_hat[k] + (1.0 + 2.0 * res.gap) / res.B_used + 1e-9);
}

TEST_CASE("iteration cap is flagged, not thrown") {
    const auto spec = grid_dgp(25, 4);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);
    const auto sys = make_treatment_parity(ds, eta, 0.01);
    const CostSpec cost{1.0, -0.1, 0.0};
    RedfairParams params = quick_params();
    params.nu = 1e-12;
    params.max_iterations = 5;
    const auto res = redfair(ds, sys, eta, cost, params);
    CHECK_FALSE(res.converged);
    CHECK(res.gap > params.nu);
    CHECK(res.iterations == 5);
}

TEST_CASE("identical parameters give identical runs") {
    const auto spec = grid_dgp(27, 4);
    const auto ds = census(spec, 64);
    const auto eta = oracle_bundle(spec, ds);
    const auto sys = make_treatment_parity(ds, eta, 0.02);
    const CostSpec cost{1.0, -0.1, 0.0};
    RedfairParams params = quick_params();
    params.max_iterations = 300;
    const auto r1 = redfair(ds, sys, eta, cost, params);
    const auto r2 = redfair(ds, sys, eta, cost, params);
    CHECK(r1.gap == r2.gap);
    CHECK(r1.value == r2.value);
    CHECK(r1.iterations == r2.iterations);
    CHECK(serialize_policy(r1.Q) == serialize_policy(r2.Q));
}

TEST_CASE("two-stage slack arithmetic") {
    const std::vector<double> mrow = {1.0};
    const std::vector<double> sig = {0.04};
    CHECK(augmented_bound(0.05, mrow, sig, 10000, 0.5) ==
          doctest::Approx(0.0508).epsilon(1e-12));
}

TEST_CASE("two-stage pipeline") {
    const auto spec = grid_dgp(29, 4);
    const Dataset ds = generate(spec, 4000, 29);
    const CostSpec cost{1.0, -0.1, 0.0};
    RedfairParams params = quick_params();
    params.nu = 2e-3;
    params.B = 100.0;
    params.max_iterations = 4000;
    params.seed = 5;

    NuisanceMaker nm = [&spec](const Dataset& d) { return oracle_bundle(spec, d); };
    const double level = 0.05;
    SystemMaker sm = [level](const Dataset& d, const NuisanceBundle& eta) {
        return make_treatment_parity(d, eta, level);
    };
    const auto res = two_stage(ds, sm, nm, cost, params);
    CHECK_FALSE(res.fallback);
    CHECK(res.sigma2.size() == 3);
    CHECK(res.epsilon_n > 0.0);
    // the value slice held: on the stage-2 data the refined policy cannot
    // fall more than the slice width plus the saddle allowance below the
    // stage-1 policy
    const double allowance = (1.0 + 2.0 * params.nu) / res.stage2.B_used + 1e-9;
    CHECK(res.stage2.value >= res.stage1_value_on_stage2 - res.epsilon_n - allowance);

    // impossible slice forces the fallback
    RedfairParams hard = params;
    hard.slice_scale = -1000.0;  // demands an unattainable improvement
    const auto res2 = two_stage(ds, sm, nm, cost, hard);
    CHECK(res2.fallback);
    CHECK(serialize_policy(res2.final_policy) == serialize_policy(res2.stage1.Q));
}

TEST_CASE("no binding constraints adds only the value slice") {
    DGPSpec s;  // symmetric: parity holds with room to spare
    s.cells = {
        {{0.0}, "a", 0.25, 0.5, 0.8, 0.2, 0.9, 0.1},
        {{1.0}, "a", 0.25, 0.5, 0.6, 0.3, 0.2, 0.6},
        {{0.0}, "b", 0.25, 0.5, 0.8, 0.2, 0.9, 0.1},
        {{1.0}, "b", 0.25, 0.5, 0.6, 0.3, 0.2, 0.6},
    };
    const Dataset ds = generate(s, 4000, 31);
    const CostSpec cost{1.0, 0.0, 0.0};
    RedfairParams params = quick_params();
    params.nu = 5e-3;
    params.seed = 11;
    NuisanceMaker nm = [&s](const Dataset& d) { return oracle_bundle(s, d); };
    SystemMaker sm = [](const Dataset& d, const NuisanceBundle& eta) {
        return make_treatment_parity(d, eta, 0.25);
    };
    const auto res = two_stage(ds, sm, nm, cost, params);
    CHECK(res.binding.empty());
    // stage 2 has the 4 parity rows plus exactly one slice row
    CHECK(res.stage2.d_hat.size() == 5);
}
