#include <cmath>
#include <sstream>

#include "doctest.h"
#include "encpol/dgp.hpp"
#include "encpol/nuisance.hpp"

using namespace encpol;

namespace {

// Logistic synthetic labels on a 1-D grid.
struct LogitData {
    std::vector<double> X, y, w;
    std::size_t n;
};

LogitData make_logit(double w0, double w1, std::size_t n, std::uint64_t seed) {
    LogitData d;
    d.n = n;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform(-2.0, 2.0);
        const double p = 1.0 / (1.0 + std::exp(-(w0 + w1 * x)));
        d.X.push_back(x);
        d.y.push_back(rng.bernoulli(p) ? 1.0 : 0.0);
        d.w.push_back(1.0);
    }
    return d;
}

DGPSpec bundle_dgp() {
    DGPSpec s;
    s.cells = {
        {{0.0, 1.0}, "a", 0.3, 0.5, 0.8, 0.2, 0.9, 0.3},
        {{1.0, 0.0}, "a", 0.2, 0.4, 0.7, 0.3, 0.2, 0.6},
        {{0.0, 1.0}, "b", 0.3, 0.6, 0.9, 0.4, 0.7, 0.1},
        {{1.0, 0.0}, "b", 0.2, 0.5, 0.5, 0.1, 0.4, 0.5},
    };
    return s;
}

}  // namespace

TEST_CASE("single-class labels without regularization are rejected") {
    std::vector<double> X = {0.0, 1.0, 2.0};
    std::vector<double> y = {1.0, 1.0, 1.0};
    std::vector<double> w = {1.0, 1.0, 1.0};
    CHECK_THROWS_AS(fit_logistic(X, 3, 1, y, w, 0.0), domain_error);
    CHECK_NOTHROW(fit_logistic(X, 3, 1, y, w, 1.0));
}

TEST_CASE("logistic fit finds the direction") {
    std::vector<double> X = {-1.0, -1.0, 1.0, 1.0};
    std::vector<double> y = {0.0, 0.0, 1.0, 1.0};
    std::vector<double> w = {1.0, 1.0, 1.0, 1.0};
    const auto m = fit_logistic(X, 4, 1, y, w, 1.0);
    const double xp = 1.0;
    const double p = m.predict(std::span<const double>(&xp, 1));
    CHECK(p > 0.5);
    CHECK(p < 1.0);
}

TEST_CASE("logistic fit recovers the truth at large n") {
    const auto d = make_logit(0.4, -1.1, 50000, 99);
    const auto m = fit_logistic(d.X, d.n, 1, d.y, d.w, 1e-6);
    CHECK(m.converged);
    CHECK(std::abs(m.w[0] - 0.4) < 0.05);
    CHECK(std::abs(m.w[1] + 1.1) < 0.05);
}

TEST_CASE("budget exhaustion is flagged, result still returned") {
    const auto d = make_logit(0.0, 1.0, 2000, 3);
    OptimizerBudget tiny;
    tiny.max_iterations = 1;
    const auto m = fit_logistic(d.X, d.n, 1, d.y, d.w, 1e-6, tiny);
    CHECK_FALSE(m.converged);
    CHECK(m.w.size() == 2);
}

TEST_CASE("all-zero weights are rejected") {
    std::vector<double> X = {0.0, 1.0};
    std::vector<double> y = {0.0, 1.0};
    std::vector<double> w = {0.0, 0.0};
    CHECK_THROWS_AS(fit_logistic(X, 2, 1, y, w, 1.0), domain_error);
}

TEST_CASE("weighted fit honors weights") {
    // more weight on the positive row shifts the intercept up
    std::vector<double> X = {0.0, 0.0};
    std::vector<double> y = {0.0, 1.0};
    std::vector<double> w1 = {1.0, 1.0}, w2 = {1.0, 3.0};
    const auto m1 = fit_logistic(X, 2, 1, y, w1, 1e-8);
    const auto m2 = fit_logistic(X, 2, 1, y, w2, 1e-8);
    CHECK(m2.w[0] > m1.w[0]);
}

TEST_CASE("fit_nuisances calibrates a flat propensity") {
    DGPSpec s;
    s.cells = {
        {{0.0}, "a", 0.5, 0.5, 0.8, 0.2, 0.9, 0.2},
        {{1.0}, "a", 0.5, 0.5, 0.7, 0.4, 0.5, 0.4},
    };
    const auto ds = generate(s, 50000, 17);
    NuisanceConfig cfg;
    cfg.folds = 2;
    const auto eta = fit_nuisances(ds, cfg);
    for (std::size_t i = 0; i < ds.size(); i += 997)
        CHECK(std::abs(eta.e1(i) - 0.5) < 0.02);
    std::size_t na = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) na += ds.group(i) == 0;
    CHECK(eta.p_group(0) == doctest::Approx(double(na) / ds.size()).epsilon(1e-15));
}

TEST_CASE("cross-fitted predictions ignore own-fold outcomes") {
    DGPSpec s = bundle_dgp();
    const auto ds = generate(s, 400, 21);
    NuisanceConfig cfg;
    cfg.folds = 2;
    cfg.reg = 1e-4;
    const auto eta = fit_nuisances(ds, cfg);

    // flip every fold-0 outcome; fold-0 rows predict with the fold-1 model,
    // so their mu predictions must not move
    DatasetBuilder b(ds.covariate_names());
    b.declare_groups(ds.group_set());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double y = ds.y(i);
        if (i % 2 == 0) y = 1.0 - y;
        b.add_row(ds.x(i), ds.group_label(i), ds.r(i), ds.t(i), y);
    }
    const auto ds2 = b.finalize();
    const auto eta2 = fit_nuisances(ds2, cfg);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (i % 2 != 0) continue;
        CHECK(eta.mu1(i) == doctest::Approx(eta2.mu1(i)).epsilon(1e-12));
        CHECK(eta.mu0(i) == doctest::Approx(eta2.mu0(i)).epsilon(1e-12));
    }
}

TEST_CASE("probability predictions are clipped") {
    DGPSpec s;
    s.cells = {
        {{-3.0}, "a", 0.5, 0.02, 0.8, 0.2, 0.9, 0.2},
        {{3.0}, "a", 0.5, 0.98, 0.7, 0.4, 0.5, 0.4},
    };
    const auto ds = generate(s, 4000, 9);
    NuisanceConfig cfg;
    cfg.folds = 1;
    cfg.clip = 0.05;
    const auto eta = fit_nuisances(ds, cfg);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(eta.e1(i) >= 0.05);
        CHECK(eta.e1(i) <= 0.95);
        CHECK(eta.p11(i) >= 0.05);
        CHECK(eta.p1_marginal(i) <= 0.95);
    }
}

TEST_CASE("empty recommendation stratum raises no_overlap_error") {
    DatasetBuilder b({"x"});
    b.declare_groups({"a", "b"});
    const double x0 = 0.0, x1 = 1.0;
    for (int i = 0; i < 10; ++i) {
        b.add_row(std::span<const double>(&x0, 1), "a", i % 2, i % 2, double(i % 2));
        b.add_row(std::span<const double>(&x1, 1), "b", 1, i % 2, double(i % 2));  // never R=0
    }
    const auto ds = b.finalize();
    NuisanceConfig cfg;
    cfg.folds = 1;
    CHECK_THROWS_AS(fit_nuisances(ds, cfg), no_overlap_error);
}

TEST_CASE("nuisance error shrinks with sample size") {
    DGPSpec s = bundle_dgp();
    NuisanceConfig cfg;
    cfg.folds = 2;
    auto mse = [&](std::size_t n) {
        const auto ds = generate(s, n, 1234);
        const auto eta = fit_nuisances(ds, cfg);
        const auto truth = oracle_bundle(s, ds);
        std::vector<double> sq(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const double d1 = eta.e1(i) - truth.e1(i);
            const double d2 = eta.p11(i) - truth.p11(i);
            const double d3 = eta.mu1(i) - truth.mu1(i);
            sq[i] = d1 * d1 + d2 * d2 + d3 * d3;
        }
        return mean(sq);
    };
    const double m2k = mse(2000), m8k = mse(8000), m32k = mse(32000);
    CHECK(m8k <= m2k * 1.2);
    CHECK(m32k <= m8k * 1.2);
}

TEST_CASE("oracle bundle returns exact cell parameters") {
    const auto s = bundle_dgp();
    const auto ds = generate(s, 300, 55);
    const auto eta = oracle_bundle(s, ds);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        bool found = false;
        for (const auto& c : s.cells) {
            if (c.group != ds.group_label(i) || c.x[0] != ds.x(i)[0]) continue;
            found = true;
            CHECK(eta.e1(i) == c.e1);
            CHECK(eta.p11(i) == c.p11);
            CHECK(eta.p10(i) == c.p10);
            CHECK(eta.mu1(i) == c.mu1);
            CHECK(eta.mu0(i) == c.mu0);
        }
        CHECK(found);
    }
    const auto m = eta.group_membership_at(s.cells[0].x);
    CHECK(m[0] == doctest::Approx(0.5));
    CHECK(m[1] == doctest::Approx(0.5));
}

TEST_CASE("bundle export and import agree at prediction points") {
    const auto s = bundle_dgp();
    const auto ds = generate(s, 500, 77);
    NuisanceConfig cfg;
    cfg.folds = 1;
    const auto eta = fit_nuisances(ds, cfg);
    std::ostringstream out;
    eta.export_text(out);
    std::istringstream in(out.str());
    const auto back = NuisanceBundle::import_text(in, ds);
    for (std::size_t i = 0; i < ds.size(); i += 37) {
        for (int g = 0; g < 2; ++g) {
            CHECK(back.e1_at(ds.x(i), g) == doctest::Approx(eta.e1_at(ds.x(i), g)).epsilon(1e-12));
            CHECK(back.mu1_at(ds.x(i), g) ==
                  doctest::Approx(eta.mu1_at(ds.x(i), g)).epsilon(1e-12));
        }
    }
}
