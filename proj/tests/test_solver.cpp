#include "hjsing/catalog.hpp"
#include "hjsing/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace hjsing;

namespace {

Box interval(double lo, double hi) {
    Box b;
    b.lo = vec1(lo);
    b.hi = vec1(hi);
    return b;
}

}  // namespace

TEST(Bounds, KBoundsFollowGrowthConstants) {
    auto free = make_discounted(catalog_model("free"), 1.0);
    EXPECT_EQ(bounds_K(free).K1, 0.0);
    EXPECT_EQ(bounds_K(free).K2, 0.0);
    auto shifted = make_discounted(catalog_model("free_plus_one"), 2.0);
    EXPECT_NEAR(bounds_K(shifted).K2, 0.5, 1e-12);
    auto pend = make_discounted(catalog_model("pendulum"), 0.5);
    auto k = bounds_K(pend);
    EXPECT_NEAR(k.K1, pend.c1 / 0.5, 1e-12);
    EXPECT_NEAR(k.K2, (pend.theta2(0.0) + pend.c2) / 0.5, 1e-12);
}

TEST(Bounds, IterationCapFormula) {
    auto p = make_discounted(catalog_model("pendulum"), 1.0);
    auto k = bounds_K(p);
    EXPECT_EQ(iteration_cap(p, 1e-3), static_cast<int>(std::ceil(std::log((k.K1 + k.K2) / 1e-3))) + 10);
    auto free = make_discounted(catalog_model("free"), 1.0);
    EXPECT_EQ(iteration_cap(free, 1e-3), 10);
}

TEST(PadGrid, KeepsRegionNodesAndCoversPad) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    for (int k = 0; k < 20; ++k) {
        Box region = interval(-u(rng), u(rng));
        int res = 16 + static_cast<int>(u(rng) * 20);
        double pad = u(rng);
        auto pg = pad_grid(region, {res}, pad);
        EXPECT_LE(pg.box.lo[0], region.lo[0] - pad + 1e-12);
        EXPECT_GE(pg.box.hi[0], region.hi[0] + pad - 1e-12);
        GridFunction g = pg.layout();
        double h = (region.hi[0] - region.lo[0]) / (res - 1);
        EXPECT_NEAR(g.spacing(0), h, 1e-12);
        EXPECT_NEAR(g.node(pg.offset[0])[0], region.lo[0], 1e-9);
        EXPECT_NEAR(g.node(pg.offset[0] + res - 1)[0], region.hi[0], 1e-9);
    }
}

TEST(SolveDiscounted, ConstantLagrangianGivesConstantSolution) {
    auto p = make_discounted(catalog_model("free_plus_one"), 2.0);
    auto pg = pad_grid(interval(-1, 1), {33}, discounted_pad(p));
    SolveOptions o;
    o.tol = 1e-6;
    auto sol = solve_discounted(p, pg.box, pg.resolution, o);
    for (std::size_t i = 0; i < sol.v.size(); ++i) EXPECT_NEAR(sol.v[i], 0.5, 1e-6);
    EXPECT_TRUE(sol.report.converged);
    EXPECT_LE(sol.report.iterations, sol.report.iteration_cap);
}

TEST(SolveDiscounted, PendulumIteratesAreMonotoneBracketedAndSolveTheEquation) {
    auto p = make_discounted(catalog_model("pendulum"), 1.0);
    auto k = bounds_K(p);
    auto pg = pad_grid(interval(-std::numbers::pi, std::numbers::pi), {97}, discounted_pad(p));
    GridFunction prev;
    double worst_drop = 0.0, lo = kInf, hi = -kInf;
    SolveOptions o;
    o.tol = 1e-4;
    o.on_iterate = [&](int, const GridFunction& v) {
        if (prev.size())
            for (std::size_t i = 0; i < v.size(); ++i) worst_drop = std::min(worst_drop, v[i] - prev[i]);
        lo = std::min(lo, v.min_value());
        hi = std::max(hi, v.max_value());
        prev = v;
    };
    LocalizationAudit audit;
    o.audit = &audit;
    auto sol = solve_discounted(p, pg.box, pg.resolution, o);
    EXPECT_GE(worst_drop, -1e-9);
    EXPECT_GE(sol.report.min_increment, -1e-9);
    EXPECT_GE(lo, -k.K1 - 1e-6);
    EXPECT_LE(hi, k.K2 + 1e-6);
    EXPECT_EQ(audit.violations(), 0);
    std::vector<Vec> samples;
    for (double x = -2.5; x <= 2.5; x += 0.1) samples.push_back(vec1(x));
    auto r = residual_check(p, [&](const Vec& x) { return sol.v(x); }, samples, sol.v.spacing(0), 5e-3);
    EXPECT_TRUE(r.pass()) << r.sup_residual << " " << r.worst_subsolution << " " << r.worst_supersolution;
    EXPECT_GT(r.stable, 0);
}

TEST(SolveDiscounted, TinyToleranceStaysWithinTheCap) {
    auto p = make_discounted(catalog_model("pendulum"), 1.0);
    auto pg = pad_grid(interval(-1, 1), {17}, discounted_pad(p));
    SolveOptions o;
    o.tol = 1e-300;
    auto sol = solve_discounted(p, pg.box, pg.resolution, o);
    EXPECT_TRUE(sol.report.converged);
    EXPECT_LE(sol.report.iterations, sol.report.iteration_cap);
    EXPECT_EQ(sol.report.final_residual, 0.0);
    o.tol = 0.0;
    EXPECT_THROW(solve_discounted(p, pg.box, pg.resolution, o), InvalidProblem);
}

TEST(SolveEvolutionary, ZeroDatumStaysZeroForFreeParticle) {
    ActionKernel A(catalog_model("free").lagrangian);
    auto u0 = GridFunction::sample(interval(-4, 4), {81}, [](const Vec&) { return 0.0; });
    auto us = solve_evolutionary(A, u0, {0.5, 1.0});
    for (const auto& u : us)
        for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(u[i], 0.0, 1e-14);
    EXPECT_EQ(us[1].metadata.at("time"), "1");
}

TEST(SolveEvolutionary, HopfLaxForKinkedDatum) {
    ActionKernel A(catalog_model("free").lagrangian);
    auto pg = pad_grid(interval(-2, 2), {81}, 4.0);
    auto u0 = GridFunction::sample(pg.box, pg.resolution, [](const Vec& x) { return -std::fabs(x[0]); });
    auto us = solve_evolutionary(A, u0, {0.5, 1.0});
    for (int j = 0; j < 2; ++j) {
        double t = j == 0 ? 0.5 : 1.0;
        for (std::size_t i = 0; i < us[j].size(); ++i) {
            Vec x = us[j].node(i);
            if (pg.in_region(x)) {
                EXPECT_NEAR(us[j][i], -std::fabs(x[0]) - t / 2, 1e-9);
            }
        }
    }
}

TEST(Residual, DistinguishesSolutionsFromNonSolutions) {
    auto H = catalog_model("free").hamiltonian;
    std::vector<std::pair<double, Vec>> samples;
    for (double x = -1.5; x <= 1.5; x += 0.1) samples.push_back({1.0, vec1(x)});
    auto good = residual_check(H, [](double t, const Vec& x) { return -std::fabs(x[0]) - t / 2; }, samples, 1e-3, 1e-6);
    EXPECT_TRUE(good.pass());
    EXPECT_GT(good.unstable, 0);
    auto bad = residual_check(H, [](double, const Vec& x) { return -std::fabs(x[0]); }, samples, 1e-3, 1e-6);
    EXPECT_FALSE(bad.pass());
    auto convex = residual_check(H, [](double t, const Vec& x) { return std::fabs(x[0]) - t / 2; }, samples, 1e-3, 1e-6);
    EXPECT_FALSE(convex.pass());
}

TEST(Residual, NonLipschitzSolutionPassesPointwise) {
    auto p = make_discounted(catalog_model("free"), 1.0);
    std::vector<Vec> samples;
    for (double x = -1.9; x <= 1.9; x += 0.1) samples.push_back(vec1(x));
    auto r = residual_check(p, [](const Vec& x) { return -0.5 * x[0] * x[0]; }, samples, 1e-4, 1e-6);
    EXPECT_TRUE(r.pass());
    EXPECT_EQ(r.unstable, 0);
}
