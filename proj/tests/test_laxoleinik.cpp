#include "hjsing/catalog.hpp"
#include "hjsing/laxoleinik.hpp"

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

/// Random smooth function with Lipschitz constant at most `lip`.
std::function<double(const Vec&)> random_lipschitz(std::mt19937_64& rng, double lip) {
    std::uniform_real_distribution<double> u(0, 1);
    double a = lip * u(rng), w = 0.5 + 2 * u(rng), ph = 6.28 * u(rng), b = u(rng) - 0.5, c = lip * (u(rng) - 0.5);
    return [=](const Vec& x) { return b + 0.5 * a / w * std::sin(w * x.sum() + ph) + 0.5 * c * std::tanh(x.sum()); };
}

}  // namespace

TEST(Localization, RadiusGrowsWithLipschitzConstant) {
    auto g = catalog_model("pendulum").lagrangian.growth(1.0);
    double prev = 0.0;
    for (double K : {0.0, 0.5, 1.0, 2.0, 4.0}) {
        double r = localization_radius(g, 1.0, K);
        EXPECT_GT(r, prev);
        prev = r;
    }
    EXPECT_THROW(localization_radius(g, 1.0, -1.0), InvalidProblem);
}

TEST(Localization, FreeParticleBoundIsExplicit) {
    auto g = catalog_model("free").lagrangian.growth(1.0);
    EXPECT_NEAR(localization_radius(g, 1.0, 1.0), 2.0, 1e-9);
    auto b = solution_lipschitz_bound(g, 1.0, 1.0);
    EXPECT_GE(b.F1, 1.0);
    EXPECT_NEAR(b.F0, std::hypot(b.F1, b.F2), 1e-12);
    EXPECT_GE(trace_radius(g, 1.0, 1.0), localization_radius(g, 1.0, 1.0));
}

TEST(LaxOleinikMinus, HopfLaxFormulaForFreeParticle) {
    auto m = catalog_model("free");
    ActionKernel A(m.lagrangian);
    auto f = GridFunction::sample(interval(-6, 6), {481}, [](const Vec& x) { return -std::fabs(x[0]); });
    LocalizationAudit audit;
    OperatorOptions opt;
    opt.audit = &audit;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int k = 0; k < 30; ++k) {
        double x = u(rng);
        for (double t : {0.5, 1.0}) {
            auto r = lax_oleinik_minus(A, f, 0.0, t, vec1(x), opt);
            EXPECT_NEAR(r.value, -std::fabs(x) - t / 2, 1e-9);
        }
    }
    EXPECT_EQ(audit.violations(), 0);
    EXPECT_GT(audit.checks(), 0);
}

TEST(LaxOleinikMinus, ReportsBothArgpointsAtAKink) {
    auto m = catalog_model("free");
    ActionKernel A(m.lagrangian);
    auto f = GridFunction::sample(interval(-6, 6), {481}, [](const Vec& x) { return -std::fabs(x[0]); });
    auto r = lax_oleinik_minus(A, f, 0.0, 1.0, vec1(0.0));
    ASSERT_EQ(r.arg.argpoints.size(), 2u);
    EXPECT_NEAR(std::fabs(r.arg.argpoints[0][0]), 1.0, 1e-6);
    EXPECT_NEAR(r.arg.argpoints[0][0] + r.arg.argpoints[1][0], 0.0, 1e-6);
    auto s = lax_oleinik_minus(A, f, 0.0, 1.0, vec1(1.0));
    EXPECT_EQ(s.arg.argpoints.size(), 1u);
}

TEST(LaxOleinikMinus, StrictPolicyRejectsBallsLeavingTheBox) {
    auto m = catalog_model("free");
    ActionKernel A(m.lagrangian);
    auto f = GridFunction::sample(interval(-2, 2), {81}, [](const Vec& x) { return x[0]; });
    EXPECT_THROW(lax_oleinik_minus(A, f, 0.0, 1.0, vec1(1.9)), BoundaryClipped);
    OperatorOptions clip;
    clip.boundary = BoundaryPolicy::Clip;
    EXPECT_NO_THROW(lax_oleinik_minus(A, f, 0.0, 1.0, vec1(1.9), clip));
    EXPECT_THROW(lax_oleinik_minus(A, f, 1.0, 1.0, vec1(0.0)), InvalidProblem);
}

TEST(LaxOleinik, PlusAfterMinusDoesNotExceedData) {
    auto m = catalog_model("pendulum");
    ActionKernel A(m.lagrangian);
    std::mt19937_64 rng(32);
    auto fn = random_lipschitz(rng, 1.0);
    auto f = GridFunction::sample(interval(-8, 8), {321}, fn);
    OperatorOptions clip;
    clip.boundary = BoundaryPolicy::Clip;
    GridOperator op(A, f, 0.0, 0.5, 1.5, f.max_value() - f.min_value() + 1.0, clip);
    auto g = op.apply(f);
    std::uniform_real_distribution<double> u(-2, 2);
    const double slack = f.spacing(0) * f.spacing(0);
    for (int k = 0; k < 20; ++k) {
        Vec z = vec1(u(rng));
        double back = lax_oleinik_plus(A, g, 0.0, z, 0.5, clip).value;
        EXPECT_LE(back, f(z) + slack);
    }
}

TEST(LaxOleinik, MonotoneAndCommutesWithConstants) {
    auto m = catalog_model("sine_kink");
    ActionKernel A(m.lagrangian);
    std::mt19937_64 rng(33);
    OperatorOptions clip;
    clip.boundary = BoundaryPolicy::Clip;
    for (int k = 0; k < 3; ++k) {
        auto fn = random_lipschitz(rng, 1.0);
        auto f = GridFunction::sample(interval(-6, 6), {121}, fn);
        auto g = GridFunction::sample(interval(-6, 6), {121}, [&](const Vec& x) { return fn(x) + 0.3 + 0.2 * std::sin(x[0]) * std::sin(x[0]); });
        auto h = GridFunction::sample(interval(-6, 6), {121}, [&](const Vec& x) { return fn(x) + 0.75; });
        GridOperator op(A, f, 0.0, 1.0, 2.0, 4.0, clip);
        auto tf = op.apply(f), tg = op.apply(g), th = op.apply(h);
        for (std::size_t i = 0; i < f.size(); ++i) {
            EXPECT_LE(tf[i], tg[i] + 1e-9);
            EXPECT_NEAR(th[i], tf[i] + 0.75, 1e-9);
        }
    }
}

TEST(GridOperator, ResultsDoNotDependOnWorkerCount) {
    auto m = catalog_model("double_well");
    ActionKernel A(m.lagrangian);
    std::mt19937_64 rng(34);
    auto f = GridFunction::sample(interval(-4, 4), {97}, random_lipschitz(rng, 1.0));
    OperatorOptions clip;
    clip.boundary = BoundaryPolicy::Clip;
    GridOperator one(A, f, 0.0, 0.5, 1.5, 3.0, clip, 1);
    GridOperator three(A, f, 0.0, 0.5, 1.5, 3.0, clip, 3);
    auto a = one.apply(f), b = three.apply(f);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(GridOperator, MatchesPointOperator) {
    auto m = catalog_model("pendulum");
    ActionKernel A(m.lagrangian);
    std::mt19937_64 rng(35);
    auto f = GridFunction::sample(interval(-6, 6), {121}, random_lipschitz(rng, 1.0));
    OperatorOptions clip;
    clip.boundary = BoundaryPolicy::Clip;
    GridOperator op(A, f, 0.0, 1.0, 2.0, 4.0, clip);
    auto g = op.apply(f);
    for (std::size_t i = 40; i < 80; i += 7) {
        double p = lax_oleinik_minus(A, f, 0.0, 1.0, f.node(i), clip).value;
        EXPECT_NEAR(g[i], p, 1e-9);
    }
}

TEST(DiscountedOperator, ContractsWithDiscountRate) {
    auto p = make_discounted(catalog_model("pendulum"), 0.5);
    std::mt19937_64 rng(36);
    auto layout = GridFunction(interval(-8, 8), {129});
    OperatorOptions clip;
    clip.boundary = BoundaryPolicy::Clip;
    DiscountedOperator op(p, layout, 1.0, 2.0, 6.0, clip);
    for (int k = 0; k < 10; ++k) {
        auto f = GridFunction::sample(layout.box(), layout.resolution(), random_lipschitz(rng, 1.0));
        auto g = GridFunction::sample(layout.box(), layout.resolution(), random_lipschitz(rng, 1.0));
        SweepStats sf, sg;
        auto tf = op.apply(f, &sf), tg = op.apply(g, &sg);
        double eps = std::max(sf.max_polish_gain, sg.max_polish_gain);
        EXPECT_LE(tf.sup_distance(tg), std::exp(-0.5) * f.sup_distance(g) + 2 * eps + 1e-12);
    }
}

TEST(DiscountedOperator, ConstantsDecayForFreeParticle) {
    auto p = make_discounted(catalog_model("free"), 1.0);
    auto f = GridFunction::sample(interval(-3, 3), {61}, [](const Vec&) { return 2.0; });
    for (double t : {0.5, 1.0, 2.0}) {
        auto r = discounted_lax_oleinik(p, f, t, vec1(0.0));
        EXPECT_NEAR(r.value, 2.0 * std::exp(-t), 1e-12);
    }
    EXPECT_THROW(discounted_lax_oleinik(p, f, 41.0, vec1(0.0)), Overflow);
    EXPECT_THROW(discounted_lax_oleinik(p, f, 0.0, vec1(0.0)), InvalidProblem);
}

TEST(GridFunction, InterpolationIsExactForAffineData) {
    Box b;
    b.lo = Vec(2);
    b.hi = Vec(2);
    b.lo << -1, 0;
    b.hi << 2, 3;
    auto g = GridFunction::sample(b, {31, 17}, [](const Vec& x) { return 1.0 + 2.0 * x[0] - 0.5 * x[1]; });
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u(0, 1);
    for (int k = 0; k < 100; ++k) {
        Vec x(2);
        x << -1 + 3 * u(rng), 3 * u(rng);
        EXPECT_NEAR(g(x), 1.0 + 2.0 * x[0] - 0.5 * x[1], 1e-12);
    }
    EXPECT_NEAR(g.lipschitz_estimate(), std::hypot(2.0, 0.5), 1e-9);
}

TEST(GridFunction, WriteThenReadReproducesValuesExactly) {
    std::mt19937_64 rng(38);
    std::normal_distribution<double> gauss;
    for (int d = 1; d <= 3; ++d) {
        Box b;
        b.lo = Vec::Constant(d, -1.25);
        b.hi = Vec::Constant(d, 1.0 / 3.0);
        std::vector<int> res(d, 5 + d);
        GridFunction g(b, res);
        std::vector<double> vals(g.size());
        for (double& v : vals) v = gauss(rng) * std::pow(10.0, static_cast<int>(gauss(rng) * 5));
        g.set_values(vals);
        g.lambda = 0.7;
        g.metadata["note"] = "round trip";
        std::stringstream ss;
        g.write(ss);
        auto h = GridFunction::read(ss);
        ASSERT_TRUE(h.same_layout(g));
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(h[i], g[i]);
        EXPECT_EQ(*h.lambda, 0.7);
        EXPECT_EQ(h.metadata["note"], "round trip");
    }
}

TEST(GridFunction, MalformedFilesAreConfigErrors) {
    std::stringstream a("dim 1\nbox 0 1\nresolution 3\n1\n2\n");
    EXPECT_THROW(GridFunction::read(a), ConfigError);
    std::stringstream b("dim 1\nbox 1 0\nresolution 2\n1\n2\n");
    EXPECT_THROW(GridFunction::read(b), ConfigError);
    std::stringstream c("dim 1\nbox 0 1\nresolution 2\n1\nabc\n");
    EXPECT_THROW(GridFunction::read(c), ConfigError);
}
