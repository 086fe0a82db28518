#include "hjsing/catalog.hpp"
#include "hjsing/expression.hpp"
#include "hjsing/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace hjsing;

namespace {

Vec random_vec(std::mt19937_64& rng, int n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = u(rng);
    return v;
}

}  // namespace

TEST(Expression, EvaluatesArithmeticAndFunctions) {
    std::map<std::string, int> slots{{"x", 0}, {"y", 1}};
    double args[2] = {0.5, -2.0};
    EXPECT_DOUBLE_EQ(Expression("1 + 2*3", slots).eval(args), 7.0);
    EXPECT_DOUBLE_EQ(Expression("(1 + 2)*3", slots).eval(args), 9.0);
    EXPECT_DOUBLE_EQ(Expression("-x^2", slots).eval(args), -0.25);
    EXPECT_DOUBLE_EQ(Expression("2^3^2", slots).eval(args), 512.0);
    EXPECT_DOUBLE_EQ(Expression("abs(y) + sqrt(4)", slots).eval(args), 4.0);
    EXPECT_NEAR(Expression("sin(pi/2) + cos(0) + exp(log(3))", slots).eval(args), 5.0, 1e-15);
    EXPECT_NEAR(Expression("cosh(x)^2 - sinh(x)^2", slots).eval(args), 1.0, 1e-14);
    EXPECT_DOUBLE_EQ(Expression("1.5e-1 * 10", slots).eval(args), 1.5);
}

TEST(Expression, RejectsMalformedInput) {
    std::map<std::string, int> slots{{"x", 0}};
    EXPECT_THROW(Expression("1 +", slots), ConfigError);
    EXPECT_THROW(Expression("(x", slots), ConfigError);
    EXPECT_THROW(Expression("z + 1", slots), ConfigError);
    EXPECT_THROW(Expression("foo(x)", slots), ConfigError);
    EXPECT_THROW(Expression("x $ 2", slots), ConfigError);
}

TEST(Expression, MatchesDirectEvaluationOnRandomInputs) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3, 3);
    std::map<std::string, int> slots{{"x", 0}, {"v", 1}};
    Expression e("v^2/2 - (cos(x)^2/2 - abs(sin(x))) + x*v/3", slots);
    for (int k = 0; k < 200; ++k) {
        double a[2] = {u(rng), u(rng)};
        double direct = a[1] * a[1] / 2 - (std::cos(a[0]) * std::cos(a[0]) / 2 - std::fabs(std::sin(a[0]))) +
                        a[0] * a[1] / 3;
        EXPECT_NEAR(e.eval(a), direct, 1e-13 * (1 + std::fabs(direct)));
    }
}

TEST(ConvexConjugate, HalfSquareIsSelfDual) {
    ScalarFn th = half_square();
    for (double s : {0.0, 0.5, 1.0, 3.0, 10.0}) EXPECT_NEAR(convex_conjugate(th, s), 0.5 * s * s, 1e-9 * (1 + s * s));
}

TEST(ConvexConjugate, FenchelInequalityHoldsOnRandomPairs) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 6);
    ScalarFn th = [](double r) { return std::cosh(r) - 1.0; };
    for (int k = 0; k < 100; ++k) {
        double r = u(rng), s = u(rng);
        EXPECT_GE(th(r) + convex_conjugate(th, s) - r * s, -1e-9);
    }
}

TEST(Catalog, ModelsSatisfyTonelliConditions) {
    Box box;
    box.lo = vec1(-3);
    box.hi = vec1(3);
    for (const auto& key : catalog_keys()) {
        if (key == "broken") continue;
        auto m = catalog_model(key);
        auto r = check_tonelli(m.lagrangian, box, 1.0, 300);
        EXPECT_TRUE(r.pass()) << key;
    }
}

TEST(Catalog, BrokenModelFailsStrictConvexity) {
    Box box;
    box.lo = vec1(-3);
    box.hi = vec1(3);
    auto r = check_tonelli(catalog_model("broken").lagrangian, box, 1.0, 300);
    EXPECT_FALSE(r.l1);
    EXPECT_FALSE(r.pass());
}

TEST(Catalog, UnknownKeyAndBadDimensionAreConfigErrors) {
    EXPECT_THROW(catalog_model("nope"), ConfigError);
    EXPECT_THROW(catalog_model("free", 4), ConfigError);
}

TEST(Catalog, HamiltonianIsLegendreDualOfLagrangian) {
    std::mt19937_64 rng(9);
    for (const auto& key : {"pendulum", "sine_kink", "double_well", "cosh"}) {
        for (int n : {1, 2}) {
            auto m = catalog_model(key, n);
            for (int k = 0; k < 20; ++k) {
                Vec x = random_vec(rng, n, -3, 3), p = random_vec(rng, n, -2, 2);
                auto leg = legendre(m.lagrangian, 0.0, x, p);
                double fenchel = m.lagrangian.L(0.0, x, leg.v_star) + m.hamiltonian.H(0.0, x, p) - p.dot(leg.v_star);
                EXPECT_NEAR(fenchel, 0.0, 1e-8) << key;
                EXPECT_NEAR((m.hamiltonian.H_p(0.0, x, p) - leg.v_star).norm(), 0.0, 1e-6) << key;
            }
        }
    }
}

TEST(Catalog, GrowthBoundsBracketTheLagrangian) {
    std::mt19937_64 rng(13);
    for (const auto& key : {"free", "free_plus_one", "pendulum", "sine_kink", "double_well"}) {
        auto m = catalog_model(key);
        auto g = m.lagrangian.growth(1.0);
        EXPECT_TRUE(check_growth(g).pass()) << key;
        for (int k = 0; k < 100; ++k) {
            Vec x = random_vec(rng, 1, -4, 4), v = random_vec(rng, 1, -6, 6);
            double L = m.lagrangian.L(0.0, x, v);
            EXPECT_LE(L, g.theta_upper(v.norm()) + 1e-12) << key;
            EXPECT_GE(L, g.theta_lower(v.norm()) - g.c_T - 1e-12) << key;
        }
    }
}

TEST(ExpressionModel, LegendreTransformMatchesGivenHamiltonian) {
    auto m = expression_model(1, "v^2/2 + cos(x)", "", 1, 1);
    std::mt19937_64 rng(2);
    for (int k = 0; k < 30; ++k) {
        Vec x = random_vec(rng, 1, -3, 3), p = random_vec(rng, 1, -2, 2);
        double exact = 0.5 * p.squaredNorm() - std::cos(x[0]);
        EXPECT_NEAR(m.hamiltonian.H(0.0, x, p), exact, 1e-7);
    }
    EXPECT_FALSE(m.lagrangian.time_dependent);
    auto td = expression_model(1, "v^2/2 + t*x");
    EXPECT_TRUE(td.lagrangian.time_dependent);
    EXPECT_THROW(make_discounted(td, 1.0), InvalidProblem);
}

TEST(Discounted, TransformScalesLagrangianAndHamiltonian) {
    auto p = make_discounted(catalog_model("pendulum"), 0.7);
    auto ev = to_evolutionary(p);
    std::mt19937_64 rng(4);
    for (int k = 0; k < 20; ++k) {
        double t = std::uniform_real_distribution<double>(0, 2)(rng);
        Vec x = random_vec(rng, 1, -3, 3), v = random_vec(rng, 1, -2, 2);
        EXPECT_NEAR(ev.lagrangian.L(t, x, v), std::exp(0.7 * t) * p.lagrangian.L(0, x, v), 1e-12);
        double e = std::exp(0.7 * t);
        EXPECT_NEAR(ev.hamiltonian.H(t, x, v), e * p.hamiltonian.H(0, x, Vec(v / e)), 1e-12);
    }
    EXPECT_THROW(make_discounted(catalog_model("free"), 0.0), ConfigError);
    EXPECT_THROW(checked_exp(1e4), Overflow);
}
