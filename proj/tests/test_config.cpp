#include "hjsing/config.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace hjsing;

namespace {

const char* kValid = R"(
# comment
[problem]
kind = discounted
model = sine_kink
lambda = 0.5

[grid]
box = -2*pi, 2*pi
resolution = 64

[solver]
tol = 1e-4

[trace]
x0 = pi
horizon = 2

[run]
seed = 7
)";

}  // namespace

TEST(ConfigFile, ParsesSectionsAndQualifiedKeys) {
    auto f = ConfigFile::parse("a = 1\n[s]\nb = two words \n; note\nt.c = 3\n");
    EXPECT_EQ(f.str("a"), "1");
    EXPECT_EQ(f.str("s.b"), "two words");
    EXPECT_EQ(f.str("t.c"), "3");
    EXPECT_EQ(f.keys().size(), 3u);
}

TEST(ConfigFile, RejectsMalformedLines) {
    EXPECT_THROW(ConfigFile::parse("[open\n"), ConfigError);
    EXPECT_THROW(ConfigFile::parse("novalue\n"), ConfigError);
    EXPECT_THROW(ConfigFile::parse("a = 1\na = 2\n"), ConfigError);
    EXPECT_THROW(ConfigFile::parse("[]\n"), ConfigError);
}

TEST(RunConfig, ParsesAValidConfiguration) {
    auto c = parse_run_config(kValid);
    EXPECT_EQ(c.model, "sine_kink");
    EXPECT_DOUBLE_EQ(c.lambda, 0.5);
    EXPECT_EQ(c.dim, 1);
    EXPECT_NEAR(c.box.lo[0], -2 * std::numbers::pi, 1e-15);
    EXPECT_EQ(c.resolution, std::vector<int>{64});
    EXPECT_DOUBLE_EQ(c.tol, 1e-4);
    EXPECT_NEAR(c.x0[0], std::numbers::pi, 1e-15);
    EXPECT_EQ(c.seed, 7u);
    EXPECT_TRUE(c.discounted());
    EXPECT_EQ(c.spec().lagrangian.name, "sine_kink");
}

TEST(RunConfig, HashIsStableAndSensitive) {
    auto a = parse_run_config(kValid), b = parse_run_config(kValid);
    EXPECT_EQ(a.hash(), b.hash());
    auto c = parse_run_config(std::string(kValid) + "\n[verify]\nsamples = 3\n");
    EXPECT_NE(a.hash(), c.hash());
    EXPECT_EQ(a.hash().size(), 16u);
}

TEST(RunConfig, ValidationErrors) {
    EXPECT_THROW(parse_run_config(""), ConfigError);
    EXPECT_THROW(parse_run_config("# only a comment\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = free\ngrid.box = 2, -2\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = free\ngrid.box = -2, 2\ngrid.resolution = 8\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = free\ngrid.box = -2, 2\ngrid.resolutoin = 32\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = nope\ngrid.box = -2, 2\n"), ConfigError);
    EXPECT_THROW(parse_run_config("grid.box = -2, 2\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = free\ngrid.box = -2, 2, 0\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = free\nproblem.lambda = 0\ngrid.box = -2, 2\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = free\ngrid.box = -2, 2\nevolve.times = 1, 0.5\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = free\ngrid.box = -2, 2\nevolve.u0 = -abs(q)\n"), ConfigError);
    EXPECT_THROW(parse_run_config("problem.model = free\ngrid.box = -2, 2\nsolver.tol = x\n"), ConfigError);
}

TEST(RunConfig, ExpressionModelsAndInitialData) {
    auto c = parse_run_config(
        "[problem]\nkind = evolutionary\nlagrangian = (v1^2 + v2^2)/2\n[grid]\nbox = -1 1 -2 2\nresolution = 20 24\n"
        "[evolve]\nu0 = -abs(x1) - x2^2\ntimes = 0.5 1\n");
    EXPECT_EQ(c.dim, 2);
    EXPECT_EQ(c.resolution, (std::vector<int>{20, 24}));
    EXPECT_FALSE(c.discounted());
    Vec x(2);
    x << -0.5, 1.0;
    EXPECT_DOUBLE_EQ(c.initial_function()(x), -1.5);
    EXPECT_EQ(c.times, (std::vector<double>{0.5, 1.0}));
    Vec v(2);
    v << 1, 2;
    EXPECT_DOUBLE_EQ(c.spec().lagrangian.L(0, x, v), 2.5);
}
