#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "homlab/harness.hpp"
#include "homlab/truncate.hpp"

using namespace homlab;

TEST(Truncate, ClampValues) {
    EXPECT_EQ(t_cut(5, CutLevel(3)), 3);
    EXPECT_EQ(t_cut(-5, CutLevel(3)), -3);
    EXPECT_EQ(t_cut(1.5, CutLevel(3)), 1.5);
}

TEST(Truncate, ComplementValues) {
    EXPECT_EQ(g_cut(5, CutLevel(2)), 3);
    EXPECT_EQ(g_cut(1.5, CutLevel(2)), 0);
    EXPECT_EQ(g_cut(-5, CutLevel(2)), -3);
}

TEST(Truncate, PlateauRamp) {
    EXPECT_EQ(z_delta(0.05, 0.1), 1.0);
    EXPECT_NEAR(z_delta(0.15, 0.1), 0.5, 1e-15);
    EXPECT_EQ(z_delta(0.30, 0.1), 0.0);
    EXPECT_EQ(z_delta(0.1, 0.1), 1.0);
    EXPECT_EQ(z_delta(0.2, 0.1), 0.0);
}

TEST(Truncate, Window) {
    EXPECT_EQ(s_window(0.5, {1, 3}), 0);
    EXPECT_EQ(s_window(2, {1, 3}), 1);
    EXPECT_EQ(s_window(10, {1, 3}), 2);
}

TEST(Truncate, SpotChain) {
    EXPECT_EQ(g_cut(5, CutLevel(1)), 4);
    EXPECT_EQ(s_window(5, {1, 3}) + g_cut(5, CutLevel(3)), 4);
}

TEST(Truncate, RejectsBadInput) {
    EXPECT_THROW(CutLevel(0.0), Error);
    EXPECT_THROW(CutLevel(-1.0), Error);
    EXPECT_THROW(CutLevel(std::nan("")), Error);
    EXPECT_THROW(WindowLevels(2, 1), Error);
    EXPECT_THROW(WindowLevels(1, 1), Error);
    EXPECT_THROW(t_cut(std::numeric_limits<double>::infinity(), CutLevel(1)), Error);
    EXPECT_THROW(g_cut(std::nan(""), CutLevel(1)), Error);
    EXPECT_THROW(z_delta(-0.1, 0.1), Error);
    EXPECT_THROW(z_delta(0.1, 0.0), Error);
    EXPECT_THROW(s_window(-1.0, {1, 2}), Error);
}

TEST(Truncate, IdentitiesOnDyadicDraws) {
    const auto a = truncation_audit(100000, 11);
    EXPECT_EQ(a.split_failures, 0u);
    EXPECT_EQ(a.chain_failures, 0u);
    EXPECT_EQ(a.window_failures, 0u);
}

// Full-precision draws: the split identity is bit-exact except when s - k is
// a rounding tie, where no double G can make T + G round back to s.
TEST(Truncate, SplitFailuresAreOnlyRoundingTies) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ds(-16.0, 16.0), dk(0.25, 8.0);
    int ties = 0;
    for (int i = 0; i < 100000; ++i) {
        const double s = ds(rng), k = dk(rng);
        const double t = t_cut(s, CutLevel(k)), g = g_cut(s, CutLevel(k));
        if (t + g == s) continue;
        // Exact residual of the subtraction via long double (64-bit mantissa).
        const long double exact = static_cast<long double>(s) - static_cast<long double>(t);
        const long double err = static_cast<long double>(g) - exact;
        const long double half_ulp = 0.5L * static_cast<long double>(ulp_of(g));
        ASSERT_EQ(std::abs(err), half_ulp) << "s=" << s << " k=" << k;
        EXPECT_LE(std::abs(t + g - s), ulp_of(s));
        ++ties;
    }
    EXPECT_LT(ties, 5000);
}

TEST(Truncate, IdentitiesOnNegativeArguments) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ds(-4.0, 0.0), dk(0.1, 4.0);
    for (int i = 0; i < 10000; ++i) {
        const double s = std::ldexp(std::floor(std::ldexp(ds(rng), 30)), -30);
        const double k = std::ldexp(std::floor(std::ldexp(dk(rng), 30)), -30);
        EXPECT_EQ(t_cut(s, CutLevel(k)) + g_cut(s, CutLevel(k)), s);
    }
}

TEST(Truncate, Lipschitz) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ds(0.0, 10.0);
    const CutLevel k(2.0);
    const WindowLevels w(1.0, 3.0);
    const double delta = 0.3;
    const double slack = 1e-12;
    for (int i = 0; i < 100000; ++i) {
        const double a = ds(rng), b = ds(rng);
        const double d = std::abs(a - b);
        EXPECT_LE(std::abs(t_cut(a, k) - t_cut(b, k)), d + slack);
        EXPECT_LE(std::abs(g_cut(a, k) - g_cut(b, k)), d + slack);
        EXPECT_LE(std::abs(s_window(a, w) - s_window(b, w)), d + slack);
        EXPECT_LE(std::abs(z_delta(a, delta) - z_delta(b, delta)), d / delta + slack);
    }
}

TEST(Truncate, RangeAndMonotone) {
    for (double s = -6; s <= 6; s += 0.125) {
        const double t = t_cut(s, CutLevel(2));
        EXPECT_GE(t, -2);
        EXPECT_LE(t, 2);
        if (s >= 0) {
            const double z = z_delta(s, 0.5);
            EXPECT_GE(z, 0.0);
            EXPECT_LE(z, 1.0);
        }
    }
}
