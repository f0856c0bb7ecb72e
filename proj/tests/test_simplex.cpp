#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "hoe/numkernel.hpp"
#include "hoe/simplex.hpp"

using namespace hoe;

namespace {

template <class F>
errc code_of(F&& f) {
    try {
        f();
    } catch (const error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return errc::io_failure;
}

Preference random_preference(std::size_t n, RngStream& rng) {
    std::vector<double> w(n);
    double total = 0.0;
    for (auto& x : w) total += (x = -std::log(1.0 - rng.uniform()));
    for (auto& x : w) x /= total;
    return normalized_preference(w, 1e-9);
}

std::vector<double> combine(std::span<const Preference> pts, std::span<const double> w) {
    std::vector<double> out(pts[0].size(), 0.0);
    for (std::size_t j = 0; j < pts.size(); ++j)
        for (std::size_t d = 0; d < out.size(); ++d) out[d] += w[j] * pts[j][d];
    return out;
}

} // namespace

TEST(Validate, Examples) {
    EXPECT_NO_THROW(validate(std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(code_of([] { validate(std::vector<double>{0.7, 0.4}); }), errc::not_on_simplex);
    EXPECT_EQ(code_of([] { validate(std::vector<double>{1.2, -0.2}); }), errc::not_on_simplex);
    const auto p = validate(std::vector<double>{1.0, -0.0});
    EXPECT_FALSE(std::signbit(p[1]));
}

TEST(Grid, TwoObjectivesTenthStep) {
    const auto g = grid(2, 0.1);
    ASSERT_EQ(g.size(), 11u);
    EXPECT_EQ(g.front().vec(), (std::vector<double>{0.0, 1.0}));
    EXPECT_EQ(g.back().vec(), (std::vector<double>{1.0, 0.0}));
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i][0], 0.1 * static_cast<double>(i), 1e-12);
}

TEST(Grid, HalfSteps) {
    const auto g = grid(2, 0.5);
    ASSERT_EQ(g.size(), 3u);
    EXPECT_EQ(g[1].vec(), (std::vector<double>{0.5, 0.5}));
    const auto g3 = grid(3, 0.5);
    // Independent count: lattice points with a+b+c = 2.
    std::size_t count = 0;
    for (int a = 0; a <= 2; ++a)
        for (int b = 0; a + b <= 2; ++b) ++count;
    EXPECT_EQ(g3.size(), count);
    EXPECT_EQ(g3.size(), 6u);
}

TEST(Grid, RejectsNonDividingStep) {
    EXPECT_EQ(code_of([] { grid(2, 0.3); }), errc::invalid_step);
    EXPECT_EQ(code_of([] { grid(2, 0.0); }), errc::invalid_step);
}

TEST(EvalSet, ThirteenListedPoints) {
    const auto s = eval_set_3obj();
    ASSERT_EQ(s.size(), 13u);
    EXPECT_EQ(s.front().vec(), (std::vector<double>{0.0, 0.0, 1.0}));
    EXPECT_EQ(s.back().vec(), (std::vector<double>{1.0, 0.0, 0.0}));
    EXPECT_NEAR(s[7][0], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(s[3][1], 0.8, 1e-12);
}

TEST(Nearest, Examples) {
    const std::vector<Preference> two{Preference({1.0, 0.0}), Preference({0.0, 1.0})};
    EXPECT_EQ(nearest_experts(Preference({1.0, 0.0}), two, 1), (std::vector<std::size_t>{0}));
    const std::vector<Preference> three{Preference({1.0, 0.0}), Preference({0.5, 0.5}), Preference({0.0, 1.0})};
    EXPECT_EQ(nearest_experts(Preference({0.8, 0.2}), three, 2), (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(nearest_experts(Preference({0.5, 0.5}), two, 1), (std::vector<std::size_t>{0}));
    EXPECT_EQ(code_of([] { nearest_experts(Preference({0.5, 0.5}), std::vector<Preference>{}, 1); }),
              errc::empty_registry);
}

TEST(Nearest, MatchesBruteForce) {
    RngStream rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Preference> reg;
        for (int i = 0; i < 7; ++i) reg.push_back(random_preference(3, rng));
        const auto user = random_preference(3, rng);
        const auto got = nearest_experts(user, reg, 3);
        // Oracle: repeatedly take the minimum-distance unused index.
        std::vector<bool> used(reg.size(), false);
        for (std::size_t k = 0; k < 3; ++k) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < reg.size(); ++i) {
                if (used[i]) continue;
                double d = 0.0;
                for (int j = 0; j < 3; ++j) d += (user[j] - reg[i][j]) * (user[j] - reg[i][j]);
                if (d < bd) bd = d, best = i;
            }
            used[best] = true;
            EXPECT_EQ(got[k], best);
        }
    }
}

TEST(ConvexCoords, Examples) {
    const std::vector<Preference> sel{Preference({1.0, 0.0}), Preference({0.5, 0.5})};
    const auto c = convex_coords(Preference({0.8, 0.2}), sel);
    EXPECT_NEAR(c.weights[0], 0.6, 1e-12);
    EXPECT_NEAR(c.weights[1], 0.4, 1e-12);
    EXPECT_FALSE(c.projected);
    const auto at = convex_coords(Preference({0.5, 0.5}), sel);
    EXPECT_NEAR(at.weights[1], 1.0, 1e-12);
    const std::vector<Preference> corners{Preference({1.0, 0.0, 0.0}), Preference({0.0, 1.0, 0.0}),
                                          Preference({0.0, 0.0, 1.0})};
    const auto user = normalized_preference({0.33, 0.33, 0.34});
    const auto b = convex_coords(user, corners);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.weights[i], user[i], 1e-12);
}

TEST(ConvexCoords, DegenerateSelection) {
    const std::vector<Preference> sel{Preference({0.5, 0.5}), Preference({0.5, 0.5})};
    EXPECT_EQ(code_of([&] { convex_coords(Preference({0.5, 0.5}), sel); }), errc::degenerate_simplex);
}

TEST(ConvexCoords, InfeasibleFallsBackToProjection) {
    const std::vector<Preference> sel{Preference({1.0, 0.0}), Preference({0.5, 0.5})};
    const auto c = convex_coords(Preference({0.2, 0.8}), sel);
    EXPECT_TRUE(c.projected);
    EXPECT_NEAR(c.weights[1], 1.0, 1e-12);
}

TEST(Projection, NoWorseThanGridSearch) {
    RngStream rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Preference> sel;
        for (int i = 0; i < 3; ++i) sel.push_back(random_preference(3, rng));
        const auto user = random_preference(3, rng);
        const auto proj = project_onto_hull(user, sel);
        double oracle = std::numeric_limits<double>::infinity();
        for (int a = 0; a <= 200; ++a)
            for (int b = 0; a + b <= 200; ++b) {
                const std::vector<double> w{a / 200.0, b / 200.0, (200 - a - b) / 200.0};
                oracle = std::min(oracle, euclidean_distance(combine(sel, w), user.weights()));
            }
        EXPECT_LE(proj.residual, oracle + 1e-12);
        EXPECT_NEAR(euclidean_distance(combine(sel, proj.weights), user.weights()), proj.residual, 1e-12);
        double total = 0.0;
        for (double w : proj.weights) {
            EXPECT_GE(w, 0.0);
            total += w;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Preference, PaddingAndOneHot) {
    const auto p = Preference({0.5, 0.5}).padded(3);
    EXPECT_EQ(p.vec(), (std::vector<double>{0.5, 0.5, 0.0}));
    EXPECT_EQ(Preference({0.0, 1.0}).one_hot_index(), std::optional<std::size_t>(1));
    EXPECT_FALSE(Preference({0.5, 0.5}).one_hot_index().has_value());
}
