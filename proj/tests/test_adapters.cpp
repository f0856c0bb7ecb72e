#include <gtest/gtest.h>

#include <cmath>

#include "hoe/adapters.hpp"

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

WeightMap random_weights(RngStream& rng) {
    WeightMap w;
    w.emplace("layers.0", random_matrix(5, 4, rng, 1.0));
    w.emplace("layers.1", random_matrix(3, 5, rng, 1.0));
    return w;
}

ObjectiveVector single(std::vector<float> values) {
    ObjectiveVector t;
    const std::size_t n = values.size();
    t.deltas.emplace("m", Matrix(1, n, std::move(values)));
    return t;
}

double relative_error(const Matrix& a, const Matrix& b) { return frobenius_distance(a, b) / std::max(frobenius_norm(b), 1e-30); }

} // namespace

TEST(ObjectiveVector, Examples) {
    RngStream rng(1);
    const auto base = random_weights(rng);
    for (const auto& [p, m] : objective_vector(base, base).deltas)
        for (float v : m.data()) EXPECT_EQ(v, 0.0f);

    WeightMap zero;
    for (const auto& [p, m] : base) zero.emplace(p, Matrix(m.rows(), m.cols()));
    const auto ft = random_weights(rng);
    for (const auto& [p, m] : objective_vector(ft, zero).deltas) EXPECT_EQ(m, ft.at(p));

    const auto tau = objective_vector(ft, base);
    for (const auto& [p, m] : tau.deltas)
        for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m.data()[i], ft.at(p).data()[i] - base.at(p).data()[i]);
}

TEST(ObjectiveVector, ShapeMismatch) {
    WeightMap a, b;
    a.emplace("m", Matrix(2, 2));
    b.emplace("m", Matrix(2, 3));
    EXPECT_EQ(code_of([&] { objective_vector(a, b); }), errc::incompatible_models);
}

TEST(Prune, Examples) {
    const auto t = single({3, -1, 0.5, -2});
    EXPECT_EQ(magnitude_prune(t, 1.0).deltas.at("m"), t.deltas.at("m"));
    EXPECT_EQ(magnitude_prune(t, 0.5).deltas.at("m").data()[0], 3.0f);
    const auto p = magnitude_prune(t, 0.5).deltas.at("m");
    EXPECT_EQ(std::vector<float>(p.data().begin(), p.data().end()), (std::vector<float>{3, 0, 0, -2}));
}

TEST(Prune, ThresholdIsGlobalAcrossModules) {
    ObjectiveVector t;
    t.deltas.emplace("a", Matrix(1, 2, {10, 9}));
    t.deltas.emplace("b", Matrix(1, 2, {1, 2}));
    const auto p = magnitude_prune(t, 0.5);
    EXPECT_EQ(p.deltas.at("a"), t.deltas.at("a"));
    EXPECT_EQ(p.deltas.at("b"), Matrix(1, 2));
}

TEST(TaskSvd, LosslessRoundTrip) {
    RngStream rng(2);
    ObjectiveVector tau{random_weights(rng)};
    TaskSvdOptions opt;
    opt.rank = 4;
    opt.clamp_rank = true;
    const auto e = task_svd(tau, opt, Preference({1.0, 0.0}), "e");
    const auto back = to_dense(e);
    for (const auto& [p, m] : tau.deltas) EXPECT_LT(relative_error(back.deltas.at(p), m), 1e-5);
}

TEST(TaskSvd, RankOneDeltaExact) {
    const std::vector<float> u{1, -2, 0.5}, v{3, 1, -1, 2};
    Matrix d(3, 4);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) d(r, c) = u[r] * v[c];
    ObjectiveVector tau;
    tau.deltas.emplace("m", d);
    TaskSvdOptions opt;
    opt.rank = 1;
    EXPECT_LT(frobenius_distance(to_dense(task_svd(tau, opt, Preference({1.0}), "e")).deltas.at("m"), d), 1e-6);
}

TEST(TaskSvd, RankTooLargeUnlessClamped) {
    RngStream rng(3);
    ObjectiveVector tau{random_weights(rng)};
    TaskSvdOptions opt;
    opt.rank = 8;
    EXPECT_EQ(code_of([&] { task_svd(tau, opt, Preference({1.0}), "e"); }), errc::rank_too_large);
    opt.clamp_rank = true;
    const auto e = task_svd(tau, opt, Preference({1.0}), "e");
    EXPECT_EQ(e.modules.at("layers.1").down.rows(), 3u);
}

TEST(Calibrate, Examples) {
    LoraExpert e;
    const auto peaked = calibrate_rescale(e, [](const LoraExpert& x) { return -std::abs(x.rescale - 1.5); }, {0.5, 1.0, 1.5});
    EXPECT_EQ(peaked.rescale, 1.5);
    const auto flat = calibrate_rescale(e, [](const LoraExpert&) { return 1.0; }, {1.5, 0.7, 1.0});
    EXPECT_EQ(flat.rescale, 0.7);
    EXPECT_EQ(default_rescale_candidates().size(), 13u);
}

TEST(Merge, OneHotRecoversTau) {
    RngStream rng(4);
    const std::vector<ObjectiveVector> taus{{random_weights(rng)}, {random_weights(rng)}};
    const auto m = merge(taus, Preference({1.0, 0.0}), 1.0);
    for (const auto& [p, d] : taus[0].deltas) EXPECT_EQ(m.deltas.at(p), d);
}

TEST(Merge, IdenticalTausConsensus) {
    RngStream rng(5);
    ObjectiveVector t{random_weights(rng)};
    const auto m = merge({t, t}, Preference({0.5, 0.5}), 1.0);
    for (const auto& [p, d] : t.deltas) EXPECT_EQ(m.deltas.at(p), d);
}

TEST(Merge, ConflictingSignsElectMajorityMass) {
    const auto m = merge({single({2}), single({-1})}, Preference({0.7, 0.3}), 1.0);
    // Elected sign: 0.7*2 - 0.3*1 > 0, so only the first contributor counts: 0.7*2/0.7.
    EXPECT_DOUBLE_EQ(m.deltas.at("m").data()[0], 2.0);
}

TEST(Merge, DimensionMismatch) {
    EXPECT_EQ(code_of([] { merge({single({1})}, Preference({0.5, 0.5}), 1.0); }), errc::incompatible_models);
}

TEST(Rescale, LinearInGamma) {
    RngStream rng(6);
    ObjectiveVector tau{random_weights(rng)};
    TaskSvdOptions opt;
    opt.rank = 4;
    opt.clamp_rank = true;
    auto e = task_svd(tau, opt, Preference({1.0}), "e");
    e.rescale = 0.0;
    for (const auto& [p, m] : to_dense(e).deltas) EXPECT_EQ(frobenius_norm(m), 0.0);
    e.rescale = 1.0;
    const auto one = to_dense(e);
    e.rescale = 2.0;
    const auto two = to_dense(e);
    for (const auto& [p, m] : one.deltas) EXPECT_LT(frobenius_distance(scaled(m, 2.0), two.deltas.at(p)), 1e-5);
}

TEST(WeightedSum, MatchesLoop) {
    RngStream rng(7);
    const std::vector<ObjectiveVector> taus{{random_weights(rng)}, {random_weights(rng)}};
    const auto s = weighted_sum(taus, Preference({0.25, 0.75}));
    for (const auto& [p, m] : s.deltas)
        for (std::size_t i = 0; i < m.size(); ++i)
            EXPECT_NEAR(m.data()[i], 0.25 * taus[0].deltas.at(p).data()[i] + 0.75 * taus[1].deltas.at(p).data()[i], 1e-6);
}
