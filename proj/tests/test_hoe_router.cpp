#include <gtest/gtest.h>

#include "hoe/hoe_router.hpp"

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

struct Fixture {
    PolicyNetwork base;
    std::vector<LoraExpert> lora;

    explicit Fixture(std::uint64_t seed = 1) {
        RngStream rng(seed);
        base = make_policy(4, {6, 6}, 3, 2, rng);
        lora.push_back(expert("e0", Preference({1.0, 0.0}), rng));
        lora.push_back(expert("e1", Preference({0.0, 1.0}), rng));
        lora.push_back(expert("m", Preference({0.5, 0.5}), rng));
    }

    LoraExpert expert(std::string id, Preference p, RngStream& rng) const {
        ObjectiveVector tau;
        for (const auto& l : base.layers) tau.deltas.emplace(l.module_path, random_matrix(l.d_out(), l.d_in(), rng, 0.5));
        TaskSvdOptions opt;
        opt.rank = 2;
        return task_svd(tau, opt, std::move(p), std::move(id));
    }
};

const std::vector<double> obs{0, 0, 1, 0};

} // namespace

TEST(Assemble, EmptyRouterRegistry) {
    Fixture f;
    const auto m = assemble(f.base, f.lora, {});
    EXPECT_EQ(m.preferences.size(), 3u);
    EXPECT_NO_THROW(infer_trace(m, Preference({0.3, 0.7}), obs));
}

TEST(Assemble, DuplicateIdAndShapeErrors) {
    Fixture f;
    auto dup = f.lora;
    dup.push_back(f.lora[0]);
    EXPECT_EQ(code_of([&] { assemble(f.base, dup, {}); }), errc::duplicate_expert);
    auto bad = f.lora;
    bad[1].modules.begin()->second.down = Matrix(2, 9);
    EXPECT_EQ(code_of([&] { assemble(f.base, bad, {}); }), errc::incompatible_models);
}

TEST(Route, ExampleSelection) {
    Fixture f;
    const auto m = assemble(f.base, f.lora, {});
    const auto a = route(m, Preference({0.8, 0.2}));
    EXPECT_EQ(a.selected, (std::vector<std::size_t>{0, 2}));
    EXPECT_NEAR(a.omega_r[0], 0.6, 1e-12);
    EXPECT_NEAR(a.omega_r[2], 0.4, 1e-12);
    const auto one = route(m, Preference({1.0, 0.0}));
    EXPECT_NEAR(one.omega_r[0], 1.0, 1e-12);
    const auto mid = route(m, Preference({0.5, 0.5}));
    EXPECT_NEAR(mid.omega_r[2], 1.0, 1e-12);
}

TEST(Route, RouterAtUserPreferenceGetsAllMass) {
    Fixture f;
    RngStream rng(2);
    auto r = make_router("r", Preference({0.3, 0.7}), {"e1", "m"}, f.base, rng);
    const auto m = assemble(f.base, f.lora, {r});
    const auto a = route(m, Preference({0.3, 0.7}));
    EXPECT_NEAR(a.omega_r[3], 1.0, 1e-12);
}

TEST(Route, RouterWinsTieAgainstLora) {
    Fixture f;
    RngStream rng(3);
    auto r = make_router("r", Preference({0.5, 0.5}), {"e0", "m"}, f.base, rng);
    const auto m = assemble(f.base, f.lora, {r});
    const auto a = route(m, Preference({0.5, 0.5}));
    EXPECT_NEAR(a.omega_r[3], 1.0, 1e-12);
    EXPECT_EQ(a.omega_r[2], 0.0);
}

TEST(RouterScores, Examples) {
    Fixture f;
    RngStream rng(4);
    auto r = make_router("r", Preference({0.5, 0.5}), {"e0", "e1"}, f.base, rng);
    auto& layer = r.modules.at("layers.0");
    layer.weight = Matrix(2, 4);
    layer.bias = {1.0f, 2.0f};
    EXPECT_EQ(router_scores(r, "layers.0", obs), (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(router_scores(r, "layers.0", std::vector<double>(4, 0.0)), (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(code_of([&] { router_scores(r, "layers.9", obs); }), errc::unknown_module);

    auto& l1 = r.modules.at("layers.1");
    const std::vector<double> x{0.1, -0.2, 0.3, 0.4, -0.5, 0.6};
    const auto s = router_scores(r, "layers.1", x);
    for (std::size_t k = 0; k < 2; ++k) {
        double acc = l1.bias[k];
        for (std::size_t c = 0; c < x.size(); ++c) acc += double(l1.weight(k, c)) * x[c];
        EXPECT_NEAR(s[k], acc, 1e-6);
    }
}

TEST(MixWeights, Examples) {
    Fixture f;
    RngStream rng(5);
    auto r = make_router("r", Preference({0.3, 0.7}), {"e1", "m"}, f.base, rng);
    for (auto& [_, l] : r.modules) l.weight = Matrix(l.weight.rows(), l.weight.cols());
    const auto m = assemble(f.base, f.lora, {r});
    const std::vector<double> x(4, 0.25);

    RoutingAssignment lora_only{{1}, {0, 1, 0, 0}, false};
    EXPECT_EQ(mix_weights(m, lora_only, "layers.0", x), (std::vector<double>{0, 1, 0}));

    RoutingAssignment router_only{{3}, {0, 0, 0, 1}, false};
    const auto w = mix_weights(m, router_only, "layers.0", x);
    EXPECT_NEAR(w[1], 0.5, 1e-12);
    EXPECT_NEAR(w[2], 0.5, 1e-12);

    RoutingAssignment pair{{0, 1}, {0.5, 0.5, 0, 0}, false};
    EXPECT_EQ(mix_weights(m, pair, "layers.0", x), (std::vector<double>{0.5, 0.5, 0}));
}

TEST(Infer, OneHotEqualsDenseExpertPolicy) {
    Fixture f;
    const auto m = assemble(f.base, f.lora, {});
    const auto dense = f.base.with_weights(apply_delta(f.base.weight_map(), to_dense(f.lora[1])));
    for (std::size_t s = 0; s < 4; ++s) {
        std::vector<double> o(4, 0.0);
        o[s] = 1.0;
        const auto a = infer_trace(m, Preference({0.0, 1.0}), o).logits;
        const auto b = forward(dense, o, NoMixer{}).logits;
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5);
    }
}

TEST(Infer, Deterministic) {
    Fixture f;
    const auto m = assemble(f.base, f.lora, {});
    RngStream a(9), b(9);
    for (int i = 0; i < 20; ++i)
        EXPECT_EQ(infer(m, Preference({0.2, 0.8}), obs, a).action, infer(m, Preference({0.2, 0.8}), obs, b).action);
}

TEST(AddExpert, PadsPreferences) {
    Fixture f;
    const auto m = assemble(f.base, f.lora, {});
    RngStream rng(6);
    const auto grown = add_expert(m, f.expert("e2", Preference({0.0, 0.0, 1.0}), rng));
    EXPECT_EQ(grown.preferences[2].vec(), (std::vector<double>{0.5, 0.5, 0.0}));
    EXPECT_EQ(grown.objectives(), 3u);
    EXPECT_EQ(code_of([&] { add_expert(grown, f.lora[0]); }), errc::duplicate_expert);
}

TEST(AddExpert, RoutingUnchangedAwayFromNewObjective) {
    Fixture f;
    const auto m = assemble(f.base, f.lora, {});
    RngStream rng(7);
    const auto grown = add_expert(m, f.expert("e2", Preference({0.0, 0.0, 1.0}), rng));
    for (double a : {0.0, 0.2, 0.5, 0.8, 1.0}) {
        const auto before = route(m, normalized_preference({a, 1.0 - a}));
        const auto after = route(grown, normalized_preference({a, 1.0 - a, 0.0}));
        if (std::find(after.selected.begin(), after.selected.end(), 3u) != after.selected.end()) continue;
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(before.omega_r[i], after.omega_r[i], 1e-12) << a;
        EXPECT_EQ(after.omega_r[3], 0.0);
    }
}
