#include <gtest/gtest.h>

#include <filesystem>

#include "hoe/checkpoint.hpp"
#include "hoe/config.hpp"
#include "hoe/svg.hpp"

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
    TokenTradeEnv env = make_env(EnvSpec{});
    PolicyNetwork base;
    std::vector<LoraExpert> lora;
    RouterExpert router;
    HoeModel model;

    Fixture() {
        RngStream rng(1);
        base = make_policy(env.obs_dim(), {6, 5}, env.vocab(), 2, rng);
        TaskSvdOptions opt;
        opt.rank = 2;
        for (std::size_t i = 0; i < 2; ++i) {
            ObjectiveVector tau;
            for (const auto& l : base.layers) tau.deltas.emplace(l.module_path, random_matrix(l.d_out(), l.d_in(), rng, 0.3));
            lora.push_back(task_svd(tau, opt, one_hot(2, i), "single_" + std::to_string(i)));
        }
        lora[1].rescale = 1.25;
        router = make_router("router_0", Preference({0.5, 0.5}), {"single_0", "single_1"}, base, rng, 0.5);
        model = assemble(base, lora, {router});
    }
};

} // namespace

TEST(Checkpoint, DenseRoundTripIsByteIdentical) {
    Fixture f;
    const auto bytes = encode(f.base, 42);
    EXPECT_EQ(encode(decode_dense(bytes), 42), bytes);
    EXPECT_EQ(checkpoint_seed(bytes), 42u);
}

TEST(Checkpoint, ExpertsRoundTrip) {
    Fixture f;
    const auto lb = encode(f.lora[1]);
    const auto lora = decode_lora(lb);
    EXPECT_EQ(lora.rescale, 1.25);
    EXPECT_EQ(encode(lora), lb);
    const auto rb = encode(f.router);
    const auto router = decode_router(rb);
    EXPECT_EQ(router.preference.vec(), (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(encode(router), rb);
}

TEST(Checkpoint, ModelRoundTripKeepsBehaviour) {
    Fixture f;
    const auto bytes = encode(f.model, 7);
    const auto back = decode_model(bytes);
    EXPECT_EQ(encode(back, 7), bytes);
    for (const auto& lambda : grid(2, 0.25)) {
        const auto a = hoe_policy(f.model, lambda), b = hoe_policy(back, lambda);
        for (std::size_t s = 0; s < f.env.obs_dim(); ++s) EXPECT_EQ(a(f.env.observe(s)), b(f.env.observe(s)));
    }
}

TEST(Checkpoint, FileRoundTrip) {
    Fixture f;
    const auto dir = std::filesystem::temp_directory_path() / "hoe_persist_test";
    std::filesystem::create_directories(dir);
    save(dir / "m.ckpt", f.model, 3);
    EXPECT_EQ(encode(load_model(dir / "m.ckpt"), 3), encode(f.model, 3));
    EXPECT_EQ(code_of([&] { load_model(dir / "missing.ckpt"); }), errc::io_failure);
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsDetected) {
    Fixture f;
    const auto bytes = encode(f.model);
    EXPECT_EQ(code_of([&] { decode_model(bytes.substr(0, bytes.size() - 9)); }), errc::corrupt_checkpoint);
    EXPECT_EQ(code_of([&] { decode_model("garbage"); }), errc::corrupt_checkpoint);
    auto broken = bytes;
    broken[broken.find('{') + 1] = '#';
    EXPECT_EQ(code_of([&] { decode_model(broken); }), errc::corrupt_checkpoint);
    EXPECT_EQ(code_of([&] { decode_dense(encode(f.lora[0])); }), errc::corrupt_checkpoint);
}

TEST(Config, DefaultsRoundTrip) {
    const auto c = default_config();
    const auto text = dump_config(c);
    EXPECT_EQ(dump_config(parse_config(text)), text);
    EXPECT_NO_THROW(c.validate());
    EXPECT_TRUE(default_config(3).plan.routers.size() == 1);
}

TEST(Config, PartialOverrides) {
    const auto c = parse_config(R"({"seed": 9, "env": {"shape": "nonconvex"}, "eval": {"baselines": ["rs"]}})");
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.env.shape, FrontierShape::nonconvex);
    EXPECT_EQ(c.eval.baselines, (std::vector<std::string>{"rs"}));
    EXPECT_EQ(c.single_ppo.total_iterations, default_config().single_ppo.total_iterations);
}

TEST(Config, Rejections) {
    EXPECT_EQ(code_of([] { parse_config(R"({"bogus": 1})"); }), errc::invalid_config);
    EXPECT_EQ(code_of([] { parse_config(R"({"single_ppo": {"lr": 1}})"); }), errc::invalid_config);
    EXPECT_EQ(code_of([] { parse_config("{not json"); }), errc::invalid_config);
    EXPECT_EQ(code_of([] { parse_config(R"({"eval": {"baselines": ["xyz"]}})").validate(); }), errc::invalid_config);
    EXPECT_EQ(code_of([] { parse_config(R"({"seed": "one"})"); }), errc::invalid_config);
}

TEST(Svg, OnePolylinePerMethod) {
    std::vector<ParetoPoint> pts;
    for (const auto& p : grid(2, 0.5)) {
        pts.push_back({p, {10 * p[0], 10 * p[1]}, 1, "hoe", 1});
        pts.push_back({p, {8 * p[0], 8 * p[1]}, 1, "rs", 1});
    }
    const auto svg = frontier_svg(pts);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    std::size_t lines = 0;
    for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++lines;
    EXPECT_EQ(lines, 2u);
    EXPECT_NE(svg.find("hoe"), std::string::npos);
    EXPECT_EQ(svg, frontier_svg(pts));
}
