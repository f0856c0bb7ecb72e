#pragma once

// Run configuration as JSON. Every field is optional; missing fields take the
// defaults below, and the expert plan defaults depend on the objective count.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hoe/trainer.hpp"

namespace hoe {

struct ExtractionConfig {
    double keep_fraction = 0.6;
    std::size_t rank = 4;
    std::vector<double> rescale_candidates = default_rescale_candidates();
    bool calibrate = true;
};

struct ExpertPlan {
    std::vector<Preference> merged;   // interior LoRA experts built by merging
    std::vector<Preference> routers;
    // Place one extra router at the grid preference the LoRA-only model serves worst.
    bool adaptive_router = false;
};

struct OmdConfig {
    double alpha = 0.1;
    double smoothing_mu = 1.0;
    bool robbins_monro = false;
    bool lambda_in_update = true;
    double z_margin = 0.1;  // z* = ideal point + margin
};

struct EvalConfig {
    double grid_step = 0.1;
    std::size_t episodes = 1;
    std::vector<std::string> baselines{"rs", "mod"};
    bool morlhf = false;
    double morlhf_kl_coef = 0.1;  // replaces single_ppo.kl_coef for the per-preference oracle
};

struct RunConfig {
    std::size_t objectives = 2;
    EnvSpec env;
    std::vector<std::size_t> hidden{32, 32};
    ExtractionConfig extraction;
    ExpertPlan plan;
    PpoConfig single_ppo;
    PpoConfig router_ppo;
    Scalarization router_scalarization = Scalarization::stch;
    OmdConfig omd;
    EvalConfig eval;
    std::uint64_t seed = 1;

    void validate() const {
        require(objectives >= 1, errc::invalid_config, "objectives must be positive");
        require(env.objectives == objectives, errc::invalid_config, "env.objectives must equal objectives");
        require(env.vocab >= objectives + 1, errc::invalid_config, "env.vocab must exceed the objective count");
        require(env.horizon >= 1, errc::invalid_config, "env.horizon must be positive");
        require(!hidden.empty(), errc::invalid_config, "hidden layers required");
        require(extraction.keep_fraction > 0.0 && extraction.keep_fraction <= 1.0, errc::invalid_config,
                "extraction.keep_fraction must lie in (0, 1]");
        require(extraction.rank >= 1, errc::invalid_config, "extraction.rank must be positive");
        require(!extraction.rescale_candidates.empty(), errc::invalid_config, "rescale_candidates must not be empty");
        for (double c : extraction.rescale_candidates)
            require(c > 0.0, errc::invalid_config, "rescale candidates must be positive");
        for (const auto& p : plan.merged)
            require(p.size() == objectives, errc::invalid_config, "merged preference has the wrong length");
        for (const auto& p : plan.routers)
            require(p.size() == objectives, errc::invalid_config, "router preference has the wrong length");
        require(omd.alpha >= 0.0 && omd.smoothing_mu > 0.0, errc::invalid_config, "omd.alpha >= 0 and mu > 0 required");
        require(eval.grid_step > 0.0 && eval.grid_step <= 1.0, errc::invalid_config, "eval.grid_step must lie in (0, 1]");
        require(eval.episodes >= 1, errc::invalid_config, "eval.episodes must be positive");
        require(eval.morlhf_kl_coef >= 0.0, errc::invalid_config, "eval.morlhf_kl_coef must be non-negative");
        for (const auto& b : eval.baselines)
            require(b == "rs" || b == "mod", errc::invalid_config, "unknown baseline '" + b + "'");
        single_ppo.validate();
        router_ppo.validate();
    }

    TokenTradeEnv make_environment() const { return make_env(env); }

    OmdState omd_state(const TokenTradeEnv& e) const {
        auto s = OmdState::uniform(objectives, omd.alpha, default_z_star(e, omd.z_margin));
        s.smoothing_mu = omd.smoothing_mu;
        s.robbins_monro = omd.robbins_monro;
        s.lambda_in_update = omd.lambda_in_update;
        return s;
    }
};

/// 2 objectives: [0.5,0.5] merged plus one adaptively placed router.
/// 3 objectives: centroid merged plus a router at [0.25,0.25,0.5].
/// 5 objectives: [1/3,1/3,1/3,0,0] merged plus a router at the centroid.
/// Any other count: centroid merged plus a router at the centroid.
inline ExpertPlan default_plan(std::size_t n) {
    ExpertPlan plan;
    auto centroid = [n] { return Preference(std::vector<double>(n, 1.0 / static_cast<double>(n))); };
    if (n == 1) return plan;
    if (n == 2) {
        plan.merged.push_back(centroid());
        plan.adaptive_router = true;
    } else if (n == 3) {
        plan.merged.push_back(centroid());
        plan.routers.push_back(Preference({0.25, 0.25, 0.5}));
    } else if (n == 5) {
        plan.merged.push_back(Preference({1.0 / 3, 1.0 / 3, 1.0 / 3, 0.0, 0.0}));
        plan.routers.push_back(centroid());
    } else {
        plan.merged.push_back(centroid());
        plan.routers.push_back(centroid());
    }
    return plan;
}

inline RunConfig default_config(std::size_t objectives = 2) {
    RunConfig c;
    c.objectives = objectives;
    c.env.objectives = objectives;
    c.env.vocab = objectives + 1;
    c.plan = default_plan(objectives);
    c.single_ppo.total_iterations = 150;
    c.single_ppo.kl_coef = 0.3;
    c.router_ppo.total_iterations = 75;
    c.router_ppo.learning_rate = 0.03;
    return c;
}

namespace detail {

using nlohmann::json;

template <class T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const std::exception& e) {
        fail(errc::invalid_config, std::string("bad value for '") + key + "': " + e.what());
    }
}

inline void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    require(j.is_object(), errc::invalid_config, where + " must be an object");
    for (const auto& [k, _] : j.items()) {
        bool ok = false;
        for (const char* name : known) ok = ok || k == name;
        require(ok, errc::invalid_config, "unknown key '" + k + "' in " + where);
    }
}

inline std::vector<Preference> read_preferences(const json& j, const char* key) {
    std::vector<Preference> out;
    if (!j.contains(key)) return out;
    require(j[key].is_array(), errc::invalid_config, std::string(key) + " must be a list");
    for (const auto& p : j[key]) {
        try {
            out.push_back(normalized_preference(p.get<std::vector<double>>()));
        } catch (const error& e) {
            fail(errc::invalid_config, std::string(key) + ": " + e.what());
        } catch (const std::exception& e) {
            fail(errc::invalid_config, std::string(key) + ": " + e.what());
        }
    }
    return out;
}

inline void read_ppo(const json& j, PpoConfig& c, const std::string& where) {
    check_keys(j,
               {"clip_ratio", "epochs_per_batch", "batch_episodes", "minibatches", "learning_rate", "gae_lambda",
                "gamma", "entropy_coef", "value_coef", "kl_coef", "max_grad_norm", "total_iterations"},
               where);
    read_field(j, "clip_ratio", c.clip_ratio);
    read_field(j, "epochs_per_batch", c.epochs_per_batch);
    read_field(j, "batch_episodes", c.batch_episodes);
    read_field(j, "minibatches", c.minibatches);
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "gae_lambda", c.gae_lambda);
    read_field(j, "gamma", c.gamma);
    read_field(j, "entropy_coef", c.entropy_coef);
    read_field(j, "value_coef", c.value_coef);
    read_field(j, "kl_coef", c.kl_coef);
    read_field(j, "max_grad_norm", c.max_grad_norm);
    read_field(j, "total_iterations", c.total_iterations);
}

inline json ppo_json(const PpoConfig& c) {
    return {{"clip_ratio", c.clip_ratio},       {"epochs_per_batch", c.epochs_per_batch},
            {"batch_episodes", c.batch_episodes}, {"minibatches", c.minibatches},
            {"learning_rate", c.learning_rate}, {"gae_lambda", c.gae_lambda},
            {"gamma", c.gamma},                 {"entropy_coef", c.entropy_coef},
            {"value_coef", c.value_coef},       {"kl_coef", c.kl_coef},
            {"max_grad_norm", c.max_grad_norm}, {"total_iterations", c.total_iterations}};
}

inline json prefs_json(const std::vector<Preference>& ps) {
    json out = json::array();
    for (const auto& p : ps) out.push_back(p.weights());
    return out;
}

} // namespace detail

inline RunConfig parse_config(const std::string& text) {
    using detail::read_field;
    auto j = nlohmann::json::parse(text, nullptr, false, true);
    require(!j.is_discarded(), errc::invalid_config, "config is not valid JSON");
    detail::check_keys(j, {"objectives", "env", "hidden", "extraction", "plan", "single_ppo", "router_ppo",
                           "router_scalarization", "omd", "eval", "seed"},
                       "config");
    std::size_t n = 2;
    read_field(j, "objectives", n);
    RunConfig c = default_config(n);
    read_field(j, "seed", c.seed);
    read_field(j, "hidden", c.hidden);
    if (j.contains("env")) {
        const auto& e = j["env"];
        detail::check_keys(e, {"vocab", "horizon", "shape", "seed"}, "env");
        read_field(e, "vocab", c.env.vocab);
        read_field(e, "horizon", c.env.horizon);
        read_field(e, "seed", c.env.seed);
        if (e.contains("shape")) c.env.shape = frontier_shape_from(e["shape"].get<std::string>());
    }
    if (j.contains("extraction")) {
        const auto& e = j["extraction"];
        detail::check_keys(e, {"keep_fraction", "rank", "rescale_candidates", "calibrate"}, "extraction");
        read_field(e, "keep_fraction", c.extraction.keep_fraction);
        read_field(e, "rank", c.extraction.rank);
        read_field(e, "rescale_candidates", c.extraction.rescale_candidates);
        read_field(e, "calibrate", c.extraction.calibrate);
    }
    if (j.contains("plan")) {
        const auto& p = j["plan"];
        detail::check_keys(p, {"merged", "routers", "adaptive_router"}, "plan");
        if (p.contains("merged")) c.plan.merged = detail::read_preferences(p, "merged");
        if (p.contains("routers")) c.plan.routers = detail::read_preferences(p, "routers");
        read_field(p, "adaptive_router", c.plan.adaptive_router);
    }
    if (j.contains("single_ppo")) detail::read_ppo(j["single_ppo"], c.single_ppo, "single_ppo");
    if (j.contains("router_ppo")) detail::read_ppo(j["router_ppo"], c.router_ppo, "router_ppo");
    if (j.contains("router_scalarization")) {
        const auto s = j["router_scalarization"].get<std::string>();
        require(s == "stch" || s == "linear", errc::invalid_config, "router_scalarization must be stch or linear");
        c.router_scalarization = s == "stch" ? Scalarization::stch : Scalarization::linear;
    }
    if (j.contains("omd")) {
        const auto& o = j["omd"];
        detail::check_keys(o, {"alpha", "smoothing_mu", "robbins_monro", "lambda_in_update", "z_margin"}, "omd");
        read_field(o, "alpha", c.omd.alpha);
        read_field(o, "smoothing_mu", c.omd.smoothing_mu);
        read_field(o, "robbins_monro", c.omd.robbins_monro);
        read_field(o, "lambda_in_update", c.omd.lambda_in_update);
        read_field(o, "z_margin", c.omd.z_margin);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        detail::check_keys(e, {"grid_step", "episodes", "baselines", "morlhf", "morlhf_kl_coef"}, "eval");
        read_field(e, "grid_step", c.eval.grid_step);
        read_field(e, "episodes", c.eval.episodes);
        read_field(e, "baselines", c.eval.baselines);
        read_field(e, "morlhf", c.eval.morlhf);
        read_field(e, "morlhf_kl_coef", c.eval.morlhf_kl_coef);
    }
    c.env.objectives = c.objectives;
    c.validate();
    return c;
}

inline std::string dump_config(const RunConfig& c) {
    nlohmann::json j;
    j["objectives"] = c.objectives;
    j["seed"] = c.seed;
    j["hidden"] = c.hidden;
    j["env"] = {{"vocab", c.env.vocab}, {"horizon", c.env.horizon}, {"shape", to_string(c.env.shape)}, {"seed", c.env.seed}};
    j["extraction"] = {{"keep_fraction", c.extraction.keep_fraction},
                       {"rank", c.extraction.rank},
                       {"rescale_candidates", c.extraction.rescale_candidates},
                       {"calibrate", c.extraction.calibrate}};
    j["plan"] = {{"merged", detail::prefs_json(c.plan.merged)},
                 {"routers", detail::prefs_json(c.plan.routers)},
                 {"adaptive_router", c.plan.adaptive_router}};
    j["single_ppo"] = detail::ppo_json(c.single_ppo);
    j["router_ppo"] = detail::ppo_json(c.router_ppo);
    j["router_scalarization"] = to_string(c.router_scalarization);
    j["omd"] = {{"alpha", c.omd.alpha},
                {"smoothing_mu", c.omd.smoothing_mu},
                {"robbins_monro", c.omd.robbins_monro},
                {"lambda_in_update", c.omd.lambda_in_update},
                {"z_margin", c.omd.z_margin}};
    j["eval"] = {{"grid_step", c.eval.grid_step},
                 {"episodes", c.eval.episodes},
                 {"baselines", c.eval.baselines},
                 {"morlhf", c.eval.morlhf},
                 {"morlhf_kl_coef", c.eval.morlhf_kl_coef}};
    return j.dump(2);
}

} // namespace hoe
