#pragma once

// Hierarchical assembly: LoRA experts (primary), router experts (secondary) and
// parameter-free preference routing (tertiary).

#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "hoe/adapters.hpp"
#include "hoe/policy.hpp"
#include "hoe/simplex.hpp"

namespace hoe {

struct RouterLayer {
    Matrix weight;  // assigned x d_in
    std::vector<float> bias;
};

/// One affine scorer per module, voting over its assigned LoRA experts.
struct RouterExpert {
    std::string id;
    Preference preference;
    std::vector<std::string> assigned;
    std::map<std::string, RouterLayer> modules;
};

inline std::vector<double> router_scores(const RouterExpert& router, const std::string& module_path,
                                         std::span<const double> x) {
    auto it = router.modules.find(module_path);
    if (it == router.modules.end()) fail(errc::unknown_module, "router " + router.id + " has no module " + module_path);
    auto scores = matvec(it->second.weight, x);
    for (std::size_t k = 0; k < scores.size(); ++k) scores[k] += it->second.bias[k];
    return scores;
}

/// Fresh router for every module of `net`, small seeded weights and zero bias.
inline RouterExpert make_router(std::string id, const Preference& preference, std::vector<std::string> assigned,
                                const PolicyNetwork& net, RngStream& rng, double init_std = 0.01) {
    require(!assigned.empty(), errc::invalid_input, "router needs assigned experts");
    RouterExpert r;
    r.id = std::move(id);
    r.preference = preference;
    r.assigned = std::move(assigned);
    for (const auto& l : net.layers) {
        RouterLayer layer{random_matrix(r.assigned.size(), l.d_in(), rng, init_std), std::vector<float>(r.assigned.size(), 0.0f)};
        r.modules.emplace(l.module_path, std::move(layer));
    }
    return r;
}

class HoeModel {
public:
    PolicyNetwork base;                  // frozen pre-trained weights, no experts attached
    std::vector<LoraExpert> lora;        // L entries
    std::vector<RouterExpert> routers;   // R entries
    std::vector<Preference> preferences; // L + R, LoRA first
    PolicyNetwork plugged;               // base with every LoRA expert attached in registry order

    std::size_t objectives() const noexcept { return preferences.empty() ? 0 : preferences.front().size(); }
    std::size_t lora_count() const noexcept { return lora.size(); }

    std::size_t lora_index(const std::string& id) const {
        for (std::size_t i = 0; i < lora.size(); ++i)
            if (lora[i].id == id) return i;
        fail(errc::incompatible_models, "unknown LoRA expert " + id);
    }

    std::size_t layer_index(const std::string& module_path) const {
        for (std::size_t i = 0; i < base.layers.size(); ++i)
            if (base.layers[i].module_path == module_path) return i;
        fail(errc::unknown_module, "unknown module " + module_path);
    }
};

namespace detail {

inline void check_router(const HoeModel& model, const RouterExpert& r) {
    require(r.modules.size() == model.base.layers.size(), errc::incompatible_models,
            "router " + r.id + " does not cover every module");
    for (const auto& l : model.base.layers) {
        auto it = r.modules.find(l.module_path);
        require(it != r.modules.end(), errc::incompatible_models, "router " + r.id + " misses module " + l.module_path);
        require(it->second.weight.rows() == r.assigned.size() && it->second.weight.cols() == l.d_in() &&
                    it->second.bias.size() == r.assigned.size(),
                errc::incompatible_models, "router " + r.id + " has wrong shape at " + l.module_path);
    }
    for (const auto& id : r.assigned) (void)model.lora_index(id);
}

} // namespace detail

inline HoeModel assemble(const PolicyNetwork& base, std::vector<LoraExpert> lora_experts,
                         std::vector<RouterExpert> router_experts) {
    HoeModel model;
    model.base = base.without_experts();
    model.plugged = model.base;
    std::set<std::string> ids;
    std::size_t dims = 0;
    auto check_pref = [&](const Preference& p, const std::string& id) {
        require(ids.insert(id).second, errc::duplicate_expert, "duplicate expert id " + id);
        (void)validate(p.weights());
        if (dims == 0) dims = p.size();
        require(p.size() == dims, errc::incompatible_models, "expert " + id + " has a different objective count");
    };
    for (const auto& e : lora_experts) {
        check_pref(e.preference, e.id);
        model.plugged.attach(e);
    }
    for (const auto& r : router_experts) check_pref(r.preference, r.id);
    model.lora = std::move(lora_experts);
    for (const auto& e : model.lora) model.preferences.push_back(e.preference);
    for (const auto& r : router_experts) model.preferences.push_back(r.preference);
    model.routers = std::move(router_experts);
    for (const auto& r : model.routers) detail::check_router(model, r);
    return model;
}

/// Nearest-N selection over all expert preferences followed by convex coordinates.
/// At equal distance a router is chosen before a LoRA expert.
/// Degenerate (affinely dependent) selections use the constrained projection.
inline RoutingAssignment route(const HoeModel& model, const Preference& user) {
    require(!model.preferences.empty(), errc::empty_registry, "model has no experts");
    require(user.size() == model.objectives(), errc::invalid_input, "user preference has the wrong objective count");
    const std::size_t k = std::min(model.objectives(), model.preferences.size());
    RoutingAssignment out;
    // Routers are listed first so that they win distance ties against LoRA experts.
    std::vector<std::size_t> order;
    for (std::size_t i = model.lora_count(); i < model.preferences.size(); ++i) order.push_back(i);
    for (std::size_t i = 0; i < model.lora_count(); ++i) order.push_back(i);
    std::vector<Preference> ordered;
    for (auto i : order) ordered.push_back(model.preferences[i]);
    for (auto i : nearest_experts(user, ordered, k)) out.selected.push_back(order[i]);
    std::vector<Preference> chosen;
    for (auto i : out.selected) chosen.push_back(model.preferences[i]);
    ConvexCoords coords;
    try {
        coords = convex_coords(user, chosen);
    } catch (const error& e) {
        if (e.code() != errc::degenerate_simplex) throw;
        coords = project_onto_hull(user, chosen);
    }
    out.projected = coords.projected;
    out.omega_r.assign(model.preferences.size(), 0.0);
    for (std::size_t j = 0; j < out.selected.size(); ++j) out.omega_r[out.selected[j]] = coords.weights[j];
    return out;
}

/// omega_l over the LoRA registry for one module: selected LoRA entries pass their
/// mass straight through; selected routers spread theirs by softmax of their scores.
inline std::vector<double> mix_weights(const HoeModel& model, const RoutingAssignment& assignment,
                                       const std::string& module_path, std::span<const double> x) {
    std::vector<double> omega(model.lora_count(), 0.0);
    for (auto idx : assignment.selected) {
        const double mass = assignment.omega_r[idx];
        if (mass == 0.0) continue;
        if (idx < model.lora_count()) {
            omega[idx] += mass;
            continue;
        }
        const auto& router = model.routers[idx - model.lora_count()];
        const auto probs = softmax(router_scores(router, module_path, x));
        for (std::size_t k = 0; k < probs.size(); ++k) omega[model.lora_index(router.assigned[k])] += mass * probs[k];
    }
    return omega;
}

/// Mixer for inference: module-wise routing from each layer's own input.
struct RoutedMixer {
    const HoeModel* model;
    RoutingAssignment assignment;

    std::vector<double> omega(std::size_t layer, std::span<const double> x) const {
        return mix_weights(*model, assignment, model->base.layers[layer].module_path, x);
    }
    void backprop(std::size_t, std::span<const double>, std::span<const double>, std::span<double>) {}
};

inline ForwardTrace infer_trace(const HoeModel& model, const Preference& user, std::span<const double> obs) {
    return forward(model.plugged, obs, RoutedMixer{&model, route(model, user)});
}

inline ActionSample infer(const HoeModel& model, const Preference& user, std::span<const double> obs, RngStream& rng) {
    return sample_action(infer_trace(model, user, obs).logits, rng);
}

using AnyExpert = std::variant<LoraExpert, RouterExpert>;

/// Returns a new model with `expert` registered. Preferences of lower arity are
/// zero-padded to the larger objective count.
inline HoeModel add_expert(const HoeModel& model, AnyExpert expert) {
    const std::size_t new_dims =
        std::max(model.objectives(), std::visit([](const auto& e) { return e.preference.size(); }, expert));
    std::vector<LoraExpert> lora = model.lora;
    std::vector<RouterExpert> routers = model.routers;
    for (auto& e : lora) e.preference = e.preference.padded(new_dims);
    for (auto& r : routers) r.preference = r.preference.padded(new_dims);
    std::visit(
        [&](auto& e) {
            e.preference = e.preference.padded(new_dims);
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, LoraExpert>) lora.push_back(std::move(e));
            else routers.push_back(std::move(e));
        },
        expert);
    return assemble(model.base, std::move(lora), std::move(routers));
}

} // namespace hoe
