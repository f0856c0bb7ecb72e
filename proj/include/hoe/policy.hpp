#pragma once

// Toy policy networks whose linear modules are plugin layers:
//   y = W_pre x + b + sum_j omega_j * gamma_j * up_j (down_j x)
// plus N per-objective value heads on the last hidden state.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hoe/adapters.hpp"
#include "hoe/numkernel.hpp"

namespace hoe {

struct AttachedExpert {
    std::string expert_id;
    Matrix down;  // rank x d_in
    Matrix up;    // d_out x rank
    double rescale = 1.0;
};

struct PluginLinear {
    std::string module_path;
    Matrix w_pre;  // d_out x d_in
    std::vector<float> bias;
    std::vector<AttachedExpert> attached;

    std::size_t d_in() const noexcept { return w_pre.cols(); }
    std::size_t d_out() const noexcept { return w_pre.rows(); }

    void attach(AttachedExpert expert) {
        require(expert.down.cols() == d_in() && expert.up.rows() == d_out() && expert.up.cols() == expert.down.rows(),
                errc::incompatible_models,
                "expert " + expert.expert_id + " does not fit module " + module_path + " (" + shape_string(w_pre) +
                    "): down " + shape_string(expert.down) + ", up " + shape_string(expert.up));
        attached.push_back(std::move(expert));
    }
};

inline std::vector<double> plugin_forward(const PluginLinear& layer, std::span<const double> x,
                                          std::span<const double> omega) {
    require(x.size() == layer.d_in(), errc::invalid_input, "plugin_forward: input width mismatch at " + layer.module_path);
    require(omega.size() == layer.attached.size(), errc::invalid_input,
            "plugin_forward: " + std::to_string(omega.size()) + " mixing weights for " +
                std::to_string(layer.attached.size()) + " experts");
    std::vector<double> y = matvec(layer.w_pre, x);
    for (std::size_t r = 0; r < y.size(); ++r) y[r] += layer.bias[r];
    for (std::size_t j = 0; j < omega.size(); ++j) {
        if (omega[j] == 0.0) continue;
        const auto& e = layer.attached[j];
        const auto z = matvec(e.down, x);
        const auto delta = matvec(e.up, z);
        const double scale = omega[j] * e.rescale;
        for (std::size_t r = 0; r < y.size(); ++r) y[r] += scale * delta[r];
    }
    return y;
}

class PolicyNetwork {
public:
    std::vector<PluginLinear> layers;  // tanh between consecutive layers, none after the last
    Matrix value_w;                    // objectives x last hidden width
    std::vector<float> value_b;

    std::size_t action_count() const noexcept { return layers.back().d_out(); }
    std::size_t obs_dim() const noexcept { return layers.front().d_in(); }
    std::size_t objective_count() const noexcept { return value_w.rows(); }
    std::size_t hidden_width() const noexcept { return layers.back().d_in(); }

    WeightMap weight_map() const {
        WeightMap out;
        for (const auto& l : layers) out.emplace(l.module_path, l.w_pre);
        return out;
    }

    /// Same architecture with the adapted weight matrices replaced.
    PolicyNetwork with_weights(const WeightMap& weights) const {
        require_compatible(weight_map(), weights, "with_weights");
        PolicyNetwork out = *this;
        for (auto& l : out.layers) l.w_pre = weights.at(l.module_path);
        return out;
    }

    PolicyNetwork without_experts() const {
        PolicyNetwork out = *this;
        for (auto& l : out.layers) l.attached.clear();
        return out;
    }

    /// Attaches the expert's factors to every module it covers.
    void attach(const LoraExpert& expert) {
        require(expert.modules.size() == layers.size(), errc::incompatible_models,
                "expert " + expert.id + " covers " + std::to_string(expert.modules.size()) + " of " +
                    std::to_string(layers.size()) + " modules");
        for (const auto& [path, f] : expert.modules)
            require(find_layer(path) != nullptr, errc::incompatible_models, "expert " + expert.id + ": unknown module " + path);
        for (auto& l : layers) {
            const auto& f = expert.modules.at(l.module_path);
            l.attach({expert.id, f.down, f.up, expert.rescale});
        }
    }

    const PluginLinear* find_layer(const std::string& path) const {
        for (const auto& l : layers)
            if (l.module_path == path) return &l;
        return nullptr;
    }
};

inline std::string module_path_for(std::size_t index) { return "layers." + std::to_string(index); }

/// Seeded MLP: obs_dim -> hidden... -> actions, tanh hidden units.
inline PolicyNetwork make_policy(std::size_t obs_dim, const std::vector<std::size_t>& hidden, std::size_t actions,
                                 std::size_t objectives, RngStream& rng, double head_scale = 0.01) {
    require(obs_dim > 0 && actions > 0 && objectives > 0 && !hidden.empty(), errc::invalid_input,
            "make_policy: dimensions must be positive");
    PolicyNetwork net;
    std::size_t in = obs_dim;
    for (std::size_t i = 0; i <= hidden.size(); ++i) {
        const bool last = i == hidden.size();
        const std::size_t out = last ? actions : hidden[i];
        const double stddev = last ? head_scale : 1.0 / std::sqrt(static_cast<double>(in));
        PluginLinear layer;
        layer.module_path = module_path_for(i);
        layer.w_pre = random_matrix(out, in, rng, stddev);
        layer.bias.assign(out, 0.0f);
        net.layers.push_back(std::move(layer));
        in = out;
    }
    net.value_w = Matrix(objectives, hidden.back());
    net.value_b.assign(objectives, 0.0f);
    return net;
}

// ---------------------------------------------------------------------------
// Forward / backward with a pluggable per-layer mixer.
//
// A mixer supplies omega over a layer's attached experts from that layer's input:
//   std::vector<double> omega(std::size_t layer, std::span<const double> x)
//   void backprop(std::size_t layer, std::span<const double> x,
//                 std::span<const double> d_omega, std::span<double> d_x)

struct NoMixer {
    std::vector<double> omega(std::size_t, std::span<const double>) const { return {}; }
    void backprop(std::size_t, std::span<const double>, std::span<const double>, std::span<double>) {}
};

/// A fixed omega for every layer.
struct ConstantMixer {
    std::vector<double> weights;
    std::vector<double> omega(std::size_t, std::span<const double>) const { return weights; }
    void backprop(std::size_t, std::span<const double>, std::span<const double>, std::span<double>) {}
};

struct ForwardTrace {
    std::vector<std::vector<double>> inputs;  // inputs[l] feeds layer l; inputs[L] unused
    std::vector<std::vector<double>> omegas;
    std::vector<double> logits;
    std::vector<double> values;

    const std::vector<double>& last_hidden() const { return inputs.back(); }
};

template <class Mixer>
ForwardTrace forward(const PolicyNetwork& net, std::span<const double> obs, const Mixer& mixer) {
    require(obs.size() == net.obs_dim(), errc::invalid_input, "observation width mismatch");
    ForwardTrace t;
    t.inputs.reserve(net.layers.size());
    t.inputs.emplace_back(obs.begin(), obs.end());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& x = t.inputs[l];
        auto omega = mixer.omega(l, x);
        auto y = plugin_forward(net.layers[l], x, omega);
        t.omegas.push_back(std::move(omega));
        if (l + 1 < net.layers.size()) {
            for (auto& v : y) v = std::tanh(v);
            t.inputs.push_back(std::move(y));
        } else {
            t.logits = std::move(y);
        }
    }
    t.values = matvec(net.value_w, t.last_hidden());
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] += net.value_b[i];
    return t;
}

inline std::vector<double> logits(const PolicyNetwork& net, std::span<const double> obs,
                                  std::span<const double> omega) {
    return forward(net, obs, ConstantMixer{{omega.begin(), omega.end()}}).logits;
}

/// Gradient accumulators for the dense weights, biases and value heads.
struct DenseGrads {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;
    std::vector<double> value_w;
    std::vector<double> value_b;
    bool trunk = true;  // false: only the value heads accumulate

    explicit DenseGrads(const PolicyNetwork& net) {
        for (const auto& l : net.layers) {
            w.emplace_back(l.w_pre.size(), 0.0);
            b.emplace_back(l.bias.size(), 0.0);
        }
        value_w.assign(net.value_w.size(), 0.0);
        value_b.assign(net.value_b.size(), 0.0);
    }
};

/// Back-propagates d_logits and d_values. The value loss reaches only the heads;
/// trunk gradients (when `dense` is non-null) come from the logits alone.
template <class Mixer>
void backward(const PolicyNetwork& net, const ForwardTrace& trace, std::span<const double> d_logits,
              std::span<const double> d_values, Mixer& mixer, DenseGrads* dense) {
    if (dense != nullptr) {
        const auto& h = trace.last_hidden();
        for (std::size_t i = 0; i < d_values.size(); ++i) {
            if (d_values[i] == 0.0) continue;
            for (std::size_t c = 0; c < h.size(); ++c) dense->value_w[i * h.size() + c] += d_values[i] * h[c];
            dense->value_b[i] += d_values[i];
        }
    }
    std::vector<double> g(d_logits.begin(), d_logits.end());
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const auto& layer = net.layers[l];
        const auto& x = trace.inputs[l];
        if (l + 1 < net.layers.size()) {
            const auto& out = trace.inputs[l + 1];
            for (std::size_t r = 0; r < g.size(); ++r) g[r] *= 1.0 - out[r] * out[r];
        }
        if (dense != nullptr && dense->trunk) {
            auto& gw = dense->w[l];
            for (std::size_t r = 0; r < g.size(); ++r) {
                if (g[r] == 0.0) continue;
                for (std::size_t c = 0; c < x.size(); ++c) gw[r * x.size() + c] += g[r] * x[c];
                dense->b[l][r] += g[r];
            }
        }
        if (l == 0 && layer.attached.empty()) break;
        std::vector<double> d_x = matvec_transposed(layer.w_pre, g);
        const auto& omega = trace.omegas[l];
        std::vector<double> d_omega(layer.attached.size(), 0.0);
        for (std::size_t j = 0; j < layer.attached.size(); ++j) {
            const auto& e = layer.attached[j];
            const auto u = matvec_transposed(e.up, g);  // rank
            const auto z = matvec(e.down, x);
            double dot = 0.0;
            for (std::size_t k = 0; k < u.size(); ++k) dot += u[k] * z[k];
            d_omega[j] = e.rescale * dot;
            if (omega[j] != 0.0) {
                const auto back = matvec_transposed(e.down, u);
                const double scale = omega[j] * e.rescale;
                for (std::size_t c = 0; c < d_x.size(); ++c) d_x[c] += scale * back[c];
            }
        }
        mixer.backprop(l, x, d_omega, d_x);
        g = std::move(d_x);
    }
}

struct ActionSample {
    std::size_t action = 0;
    double logprob = 0.0;
};

inline ActionSample sample_action(std::span<const double> logit_values, RngStream& rng) {
    const auto probs = softmax(logit_values);
    const auto action = sample_categorical(probs, rng);
    return {action, log_softmax(logit_values)[action]};
}

inline std::size_t greedy_action(std::span<const double> logit_values) {
    return static_cast<std::size_t>(std::max_element(logit_values.begin(), logit_values.end()) - logit_values.begin());
}

template <class Mixer>
ActionSample act(const PolicyNetwork& net, std::span<const double> obs, const Mixer& mixer, RngStream& rng) {
    return sample_action(forward(net, obs, mixer).logits, rng);
}

// ---------------------------------------------------------------------------
// Trajectories and per-objective GAE

struct TrajectoryBatch {
    std::size_t objectives = 0;
    double gamma = 1.0;
    std::vector<std::vector<double>> observations;
    std::vector<std::size_t> actions;
    std::vector<double> logprobs;
    std::vector<double> rewards;     // steps x objectives
    std::vector<double> values;      // steps x objectives
    std::vector<double> advantages;  // steps x objectives
    std::vector<double> returns;     // steps x objectives, critic targets
    std::vector<std::size_t> episode_ends;  // exclusive end step of each episode

    std::size_t steps() const noexcept { return actions.size(); }
    double reward(std::size_t t, std::size_t i) const { return rewards[t * objectives + i]; }
    double advantage(std::size_t t, std::size_t i) const { return advantages[t * objectives + i]; }
};

/// Generalised advantage estimation run independently per objective; episodes end
/// without bootstrap. Optionally normalises each objective's advantages to zero
/// mean and unit variance over the batch.
inline TrajectoryBatch gae_per_objective(TrajectoryBatch batch, double gae_lambda, double gamma, bool normalize = true) {
    const std::size_t n = batch.objectives;
    const std::size_t steps = batch.steps();
    require(batch.rewards.size() == steps * n && batch.values.size() == steps * n, errc::invalid_input,
            "gae: rewards/values not populated");
    batch.gamma = gamma;
    batch.advantages.assign(steps * n, 0.0);
    batch.returns.assign(steps * n, 0.0);
    std::size_t begin = 0;
    for (std::size_t end : batch.episode_ends) {
        for (std::size_t i = 0; i < n; ++i) {
            double running = 0.0;
            for (std::size_t t = end; t-- > begin;) {
                const double next_value = t + 1 < end ? batch.values[(t + 1) * n + i] : 0.0;
                const double delta = batch.rewards[t * n + i] + gamma * next_value - batch.values[t * n + i];
                running = delta + gamma * gae_lambda * running;
                batch.advantages[t * n + i] = running;
                batch.returns[t * n + i] = running + batch.values[t * n + i];
            }
        }
        begin = end;
    }
    if (normalize && steps > 0) {
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (std::size_t t = 0; t < steps; ++t) mean += batch.advantages[t * n + i];
            mean /= static_cast<double>(steps);
            double var = 0.0;
            for (std::size_t t = 0; t < steps; ++t) {
                const double d = batch.advantages[t * n + i] - mean;
                var += d * d;
            }
            const double sd = std::sqrt(var / static_cast<double>(steps));
            const double denom = sd > 1e-8 ? sd : 1.0;
            for (std::size_t t = 0; t < steps; ++t)
                batch.advantages[t * n + i] = (batch.advantages[t * n + i] - mean) / denom;
        }
    }
    for (double a : batch.advantages) require(std::isfinite(a), errc::training_diverged, "non-finite advantage");
    return batch;
}

} // namespace hoe
