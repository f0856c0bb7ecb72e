#pragma once

// The end-to-end workflow: single-objective training, extraction of LoRA
// experts, merging of interior experts, router training, assembly and paired
// sweeps against the baselines. In-memory stages first, then file-level
// commands that read and write checkpoints in one output directory.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hoe/checkpoint.hpp"
#include "hoe/config.hpp"
#include "hoe/pareto.hpp"
#include "hoe/svg.hpp"

namespace hoe {

inline std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) { return RngStream(seed, stage).next_u64(); }

inline PolicyNetwork make_base(const RunConfig& cfg, const TokenTradeEnv& env) {
    RngStream rng(cfg.seed, 1);
    return make_policy(env.obs_dim(), cfg.hidden, env.vocab(), env.objectives(), rng);
}

/// LoRA expert attached to the base with full routing mass.
inline LogitFn expert_policy(const PolicyNetwork& base, const LoraExpert& expert) {
    PolicyNetwork net = base.without_experts();
    net.attach(expert);
    return [net](std::span<const double> obs) { return forward(net, obs, ConstantMixer{{1.0}}).logits; };
}

/// Order-sensitive FNV-1a over every tensor bit of the experts.
inline std::uint64_t checksum(const std::vector<LoraExpert>& experts) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xFF;
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& e : experts) {
        for (char c : e.id) mix(static_cast<unsigned char>(c));
        mix(std::bit_cast<std::uint64_t>(e.rescale));
        for (const auto& [path, f] : e.modules) {
            for (float v : f.down.data()) mix(std::bit_cast<std::uint32_t>(v));
            for (float v : f.up.data()) mix(std::bit_cast<std::uint32_t>(v));
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Stages

struct SinglesResult {
    PolicyNetwork base;
    std::vector<PolicyNetwork> singles;
    std::vector<double> greedy_scores;  // linear return at the one-hot preference
    std::vector<double> oracle_scores;
};

/// One dense PPO run per objective. Each must reach 95% of its linear oracle.
inline SinglesResult train_singles(const RunConfig& cfg, const TokenTradeEnv& env) {
    SinglesResult out;
    out.base = make_base(cfg, env);
    const auto z = default_z_star(env, cfg.omd.z_margin);
    for (std::size_t i = 0; i < env.objectives(); ++i) {
        PpoConfig ppo = cfg.single_ppo;
        ppo.seed = stage_seed(cfg.seed, 100 + i);
        auto trained = train_single_objective(out.base, i, env, ppo);
        const auto pref = one_hot(env.objectives(), i);
        const double score = linear_scalarize(evaluate_greedy(env, dense_policy(trained.net)), pref);
        const double oracle = oracle_best(env, pref, ScalarizerKind::linear, z);
        require(score >= 0.95 * oracle - 1e-9, errc::training_diverged,
                "single-objective policy " + std::to_string(i) + " scored " + format_number(score) +
                    ", below 95% of the oracle " + format_number(oracle));
        out.singles.push_back(std::move(trained.net));
        out.greedy_scores.push_back(score);
        out.oracle_scores.push_back(oracle);
    }
    return out;
}

inline std::vector<ObjectiveVector> objective_vectors(const PolicyNetwork& base, const std::vector<PolicyNetwork>& singles) {
    std::vector<ObjectiveVector> taus;
    for (const auto& s : singles) taus.push_back(objective_vector(s.weight_map(), base.weight_map()));
    return taus;
}

struct CalibrationRow {
    std::string id;
    double rescale = 1.0;
    double score = 0.0;
};

/// Compresses `tau` and, when enabled, picks the rescale maximising the exact
/// expected linear return at the expert's own preference.
inline LoraExpert compress(const RunConfig& cfg, const TokenTradeEnv& env, const PolicyNetwork& base,
                           const ObjectiveVector& tau, const Preference& pref, const std::string& id,
                           std::vector<CalibrationRow>* report) {
    TaskSvdOptions opt;
    opt.rank = cfg.extraction.rank;
    opt.keep_fraction = cfg.extraction.keep_fraction;
    opt.clamp_rank = true;
    auto expert = task_svd(tau, opt, pref, id);
    auto score = [&](const LoraExpert& e) { return linear_scalarize(expected_return(env, expert_policy(base, e)), pref); };
    if (cfg.extraction.calibrate) expert = calibrate_rescale(expert, score, cfg.extraction.rescale_candidates);
    if (report) report->push_back({expert.id, expert.rescale, score(expert)});
    return expert;
}

inline std::string single_id(std::size_t i) { return "single_" + std::to_string(i); }
inline std::string merged_id(std::size_t i) { return "merged_" + std::to_string(i); }
inline std::string router_id(std::size_t i) { return "router_" + std::to_string(i); }

inline std::vector<LoraExpert> extract_singles(const RunConfig& cfg, const TokenTradeEnv& env, const PolicyNetwork& base,
                                               const std::vector<PolicyNetwork>& singles,
                                               std::vector<CalibrationRow>* report = nullptr) {
    const auto taus = objective_vectors(base, singles);
    std::vector<LoraExpert> out;
    for (std::size_t i = 0; i < taus.size(); ++i)
        out.push_back(compress(cfg, env, base, taus[i], one_hot(taus.size(), i), single_id(i), report));
    return out;
}

inline std::vector<LoraExpert> merge_experts(const RunConfig& cfg, const TokenTradeEnv& env, const PolicyNetwork& base,
                                             const std::vector<PolicyNetwork>& singles,
                                             std::vector<CalibrationRow>* report = nullptr) {
    const auto taus = objective_vectors(base, singles);
    std::vector<LoraExpert> out;
    for (std::size_t k = 0; k < cfg.plan.merged.size(); ++k) {
        const auto& pref = cfg.plan.merged[k];
        out.push_back(compress(cfg, env, base, merge(taus, pref, cfg.extraction.keep_fraction), pref, merged_id(k), report));
    }
    return out;
}

inline std::vector<Preference> evaluation_grid(const RunConfig& cfg) {
    if (cfg.objectives == 3 && std::abs(cfg.eval.grid_step - 0.1) < 1e-12) return eval_set_3obj();
    return grid(cfg.objectives, cfg.eval.grid_step);
}

/// Grid preference (not already held by a router) where the model's greedy
/// Tchebycheff value falls furthest short of the oracle, as a fraction of the
/// oracle's range; ties go to the preference nearest the simplex centre.
inline Preference weakest_preference(const HoeModel& model, const TokenTradeEnv& env, const std::vector<Preference>& grid_points,
                                     std::span<const double> z_star) {
    const std::size_t n = model.objectives();
    const std::vector<double> centre(n, 1.0 / static_cast<double>(n));
    std::optional<Preference> best;
    double best_gap = -1.0, best_dist = 0.0;
    for (const auto& p : grid_points) {
        bool taken = false;
        for (const auto& r : model.routers) taken = taken || euclidean_distance(p.weights(), r.preference.weights()) < 1e-9;
        if (taken) continue;
        const double v = tch_value(evaluate_greedy(env, hoe_policy(model, p)), p, z_star);
        const double hi = oracle_best(env, p, ScalarizerKind::tch, z_star);
        const double lo = oracle_worst(env, p, ScalarizerKind::tch, z_star);
        const double gap = 1.0 - attainment(v, hi, lo);
        const double dist = euclidean_distance(p.weights(), centre);
        if (gap > best_gap + 1e-12 || (std::abs(gap - best_gap) <= 1e-12 && dist < best_dist - 1e-12)) {
            best = p;
            best_gap = gap;
            best_dist = dist;
        }
    }
    require(best.has_value(), errc::invalid_input, "no free grid preference for an adaptive router");
    return *best;
}

struct RoutersResult {
    std::vector<RouterExpert> routers;
    std::vector<TrainingLog> logs;
};

/// Trains the planned routers one after another on the LoRA-only model. An
/// adaptive router is placed after the fixed ones.
inline RoutersResult train_routers(const RunConfig& cfg, const TokenTradeEnv& env, const PolicyNetwork& base,
                                   const std::vector<LoraExpert>& lora) {
    RoutersResult out;
    const HoeModel lora_only = assemble(base, lora, {});
    std::vector<Preference> prefs = cfg.plan.routers;
    if (cfg.plan.adaptive_router) {
        HoeModel current = assemble(base, lora, {});
        prefs.push_back(weakest_preference(current, env, evaluation_grid(cfg), default_z_star(env, cfg.omd.z_margin)));
    }
    for (std::size_t k = 0; k < prefs.size(); ++k) {
        PpoConfig ppo = cfg.router_ppo;
        ppo.seed = stage_seed(cfg.seed, 200 + k);
        auto res = train_router(lora_only, prefs[k], env, ppo, cfg.omd_state(env), router_id(k), cfg.router_scalarization);
        out.routers.push_back(std::move(res.router));
        out.logs.push_back(std::move(res.log));
    }
    return out;
}

struct PipelineResult {
    SinglesResult singles;
    std::vector<LoraExpert> lora;
    RoutersResult routers;
    HoeModel model;
};

inline PipelineResult run_pipeline(const RunConfig& cfg) {
    cfg.validate();
    const auto env = cfg.make_environment();
    PipelineResult r;
    r.singles = train_singles(cfg, env);
    r.lora = extract_singles(cfg, env, r.singles.base, r.singles.singles);
    for (auto& m : merge_experts(cfg, env, r.singles.base, r.singles.singles)) r.lora.push_back(std::move(m));
    r.routers = train_routers(cfg, env, r.singles.base, r.lora);
    r.model = assemble(r.singles.base, r.lora, r.routers.routers);
    return r;
}

/// Paired greedy sweep of the model and the requested baselines over one grid.
inline std::vector<ParetoPoint> paired_sweep(const RunConfig& cfg, const TokenTradeEnv& env, const HoeModel& model,
                                             const std::vector<PolicyNetwork>& singles) {
    const auto points_grid = evaluation_grid(cfg);
    auto points = sweep([&model](const Preference& p) { return hoe_policy(model, p); }, points_grid, env, cfg.eval.episodes,
                        cfg.seed, "hoe");
    const auto taus = objective_vectors(model.base, singles);
    for (const auto& b : cfg.eval.baselines) {
        PolicyFactory f;
        if (b == "rs")
            f = [&](const Preference& p) { return dense_policy(rs_soup(model.base, taus, p)); };
        else
            f = [&](const Preference& p) { return mod_policy(singles, p); };
        auto more = sweep(f, points_grid, env, cfg.eval.episodes, cfg.seed, b);
        points.insert(points.end(), more.begin(), more.end());
    }
    if (cfg.eval.morlhf) {
        for (std::size_t k = 0; k < points_grid.size(); ++k) {
            PpoConfig ppo = cfg.single_ppo;
            ppo.seed = stage_seed(cfg.seed, 300 + k);
            ppo.kl_coef = cfg.eval.morlhf_kl_coef;
            auto p = morlhf_oracle(model.base, points_grid[k], env, ppo, cfg.eval.episodes);
            p.seed = cfg.seed;
            points.push_back(std::move(p));
        }
    }
    return points;
}

// ---------------------------------------------------------------------------
// File-level commands. Every input is loaded and checked before anything is written.

struct Workspace {
    std::filesystem::path dir;

    std::filesystem::path base() const { return dir / "base.ckpt"; }
    std::filesystem::path single(std::size_t i) const { return dir / ("single_" + std::to_string(i) + ".ckpt"); }
    std::filesystem::path lora(const std::string& id) const { return dir / ("lora_" + id + ".ckpt"); }
    std::filesystem::path router(std::size_t k) const { return dir / ("router_" + std::to_string(k) + ".ckpt"); }
    std::filesystem::path router_log(std::size_t k) const { return dir / ("router_" + std::to_string(k) + ".jsonl"); }
    std::filesystem::path model() const { return dir / "model.ckpt"; }
    std::filesystem::path csv() const { return dir / "sweep.csv"; }
    std::filesystem::path svg() const { return dir / "sweep.svg"; }
};

inline RunConfig load_config(const std::optional<std::filesystem::path>& path) {
    if (!path) return default_config();
    std::ifstream in(*path);
    if (!in) fail(errc::invalid_config, "cannot read config " + path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

inline std::vector<PolicyNetwork> load_singles(const Workspace& ws, std::size_t n) {
    std::vector<PolicyNetwork> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(load_dense(ws.single(i)));
    return out;
}

inline std::vector<LoraExpert> load_lora_set(const Workspace& ws, const RunConfig& cfg) {
    std::vector<LoraExpert> out;
    for (std::size_t i = 0; i < cfg.objectives; ++i) out.push_back(load_lora(ws.lora(single_id(i))));
    for (std::size_t k = 0; k < cfg.plan.merged.size(); ++k) out.push_back(load_lora(ws.lora(merged_id(k))));
    return out;
}

inline nlohmann::json calibration_json(const std::vector<CalibrationRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) out.push_back({{"id", r.id}, {"rescale", r.rescale}, {"score", r.score}});
    return out;
}

/// Returns a one-line JSON summary of what was written.
inline std::string cmd_train_singles(const RunConfig& cfg, const Workspace& ws) {
    const auto env = cfg.make_environment();
    auto r = train_singles(cfg, env);
    save(ws.base(), r.base, cfg.seed);
    for (std::size_t i = 0; i < r.singles.size(); ++i) save(ws.single(i), r.singles[i], cfg.seed);
    return nlohmann::json{{"command", "train-singles"}, {"checkpoints", r.singles.size() + 1},
                          {"greedy_scores", r.greedy_scores}, {"oracle_scores", r.oracle_scores}}
        .dump();
}

inline std::string cmd_extract(const RunConfig& cfg, const Workspace& ws) {
    const auto env = cfg.make_environment();
    const auto base = load_dense(ws.base());
    const auto singles = load_singles(ws, cfg.objectives);
    std::vector<CalibrationRow> report;
    const auto experts = extract_singles(cfg, env, base, singles, &report);
    for (const auto& e : experts) save(ws.lora(e.id), e, cfg.seed);
    write_text(ws.dir / "calibration.json", calibration_json(report).dump(2) + "\n");
    return nlohmann::json{{"command", "extract"}, {"experts", experts.size()}, {"calibration", calibration_json(report)}}.dump();
}

inline std::string cmd_merge(const RunConfig& cfg, const Workspace& ws) {
    const auto env = cfg.make_environment();
    const auto base = load_dense(ws.base());
    const auto singles = load_singles(ws, cfg.objectives);
    std::vector<CalibrationRow> report;
    const auto experts = merge_experts(cfg, env, base, singles, &report);
    for (const auto& e : experts) save(ws.lora(e.id), e, cfg.seed);
    return nlohmann::json{{"command", "merge"}, {"experts", experts.size()}, {"calibration", calibration_json(report)}}.dump();
}

inline std::string cmd_train_routers(const RunConfig& cfg, const Workspace& ws) {
    const auto env = cfg.make_environment();
    const auto base = load_dense(ws.base());
    const auto lora = load_lora_set(ws, cfg);
    const auto before = checksum(lora);
    auto r = train_routers(cfg, env, base, lora);
    require(checksum(lora) == before, errc::incompatible_models, "LoRA experts changed during router training");
    nlohmann::json placed = nlohmann::json::array();
    for (std::size_t k = 0; k < r.routers.size(); ++k) {
        save(ws.router(k), r.routers[k], cfg.seed);
        write_text(ws.router_log(k), r.logs[k].to_jsonl());
        placed.push_back(r.routers[k].preference.weights());
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(before));
    return nlohmann::json{{"command", "train-routers"}, {"routers", r.routers.size()}, {"preferences", placed},
                          {"lora_checksum", hex}}
        .dump();
}

inline std::string cmd_assemble(const RunConfig& cfg, const Workspace& ws) {
    const auto base = load_dense(ws.base());
    const auto lora = load_lora_set(ws, cfg);
    std::vector<RouterExpert> routers;
    for (std::size_t k = 0; std::filesystem::exists(ws.router(k)); ++k) routers.push_back(load_router(ws.router(k)));
    const auto model = assemble(base, lora, routers);
    save(ws.model(), model, cfg.seed);
    return nlohmann::json{{"command", "assemble"}, {"lora", model.lora.size()}, {"routers", model.routers.size()}}.dump();
}

inline std::string cmd_sweep(const RunConfig& cfg, const Workspace& ws) {
    const auto env = cfg.make_environment();
    const auto model = load_model(ws.model());
    require(model.objectives() == cfg.objectives, errc::incompatible_models, "model objective count differs from config");
    const auto singles = load_singles(ws, cfg.objectives);
    const auto points = paired_sweep(cfg, env, model, singles);
    std::ostringstream csv;
    write_csv(csv, points, default_z_star(env, cfg.omd.z_margin));
    write_text(ws.csv(), csv.str());
    if (cfg.objectives == 2) write_text(ws.svg(), frontier_svg(points));
    return nlohmann::json{{"command", "sweep"}, {"rows", points.size()}, {"csv", ws.csv().string()}}.dump();
}

/// Reads rows back from a sweep CSV.
inline std::vector<ParetoPoint> read_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), errc::invalid_input, "empty CSV");
    std::size_t n = 0;
    {
        std::istringstream h(line);
        std::string col;
        while (std::getline(h, col, ','))
            if (col.rfind("lambda_", 0) == 0) ++n;
    }
    require(n >= 1, errc::invalid_input, "CSV header has no preference columns");
    std::vector<ParetoPoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        require(cells.size() == 3 + 2 * n + 2, errc::invalid_input, "CSV row has the wrong width: " + line);
        try {
            ParetoPoint p;
            p.method = cells[0];
            p.seed = std::stoull(cells[1]);
            p.episodes = std::stoull(cells[2]);
            std::vector<double> lambda, rewards;
            for (std::size_t i = 0; i < n; ++i) lambda.push_back(std::stod(cells[3 + i]));
            for (std::size_t i = 0; i < n; ++i) rewards.push_back(std::stod(cells[3 + n + i]));
            p.preference = normalized_preference(lambda, 1e-6);
            p.mean_rewards = rewards;
            out.push_back(std::move(p));
        } catch (const std::logic_error&) {
            fail(errc::invalid_input, "unparseable CSV row: " + line);
        }
    }
    return out;
}

inline nlohmann::json report_json(const SweepReport& r) {
    nlohmann::json hv = nlohmann::json::object(), wins = nlohmann::json::object(), wins_tch = nlohmann::json::object();
    for (const auto& [m, v] : r.hypervolume) hv[m] = v;
    for (const auto& [m, v] : r.wins) wins[m] = v;
    for (const auto& [m, v] : r.wins_tch) wins_tch[m] = v;
    return {{"hypervolume", hv},
            {"hoe_wins_linear", wins},
            {"hoe_wins_tch", wins_tch},
            {"reference_point", r.reference},
            {"rows", r.points.size()}};
}

inline std::string cmd_report(const RunConfig& cfg, const Workspace& ws) {
    const auto points = read_csv(read_file(ws.csv()));
    const auto env = cfg.make_environment();
    const auto report = summarize(points, "hoe", default_z_star(env, cfg.omd.z_margin));
    auto j = report_json(report);
    write_text(ws.dir / "report.json", j.dump(2) + "\n");
    if (cfg.objectives == 2 && points.front().mean_rewards.size() == 2) write_text(ws.svg(), frontier_svg(points));
    j["command"] = "report";
    return j.dump();
}

} // namespace hoe
