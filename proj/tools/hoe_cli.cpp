// hoe: command-line driver for the training, assembly and evaluation pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "hoe/hoe.hpp"

namespace {

std::string error_line(const std::string& code, const std::string& message) {
    return nlohmann::json{{"status", "error"}, {"code", code}, {"message", message}}.dump();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical mixture of LoRA and router experts for multi-objective policies"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".";
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "structured-text (JSON) run configuration");
    app.add_option("--seed", seed, "overrides the configured seed");
    app.add_option("--out", out_dir, "working directory for checkpoints and reports");

    using Command = std::function<std::string(const hoe::RunConfig&, const hoe::Workspace&)>;
    const std::map<std::string, std::pair<Command, std::string>> commands = {
        {"train-singles", {hoe::cmd_train_singles, "train one dense policy per objective"}},
        {"extract", {hoe::cmd_extract, "compress objective vectors into LoRA experts"}},
        {"merge", {hoe::cmd_merge, "merge objective vectors for interior preferences"}},
        {"train-routers", {hoe::cmd_train_routers, "train router experts over the frozen LoRA experts"}},
        {"assemble", {hoe::cmd_assemble, "bundle base, LoRA and router experts into one model"}},
        {"sweep", {hoe::cmd_sweep, "greedy sweep of the model and baselines over the preference grid"}},
        {"report", {hoe::cmd_report, "hypervolume and win counts from a sweep CSV"}},
    };
    for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.second)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cout << error_line("InvalidArguments", e.what()) << '\n';
        return 2;
    }

    try {
        hoe::RunConfig cfg = hoe::load_config(config_path.empty() ? std::nullopt
                                                                  : std::optional<std::filesystem::path>(config_path));
        if (seed) cfg.seed = *seed;
        cfg.validate();
        const std::filesystem::path dir(out_dir);
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) hoe::fail(hoe::errc::io_failure, "cannot create " + dir.string() + ": " + ec.message());
        const auto* sub = app.get_subcommands().front();
        std::cout << commands.at(sub->get_name()).first(cfg, hoe::Workspace{dir}) << '\n';
        return 0;
    } catch (const hoe::error& e) {
        std::cout << error_line(std::string(hoe::errc_name(e.code())), e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cout << error_line("Internal", e.what()) << '\n';
        return 1;
    }
}
