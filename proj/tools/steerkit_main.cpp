#include <cstdio>
#include <exception>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "steerkit/config.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/orchestrate.hpp"

namespace {

std::vector<double> parse_factor_grid(const std::string& text) {
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            grid.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw steerkit::ConfigError("--factor-grid: not a number: " + item);
        }
    }
    if (grid.empty()) throw steerkit::ConfigError("--factor-grid: empty grid");
    return grid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hypernetwork-generated activation steering on a synthetic micro-world"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> n_concepts;
    std::optional<std::string> variant;
    std::optional<std::string> factor_grid;
    std::optional<std::string> method;
    std::optional<std::string> split;

    app.add_option("--config", config_path, "Path to a JSON experiment config");
    app.add_option("--seed", seed, "Override the experiment seed");
    app.add_option("--out", out_dir, "Override the output directory");
    app.add_option("--n-concepts", n_concepts, "Override data.n_concepts");
    app.add_option("--variant", variant,
                   "Override the hypernetwork variant "
                   "(no_context|in_context|cross_attention)");
    app.add_option("--factor-grid", factor_grid,
                   "Override the evaluation factor grid, comma separated");
    app.add_option("--method", method,
                   "Override eval.method (hypernet|reft|diffmean|prompt)");
    app.add_option("--split", split, "Override eval.split (held-in|held-out)");

    for (const auto& name : steerkit::orchestrate::command_names())
        app.add_subcommand(name)->silent(false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    std::string command = app.get_subcommands().front()->get_name();

    steerkit::config::ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = steerkit::config::load_config_file(config_path);
        if (seed) cfg.seed = *seed;
        if (out_dir) cfg.out_dir = *out_dir;
        if (n_concepts) cfg.data.n_concepts = *n_concepts;
        if (variant)
            cfg.hypernet_cfg.variant = steerkit::hypernet::variant_from_name(*variant);
        if (factor_grid) cfg.eval.factor_grid = parse_factor_grid(*factor_grid);
        if (method) cfg.eval.method = *method;
        if (split) cfg.eval.split = *split;
        cfg.validate();
    } catch (const steerkit::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    }

    try {
        steerkit::orchestrate::run_command(command, cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
