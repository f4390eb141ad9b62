#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "txtime/pipeline.hpp"

using namespace txtime;
using pipeline::Stage;

namespace {

void print_manifest(const pipeline::Manifest& m) {
    for (const auto& s : m.stages) std::cout << "  " << s.name << ": " << s.status << " (" << s.wall_seconds << " s)\n";
    std::cout << "content hash " << m.content_hash() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"txtime: Ethereum transaction processing-time models and explanations"};
    app.set_version_flag("--version", std::string(pipeline::kVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> threads;
    bool reduced = false;
    app.add_option("--config", config_path, "YAML run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed (overrides the config)");
    app.add_option("--out", out, "output directory (overrides the config)");
    app.add_option("--threads", threads, "worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
    app.add_flag("--reduced-protocol", reduced, "row-fraction split for datasets shorter than the day split");

    struct Command {
        const char* name;
        const char* help;
        std::vector<Stage> stages;
    };
    const std::vector<Command> commands{
        {"synth", "generate a synthetic chain dataset", {Stage::synth}},
        {"ingest", "validate the dataset and draw the per-day block sample", {Stage::ingest}},
        {"features", "compute the feature matrix", {Stage::features}},
        {"screen", "log-transform and remove correlated and redundant features", {Stage::screen}},
        {"train", "run the bootstrap evaluation and fit the final forest", {Stage::evaluate, Stage::train}},
        {"explain", "rank features and write PDP, interaction, waterfall and chunk artifacts", {Stage::explain}},
        {"run", "all stages in order, skipping unchanged ones", {}},
    };
    for (const auto& c : commands) app.add_subcommand(c.name, c.help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        auto config = config_path.empty() ? pipeline::RunConfig{} : pipeline::load_config(config_path);
        if (seed) config.seed = *seed;
        if (!out.empty()) config.output_dir = out;
        if (threads) config.threads = *threads;
        if (reduced) config.split.reduced = true;

        pipeline::Runner runner(std::move(config));
        for (const auto& c : commands) {
            if (!app.got_subcommand(c.name)) continue;
            if (c.stages.empty()) {
                print_manifest(runner.run_all());
            } else {
                for (auto s : c.stages) runner.run_stage(s);
                print_manifest(runner.manifest());
            }
        }
        std::cout << "output in " << runner.config().output_dir.string() << '\n';
        return 0;
    } catch (const pipeline::MissingArtifactError& e) {
        std::cerr << "error: missing artifact from stage '" << e.stage << "': " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
