// crip-sim: run bundled or user-supplied CRIP experiments.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "crip/cli/registry.hpp"
#include "crip/cli/run.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw crip::InvalidArgument("cannot read config file '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int fail(const std::exception& e, int code) {
    std::cout << crip::cli::error_json(e).dump(2) << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crip-sim: cross-relaxation induced polarisation experiments"};
    app.require_subcommand(1);

    std::string config_path, experiment, out_dir;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    auto* run_cmd = app.add_subcommand("run", "run an experiment config (JSON) or a bundled experiment");
    run_cmd->add_option("config", config_path, "experiment config file");
    run_cmd->add_option("--experiment,-e", experiment, "name of a bundled experiment (see `crip-sim list`)");
    auto* out_opt = run_cmd->add_option("--out,-o", out_dir, "output directory (overrides output.directory)");
    auto* seed_opt = run_cmd->add_option("--seed", seed, "random seed (overrides the config)");
    run_cmd->add_option("--threads", threads, "worker threads for Monte-Carlo batches")->check(CLI::PositiveNumber);

    auto* list_cmd = app.add_subcommand("list", "list bundled experiments");
    auto* show_cmd = app.add_subcommand("show", "print the resolved config of a bundled experiment");
    std::string show_name;
    show_cmd->add_option("name", show_name, "bundled experiment")->required();

    CLI11_PARSE(app, argc, argv);

    if (list_cmd->parsed()) {
        for (const auto& e : crip::cli::bundled_experiments()) std::cout << e.name << "\t" << e.description() << "\n";
        return 0;
    }

    try {
        if (show_cmd->parsed()) {
            const auto e = crip::cli::find_bundled(show_name);
            if (!e) throw crip::InvalidArgument("unknown bundled experiment '" + show_name + "'");
            std::cout << crip::cli::serialize(e->config());
            return 0;
        }

        if (config_path.empty() == experiment.empty())
            throw crip::InvalidArgument("run: give exactly one of <config> or --experiment <name>");
        crip::cli::ExperimentConfig config;
        if (!experiment.empty()) {
            const auto e = crip::cli::find_bundled(experiment);
            if (!e) throw crip::InvalidArgument("unknown bundled experiment '" + experiment + "'");
            config = e->config();
        } else {
            config = crip::cli::parse_config(read_file(config_path));
        }
        crip::cli::RunOptions options;
        if (*out_opt) options.output_directory = out_dir;
        if (*seed_opt) options.seed = seed;
        options.threads = threads;
        const auto result = crip::cli::run(config, options);
        for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
        std::cout << result.summary.dump(2) << std::endl;
        return 0;
    } catch (const crip::cli::ConfigError& e) {
        return fail(e, 2);
    } catch (const std::exception& e) {
        return fail(e, 1);
    }
}
