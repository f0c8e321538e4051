#include <mixnoise/harness/run.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace h = mixnoise::harness;

int main(int argc, char** argv)
{
    CLI::App app{"Bayesian inverse problems with multiplicative and mixed noise"};
    app.set_version_flag("--version", std::string(h::version));
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    for (const auto& name : h::experiment_names()) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment block of a config");
        sub->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "master seed, overrides the config");
        sub->add_option("--out", out_dir, "output directory (else $" + std::string(h::output_env_var)
                                               + ", then output_dir from the config)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return h::exit_validation;
    }
    const std::string subcommand = app.get_subcommands().front()->get_name();

    h::ExperimentConfig cfg;
    try {
        cfg = h::parse_config(config_path, seed);
    } catch (const h::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return h::exit_validation;
    }
    if (cfg.experiment != subcommand) {
        std::cerr << "config " << config_path << " holds a '" << cfg.experiment << "' experiment, not '" << subcommand
                  << "'\n";
        return h::exit_validation;
    }

    const auto dir = h::resolve_output_dir(out_dir, cfg);
    h::RunOutcome outcome;
    try {
        outcome = h::run(cfg, subcommand, dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return h::exit_runtime;
    }
    if (!outcome.manifest.error.empty()) {
        std::cerr << "error: " << outcome.manifest.error << "\n";
    }
    std::cout << subcommand << ": " << outcome.manifest.status << " (seed " << cfg.seed << ", " << cfg.seed_source
              << ") -> " << dir.string() << "\n";
    for (const auto& f : outcome.manifest.files) {
        std::cout << "  " << f << "\n";
    }
    return outcome.exit_code;
}
