#include <iostream>

#include <CLI11.hpp>

#include "stvar/cli_io.hpp"
#include "stvar/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Spatio-temporal VAR(1) estimation with the adaptive fused Lasso"};
    std::string command;
    std::string config_path;
    stvar::Overrides overrides;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t threads = 0;
    double lambda = 0.0;
    app.add_option("command", command, "simulate, fit, forecast, evaluate or benchmark (overrides the config)");
    app.add_option("--config", config_path, "JSON run configuration")->required();
    auto* seed_opt = app.add_option("--seed", seed, "master random seed");
    auto* out_opt = app.add_option("--out", out, "output directory");
    auto* threads_opt = app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    auto* lambda_opt = app.add_option("--lambda", lambda, "solve the penalized stages at this lambda only")
                           ->check(CLI::NonNegativeNumber);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        stvar::RunConfig config = stvar::load_config(config_path);
        if (!command.empty()) overrides.command = stvar::command_from_string(command);
        if (*seed_opt) overrides.seed = seed;
        if (*out_opt) overrides.output = out;
        if (*threads_opt) overrides.threads = threads;
        if (*lambda_opt) overrides.lambda = lambda;
        stvar::apply_overrides(config, overrides);
        return stvar::run_command(config, std::cout);
    } catch (const std::exception& e) {
        const int code = stvar::exit_code_for(e);
        std::cerr << "error (exit " << code << "): " << e.what() << '\n';
        return code;
    }
}
