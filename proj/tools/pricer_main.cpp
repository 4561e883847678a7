// Command-line front end: learn a pricing kernel from price paths, learn
// option price functions, and compare them against PDE / Monte-Carlo oracles.
//
//   pricer <command> --config <path> [--set key=value]... [--out dir]
//
// Commands: gen-data, train-kernel, train-price, evaluate, benchmark,
// report, validate.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pricer/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"data-driven option pricer"};
    app.require_subcommand(1);

    const std::vector<std::string> commands = {
        "gen-data", "train-kernel", "train-price", "evaluate", "benchmark", "report", "validate"};
    const std::vector<std::string> help = {
        "simulate a price trajectory and write prices.txt",
        "learn the policy / pricing kernel from price windows",
        "learn option price functions with the trained kernel",
        "dump learned policy and price curves from checkpoints",
        "run PDE and Monte-Carlo oracles, write implied-vol comparisons",
        "aggregate policy / implied-vol / loss tables",
        "check a config file and list every violation"};

    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        CLI::App* sub = app.add_subcommand(commands[i], help[i]);
        sub->add_option("--config", config_path, "experiment config file")->required();
        sub->add_option("--set", overrides, "override, e.g. --set train.policy.episodes=100");
        sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();
    return pricer::cli::run(command, config_path, overrides, out_dir, std::cout);
}
