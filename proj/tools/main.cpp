#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sgdual/runner.hpp"

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw sgdual::Error("io", "cannot open config file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct CommonArgs {
    std::string config_path;
    int threads = 0;         // 0 means "leave the config value alone"
    std::string output_dir;  // empty means "leave the config value alone"
};

sgdual::RunConfig load(const CommonArgs& args) {
    sgdual::RunConfig rc = sgdual::parse_config(slurp(args.config_path));
    if (args.threads > 0) rc.solver.threads = args.threads;
    if (!args.output_dir.empty()) rc.output_dir = args.output_dir;
    return rc;
}

void attach(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("config", args.config_path, "Path to a run configuration (JSON)")
        ->required();
    cmd->add_option("--threads", args.threads, "Override the configured thread count");
    cmd->add_option("--output", args.output_dir, "Override the configured output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-space semi-geostrophic solver"};
    app.require_subcommand(1);

    CommonArgs solve_args;
    CommonArgs run_args;
    CommonArgs verify_args;
    CLI::App* solve = app.add_subcommand("solve", "Converge the weights once at t = 0");
    CLI::App* runcmd = app.add_subcommand("run", "Integrate the dual flow to the horizon");
    CLI::App* verify = app.add_subcommand("verify", "Run the property battery");
    attach(solve, solve_args);
    attach(runcmd, run_args);
    attach(verify, verify_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (solve->parsed()) return sgdual::cli::cmd_solve(load(solve_args), std::cout, std::cerr);
        if (runcmd->parsed()) return sgdual::cli::cmd_run(load(run_args), std::cout, std::cerr);
        return sgdual::cli::cmd_verify(load(verify_args), std::cout, std::cerr);
    } catch (const sgdual::Error& e) {
        return sgdual::cli::fail_with(std::cerr, e);
    }
}
