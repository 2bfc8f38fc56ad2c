#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "soundcal/cli.hpp"

int main(int argc, char** argv) {
    using namespace soundcal;
    CLI::App app{"Loudspeaker and microphone calibration with nonsynchronous MLS"};
    app.require_subcommand(1);

    cli::SimulateArgs sim;
    std::uint64_t seed = 0;
    auto* simulate = app.add_subcommand("simulate", "Run a calibration session on a simulated chain");
    simulate->add_option("--config", sim.config_path, "Session config (key = value)")->required();
    simulate->add_option("--chain", sim.chain_path, "Chain description (JSON)")->required();
    simulate->add_option("--out", sim.out_path, "Report path (JSON)")->required();
    auto* seed_opt = simulate->add_option("--seed", seed, "Noise seed, overrides the chain file");
    simulate->add_option("--timestamp", sim.timestamp, "Report timestamp (default: now, UTC)");

    cli::ProfileArgs prof;
    std::string screen;
    auto* profile = app.add_subcommand("profile", "Manage the profile library");
    profile->add_option("--store", prof.store, "Store directory (default: $SOUNDCAL_STORE)");
    profile->require_subcommand(1);
    auto* add = profile->add_subcommand("add", "Add a profile JSON file");
    add->add_option("file", prof.file, "Profile JSON")->required();
    auto* match = profile->add_subcommand("match", "Find a phone by model name, number and screen size");
    match->add_option("--name", prof.model_name)->required();
    match->add_option("--number", prof.model_number)->required();
    match->add_option("--screen", screen, "WIDTHxHEIGHT in pixels")->required();
    auto* trace = profile->add_subcommand("trace", "Print a profile's chain down to its root");
    trace->add_option("id", prof.id)->required();
    auto* list = profile->add_subcommand("list", "List profiles");
    list->add_option("--signer", prof.signers, "Keep only chains signed by these emails");
    profile->add_subcommand("coverage", "Phone models per brand");
    for (auto* sub : {add, match, trace, list})
        sub->add_option("--store", prof.store, "Store directory (default: $SOUNDCAL_STORE)");
    profile->get_subcommand("coverage")->add_option("--store", prof.store, "Store directory");

    std::string report, which, out_dir;
    auto* exp = app.add_subcommand("export-plots", "Write figure data from a report as CSV");
    exp->add_option("--report", report)->required();
    exp->add_option("--which", which, "gain_thd | ir | schroeder | correction | profiles")->required();
    exp->add_option("--out-dir", out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : cli::kExitError;
    }

    if (*simulate) {
        if (*seed_opt) sim.seed = seed;
        return cli::cmd_simulate(sim, std::cout, std::cerr);
    }
    if (*profile) {
        for (auto* sub : profile->get_subcommands()) prof.subcommand = sub->get_name();
        if (prof.subcommand == "match") {
            prof.screen = cli::parse_screen(screen);
            if (!prof.screen) {
                std::cerr << "error: --screen must look like 1170x2532\n";
                return cli::kExitError;
            }
        }
        return cli::cmd_profile(prof, std::cout, std::cerr);
    }
    return cli::cmd_export_plots(report, which, out_dir, std::cout, std::cerr);
}
