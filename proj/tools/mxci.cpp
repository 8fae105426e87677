#include <string>

#include <CLI11.hpp>

#include "mxci/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mxci: anytime-valid Model-X conditional independence tests"};
    app.require_subcommand(1);
    mxci::cli::Options opt;
    std::uint64_t seed = 0;

    auto add = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "output directory")->default_val(".");
        sub->add_option("--seed", seed, "override the master seed");
        sub->add_flag("--quiet", opt.quiet, "suppress progress and tables");
        return sub;
    };
    add("simulate", "null/alternative replications and a rejection-rate table");
    add("power", "power curves and sample-size summaries over a beta sweep");
    add("robustness", "null rejection rates over a misspecification or unlabeled-size sweep");
    add("stream", "sequential test over a CSV stream");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    auto* sub = app.get_subcommands().front();
    if (sub->count("--seed")) opt.seed = seed;
    return mxci::cli::run(sub->get_name(), opt);
}
