#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "encpol/experiment.hpp"

namespace {

struct CommonOpts {
    std::string config;
    long long seed = -1;
    std::string out;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config, "experiment config file")->required();
    cmd->add_option("--seed", opts.seed, "override [data] seed");
    cmd->add_option("--out", opts.out, "override [output] dir");
    cmd->add_option("--threads", opts.threads, "worker threads");
}

encpol::ExperimentConfig resolve(const CommonOpts& opts) {
    auto cfg = encpol::ExperimentConfig::parse_file(opts.config);
    if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
    if (!opts.out.empty()) cfg.out_dir = opts.out;
    if (opts.threads > 0) cfg.threads = opts.threads;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairness-constrained encouragement policy toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;
    using Runner = encpol::Manifest (*)(const encpol::ExperimentConfig&);
    struct Sub {
        const char* name;
        const char* help;
        Runner run;
    };
    const Sub subs[] = {
        {"simulate", "draw a dataset from a generating process", encpol::run_simulate},
        {"fit", "fit and export nuisance models", encpol::run_fit},
        {"threshold-sweep", "trade-off curve and/or constrained threshold policy",
         encpol::run_threshold_sweep},
        {"redfair", "saddle-point solve under general parity constraints", encpol::run_redfair},
        {"two-stage", "split-sample variance-localized refinement", encpol::run_two_stage},
        {"robust-bounds", "value bounds and robust policy under missing overlap",
         encpol::run_robust_bounds},
        {"compare-estimators", "plug-in / weighting / augmented / control-variate values",
         encpol::run_compare_estimators},
        {"feasible-range", "achievable take-up disparity range", encpol::run_feasible_range},
    };

    Runner chosen = nullptr;
    for (const auto& sub : subs) {
        auto* cmd = app.add_subcommand(sub.name, sub.help);
        add_common(cmd, opts);
        cmd->callback([&chosen, run = sub.run]() { chosen = run; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = resolve(opts);
        const auto manifest = chosen(cfg);
        for (const auto& [name, hash] : manifest.entries)
            std::cout << hash << "  " << cfg.out_dir << "/" << name << "\n";
        return 0;
    } catch (const encpol::infeasibility_error& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const encpol::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
