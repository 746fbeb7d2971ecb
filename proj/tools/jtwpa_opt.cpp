#include "jtwpa/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

enum ExitCode { ok = 0, runtime_failure = 1, config_failure = 2 };

struct Options {
    std::string config;
    std::string stage1;
    std::string pstar;
    std::string run_dir;
    std::optional<unsigned> workers;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> budget;
    bool cold_start = false;
    bool force = false;
};

jtwpa::Overrides overrides(const Options& o) { return {o.workers, o.seed, o.budget}; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SNAIL parametric amplifier design optimizer"};
    app.set_version_flag("--version", JTWPA_VERSION);
    app.require_subcommand(1);
    Options o;

    auto* stage1 = app.add_subcommand("stage1", "grid sweep of the design space");
    stage1->add_option("--config", o.config, "run configuration (JSON)")->required();
    stage1->add_option("--workers", o.workers, "worker threads (default: JTWPA_WORKERS or all cores)");

    auto* optimize = app.add_subcommand("optimize", "Bayesian refinement of the stage-1 result");
    optimize->add_option("--config", o.config, "run configuration (JSON)")->required();
    optimize->add_option("--stage1", o.stage1, "stage-1 sweep CSV used as warm start");
    optimize->add_option("--seed", o.seed, "random seed");
    optimize->add_option("--budget", o.budget, "new evaluations per enumerated combination");
    optimize->add_option("--workers", o.workers, "worker threads");
    optimize->add_flag("--cold-start", o.cold_start, "start without stage-1 data");

    auto* stage3 = app.add_subcommand("stage3", "pump sweep at the optimized device");
    stage3->add_option("--config", o.config, "run configuration (JSON)")->required();
    stage3->add_option("--pstar", o.pstar, "p* JSON written by optimize")->required();
    stage3->add_option("--workers", o.workers, "worker threads");

    auto* pipeline = app.add_subcommand("pipeline", "all stages plus report, resuming completed ones");
    pipeline->add_option("--config", o.config, "run configuration (JSON)")->required();
    pipeline->add_option("--workers", o.workers, "worker threads");
    pipeline->add_flag("--force", o.force, "discard a run directory made from a different config");

    auto* report = app.add_subcommand("report", "plot-ready tables from a completed run");
    report->add_option("run-dir", o.run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_failure;
    }

    try {
        if (*stage1) {
            jtwpa::cmd_stage1(o.config, overrides(o));
        } else if (*optimize) {
            std::optional<std::filesystem::path> csv;
            if (!o.stage1.empty()) csv = o.stage1;
            jtwpa::cmd_optimize(o.config, csv, o.cold_start, overrides(o));
        } else if (*stage3) {
            jtwpa::cmd_stage3(o.config, o.pstar, overrides(o));
        } else if (*pipeline) {
            jtwpa::cmd_pipeline(o.config, o.force, overrides(o));
        } else if (*report) {
            jtwpa::cmd_report(o.run_dir);
        }
    } catch (const jtwpa::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return config_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return runtime_failure;
    }
    return ok;
}
