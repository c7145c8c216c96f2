// Command-line front end: dataset generation, experiment runs, parameter
// sweeps, and cost benchmarks. All failures exit nonzero with a single
// machine-readable JSON error line on stderr.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lock/harness.hpp"

namespace {

void write_generate_outputs(const lock::ExperimentConfig& cfg, std::uint64_t seed,
                            const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        throw std::runtime_error("out_dir: cannot create " + out_dir + ": " +
                                 ec.message());
    const lock::ExperimentData data = lock::make_experiment_data(cfg, seed);
    const fs::path dir(out_dir);
    lock::save_frames(data.frames.grid, data.frames.truth, (dir / "truth.frames").string());
    lock::save_frames(data.frames.grid, data.frames.observed,
                      (dir / "observed.frames").string());
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["kind"] = lock::kind_name(cfg.kind);
    manifest["seed"] = seed;
    manifest["t_end"] = cfg.t_end;
    manifest["files"] = {"observed.frames", "truth.frames"};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("out_dir: cannot open manifest.json");
    out << manifest.dump(2) << '\n';
    std::cout << "wrote " << (dir / "truth.frames").string() << " and "
              << (dir / "observed.frames").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"real-time construction of state-transition operators for linear "
                 "Gaussian state-space models"};
    app.require_subcommand(1);

    // --- generate ---
    std::string gen_kind;
    std::uint64_t gen_seed = 1;
    long long gen_t_end = 0;
    std::string gen_out;
    auto* gen = app.add_subcommand("generate", "write a seeded dataset as frame files");
    gen->add_option("--kind", gen_kind,
                    "dataset family (dom-1..dom-5, object-moving, global-flow, "
                    "local-stationary)")
        ->required();
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--t-end", gen_t_end, "sequence length override");
    gen->add_option("--out", gen_out, "output directory")->required();

    // --- shared run/sweep options ---
    struct RunFlags {
        std::string config, kind, out, format = "csv";
        std::vector<std::string> methods;
        int tau = 0, d = 0, iterations = 0;
        double eta = 0, c = 0;
        long long t_end = 0, cutoff = 0;
        std::vector<std::uint64_t> seeds;
    };
    const auto add_run_options = [](CLI::App* cmd, RunFlags& f) {
        cmd->add_option("--config", f.config, "JSON config file");
        cmd->add_option("--kind", f.kind, "experiment kind (when no --config)");
        cmd->add_option("--method", f.methods, "estimator(s): kf emkf lock llock slock")
            ->delimiter(',');
        cmd->add_option("--tau", f.tau, "frames between operator updates");
        cmd->add_option("--eta", f.eta, "learning rate");
        cmd->add_option("--c", f.c, "cutoff distance");
        cmd->add_option("--d", f.d, "adjacency distance");
        cmd->add_option("--iterations", f.iterations, "EM sweeps per update");
        cmd->add_option("--t-end", f.t_end, "sequence length");
        cmd->add_option("--prediction-cutoff", f.cutoff,
                        "score forecasts after this step (-1 disables)");
        cmd->add_option("--seed", f.seeds, "seed list")->delimiter(',');
        cmd->add_option("--out", f.out, "output directory");
    };
    const auto config_from_flags = [](const CLI::App* cmd, const RunFlags& f) {
        lock::ExperimentConfig cfg;
        if (!f.config.empty()) {
            cfg = lock::load_config(f.config);
            if (cmd->count("--kind")) cfg.kind = lock::parse_kind(f.kind);
        } else {
            if (!cmd->count("--kind"))
                throw std::invalid_argument("kind: required when no --config is given");
            cfg = lock::default_config(lock::parse_kind(f.kind));
        }
        if (cmd->count("--method")) {
            cfg.methods.clear();
            for (const auto& name : f.methods)
                cfg.methods.push_back(lock::parse_method(name));
        }
        if (cmd->count("--tau")) cfg.tau = f.tau;
        if (cmd->count("--eta")) cfg.eta = f.eta;
        if (cmd->count("--c")) cfg.c = f.c;
        if (cmd->count("--d")) cfg.d = f.d;
        if (cmd->count("--iterations")) cfg.iterations = f.iterations;
        if (cmd->count("--t-end")) cfg.t_end = f.t_end;
        if (cmd->count("--prediction-cutoff")) cfg.prediction_cutoff = f.cutoff;
        if (cmd->count("--seed")) cfg.seeds = f.seeds;
        if (cmd->count("--out")) cfg.out_dir = f.out;
        cfg.validate();
        return cfg;
    };

    // --- run ---
    RunFlags run_flags;
    auto* run = app.add_subcommand("run", "run one experiment configuration");
    add_run_options(run, run_flags);
    run->add_option("--format", run_flags.format, "csv, or svg for plots as well")
        ->check(CLI::IsMember({"csv", "svg"}));

    // --- sweep ---
    RunFlags sweep_flags;
    lock::SweepGrid sweep_grid;
    auto* sweep = app.add_subcommand("sweep", "rerun one method over a parameter grid");
    add_run_options(sweep, sweep_flags);
    sweep->add_option("--taus", sweep_grid.taus, "update intervals to sweep")
        ->delimiter(',');
    sweep->add_option("--etas", sweep_grid.etas, "learning rates to sweep")
        ->delimiter(',');
    sweep->add_option("--cs", sweep_grid.cs, "cutoff distances to sweep")->delimiter(',');
    sweep->add_option("--ds", sweep_grid.ds, "adjacency distances to sweep")
        ->delimiter(',');

    // --- bench ---
    lock::BenchConfig bench_cfg;
    std::string bench_method = "llock", bench_out;
    auto* bench = app.add_subcommand("bench", "time one operator update per grid size");
    bench->add_option("--sizes", bench_cfg.sizes, "square grid edge lengths")
        ->delimiter(',');
    bench->add_option("--method", bench_method, "llock or slock");
    bench->add_option("--tau", bench_cfg.tau, "window length");
    bench->add_option("--eta", bench_cfg.eta, "learning rate");
    bench->add_option("--c", bench_cfg.c, "cutoff distance");
    bench->add_option("--d", bench_cfg.d, "adjacency distance");
    bench->add_option("--seed", bench_cfg.seed, "data seed");
    bench->add_option("--out", bench_out, "directory for bench.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
        return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
    }

    try {
        if (gen->parsed()) {
            lock::ExperimentConfig cfg =
                lock::default_config(lock::parse_kind(gen_kind));
            if (gen->count("--t-end")) cfg.t_end = gen_t_end;
            cfg.validate();
            write_generate_outputs(cfg, gen_seed, gen_out);
        } else if (run->parsed()) {
            lock::ExperimentConfig cfg = config_from_flags(run, run_flags);
            cfg.svg = run_flags.format == "svg";
            const lock::ExperimentResult result = lock::run_experiment(cfg);
            std::cout << "wrote " << result.seeds.size() << " seed run(s) to "
                      << cfg.out_dir << "\n";
            for (const auto& [label, stats] : result.stats)
                std::cout << label << " mean=" << stats.at("mean")
                          << " median=" << stats.at("median") << "\n";
        } else if (sweep->parsed()) {
            const lock::ExperimentConfig cfg = config_from_flags(sweep, sweep_flags);
            const auto rows = lock::run_sweep(cfg, sweep_grid);
            std::cout << "wrote " << rows.size() << " sweep row(s) to " << cfg.out_dir
                      << "/sweep.csv\n";
        } else if (bench->parsed()) {
            bench_cfg.method = lock::parse_method(bench_method);
            const auto reports = lock::run_bench(bench_cfg);
            if (!bench_out.empty()) {
                std::error_code ec;
                std::filesystem::create_directories(bench_out, ec);
                if (ec)
                    throw std::runtime_error("out_dir: cannot create " + bench_out +
                                             ": " + ec.message());
                std::ofstream out(std::filesystem::path(bench_out) / "bench.csv");
                if (!out) throw std::runtime_error("out_dir: cannot open bench.csv");
                lock::save_bench_csv(reports, out);
            }
            std::cout << "l,seconds,ideal_bytes,adhoc_bytes\n";
            for (const auto& r : reports)
                std::cout << r.l << ',' << r.seconds << ',' << r.ideal_bytes << ','
                          << r.adhoc_bytes << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
