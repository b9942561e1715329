#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "srec/config.hpp"
#include "srec/errors.hpp"
#include "srec/io.hpp"
#include "srec/nash_audit.hpp"
#include "srec/simulation.hpp"
#include "srec/solver.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNonConvergence = 3;
constexpr int kExitIo = 4;

// "a..b" ranges and comma lists, e.g. "1..20" or "1,5,9..12"
std::vector<std::uint64_t> parse_seed_spec(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        std::size_t comma = spec.find(',', pos);
        if (comma == std::string::npos) comma = spec.size();
        const std::string token = spec.substr(pos, comma - pos);
        const std::size_t dots = token.find("..");
        if (dots != std::string::npos) {
            const std::uint64_t a = std::stoull(token.substr(0, dots));
            const std::uint64_t b = std::stoull(token.substr(dots + 2));
            if (b < a) throw srec::ConfigError("bad seed range '" + token + "'");
            for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
        } else if (!token.empty()) {
            seeds.push_back(std::stoull(token));
        }
        pos = comma + 1;
    }
    if (seeds.empty()) throw srec::ConfigError("empty seed list '" + spec + "'");
    return seeds;
}

std::string resolve_out_dir(const srec::MarketConfig& cfg, const std::string& cli_out) {
    if (!cli_out.empty()) return cli_out;
    if (!cfg.run.out_dir.empty()) return cfg.run.out_dir;
    if (const char* env = std::getenv("SREC_OUT_DIR"); env != nullptr && *env != '\0') return env;
    return "out";
}

// Refuse to build on a directory whose solve did not converge.
void require_converged_dir(const std::string& dir) {
    const srec::io::SolutionStamp stamp = srec::io::read_solution_stamp(dir);
    if (!stamp.converged) {
        throw srec::NonConvergenceError(
            dir + "/diagnostics.json reports a non-converged solve (final residual "
                + std::to_string(stamp.final_residual) + " after "
                + std::to_string(stamp.iterations) + " iterations); refusing",
            {});
    }
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

int run_solve(const std::string& cfg_path, const std::string& out_cli, int threads_cli,
              bool with_z) {
    srec::MarketConfig cfg = srec::io::load_config(cfg_path);
    if (threads_cli >= 0) cfg.run.threads = threads_cli;
    const std::string out = resolve_out_dir(cfg, out_cli);
    Timer timer;
    try {
        const srec::EquilibriumSolution sol = srec::solve_fixed_point(cfg);
        srec::io::FileDigests files;
        if (with_z) {
            const srec::SurfaceArray z = srec::z_diagnostic(sol, cfg);
            files = srec::io::emit_solution(sol, cfg, out, &z);
        } else {
            files = srec::io::emit_solution(sol, cfg, out);
        }
        srec::io::update_manifest(out, "solve", cfg, timer.ms(), files);
        double avg = 0.0;
        for (double s : sol.price.s) avg += s;
        avg /= static_cast<double>(sol.price.s.size());
        std::printf("solve: converged in %d iterations (residual %.3g), price average %.4f\n",
                    sol.diagnostics.iterations, sol.diagnostics.final_residual, avg);
        std::printf("artifacts written to %s\n", out.c_str());
        return kExitOk;
    } catch (const srec::NonConvergenceError& e) {
        const auto files = srec::io::emit_failure_diagnostics(cfg, out, e.residual_history, e.what());
        srec::io::update_manifest(out, "solve", cfg, timer.ms(), files);
        std::fprintf(stderr, "solve failed: %s\n", e.what());
        if (!e.suggestion.empty()) std::fprintf(stderr, "hint: %s\n", e.suggestion.c_str());
        return kExitNonConvergence;
    }
}

int run_simulate(const std::string& cfg_path, const std::string& solution_dir,
                 const std::string& seed_spec, int agents_cli, const std::string& out_cli,
                 int threads_cli) {
    srec::MarketConfig cfg = srec::io::load_config(cfg_path);
    if (threads_cli >= 0) cfg.run.threads = threads_cli;
    require_converged_dir(solution_dir);
    const srec::EquilibriumSolution sol = srec::io::load_solution(solution_dir, cfg);
    const std::string out = out_cli.empty() ? solution_dir : out_cli;

    std::vector<std::uint64_t> seeds =
        seed_spec.empty() ? std::vector<std::uint64_t>{cfg.run.seed} : parse_seed_spec(seed_spec);
    const int n = agents_cli > 0 ? agents_cli : cfg.run.n_agents;

    Timer timer;
    std::vector<srec::SimulationRun> runs;
    runs.reserve(seeds.size());
    for (std::uint64_t seed : seeds) {
        runs.push_back(srec::simulate(sol, cfg, n, seed, cfg.run.threads));
    }
    const auto files = srec::io::emit_simulation(runs, cfg, out);
    srec::io::update_manifest(out, "simulate", cfg, timer.ms(), files);

    std::vector<double> mean_rate(cfg.classes.size(), 0.0);
    for (const auto& run : runs) {
        for (std::size_t k = 0; k < mean_rate.size(); ++k) {
            mean_rate[k] += run.noncompliance_rate[k] / static_cast<double>(runs.size());
        }
    }
    std::printf("simulate: n=%d over %zu seed(s)\n", n, seeds.size());
    for (std::size_t k = 0; k < mean_rate.size(); ++k) {
        std::printf("  class k%zu non-compliance: %.4f\n", k + 1, mean_rate[k]);
    }
    std::printf("artifacts written to %s\n", out.c_str());
    return kExitOk;
}

int run_audit(const std::string& cfg_path, const std::string& solution_dir,
              const std::string& agents_spec, const std::string& seed_spec, int cls_one_based,
              const std::string& out_cli, int threads_cli) {
    srec::MarketConfig cfg = srec::io::load_config(cfg_path);
    if (threads_cli >= 0) cfg.run.threads = threads_cli;
    require_converged_dir(solution_dir);
    const srec::EquilibriumSolution sol = srec::io::load_solution(solution_dir, cfg);
    const std::string out = out_cli.empty() ? solution_dir : out_cli;

    std::vector<int> agent_counts;
    for (std::uint64_t v : parse_seed_spec(agents_spec)) agent_counts.push_back(static_cast<int>(v));
    std::vector<std::uint64_t> seeds;
    if (seed_spec.empty()) {
        for (std::uint64_t s = 0; s < 16; ++s) seeds.push_back(cfg.run.seed + s);
    } else {
        seeds = parse_seed_spec(seed_spec);
    }
    const int cls = cls_one_based - 1;

    Timer timer;
    const srec::DeviationReport report =
        srec::deviation_gain(sol, cfg, agent_counts, cls, seeds, cfg.run.threads);
    const srec::ProbeReport probes =
        srec::optimality_probe(sol, cfg, cls, 20, 200'000, cfg.run.seed, 0.0, cfg.run.threads);
    const auto files = srec::io::emit_deviation_report(report, &probes, out);
    srec::io::update_manifest(out, "audit", cfg, timer.ms(), files);

    std::printf("audit: deviation gains for class k%d (lower bounds over the family)\n", cls + 1);
    for (const auto& g : report.gains) {
        std::printf("  n=%5d  gain=%+.3e +- %.3e  best=%s\n", g.n_agents, g.estimate, g.se,
                    g.best_cell.c_str());
    }
    std::printf("first-order probes: %s\n", probes.all_pass ? "all pass" : "FAILURES");
    std::printf("artifacts written to %s\n", out.c_str());
    return probes.all_pass ? kExitOk : 1;
}

int run_report(const std::string& run_dir, const std::string& cfg_cli, const std::string& out_cli) {
    const std::string cfg_path = cfg_cli.empty() ? run_dir + "/config.cfg" : cfg_cli;
    const srec::MarketConfig cfg = srec::io::load_config(cfg_path);
    const std::string out = out_cli.empty() ? run_dir : out_cli;
    Timer timer;
    const auto files = srec::io::emit_report(run_dir, cfg, out);
    srec::io::update_manifest(out, "report", cfg, timer.ms(), files);
    std::printf("report: wrote %zu file(s) to %s\n", files.size(), out.c_str());
    for (const auto& [name, digest] : files) std::printf("  %s\n", name.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Equilibrium solver and finite-player simulator for a single-period "
                 "solar-certificate market game"};
    app.require_subcommand(1);

    std::string cfg_path, out_dir, solution_dir, seed_spec, agents_spec, report_cfg;
    int threads = -1;
    int agents_n = 0;
    int audit_class = 1;
    bool with_z = false;

    auto* solve = app.add_subcommand("solve", "compute the equilibrium and write its artifacts");
    solve->add_option("config", cfg_path, "configuration file")->required();
    solve->add_option("--out", out_dir, "output directory (default: [run].out_dir or $SREC_OUT_DIR)");
    solve->add_option("--threads", threads, "worker threads (0 = all cores)");
    solve->add_flag("--z-diagnostic", with_z, "also write the diffusion loading surface");

    auto* simulate = app.add_subcommand("simulate", "replay the finite-player game");
    simulate->add_option("config", cfg_path, "configuration file")->required();
    simulate->add_option("--solution", solution_dir, "directory written by solve")->required();
    simulate->add_option("--seeds", seed_spec, "seed list, e.g. 1..20 or 1,5,9");
    simulate->add_option("--agents", agents_n, "number of firms (default: [run].n_agents)");
    simulate->add_option("--out", out_dir, "output directory (default: the solution directory)");
    simulate->add_option("--threads", threads, "worker threads (0 = all cores)");

    auto* audit = app.add_subcommand("audit", "estimate unilateral deviation gains");
    audit->add_option("config", cfg_path, "configuration file")->required();
    audit->add_option("--solution", solution_dir, "directory written by solve")->required();
    audit->add_option("--agents", agents_spec, "population sizes, e.g. 50,200,800,2000")->required();
    audit->add_option("--seeds", seed_spec, "seed list (default: 16 seeds from [run].seed)");
    audit->add_option("--class", audit_class, "deviating agent's class, 1-based");
    audit->add_option("--out", out_dir, "output directory (default: the solution directory)");
    audit->add_option("--threads", threads, "worker threads (0 = all cores)");

    auto* report = app.add_subcommand("report", "emit plot-ready views of a run directory");
    report->add_option("dir", solution_dir, "run directory")->required();
    report->add_option("--config", report_cfg, "configuration (default: <dir>/config.cfg)");
    report->add_option("--out", out_dir, "output directory (default: the run directory)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (solve->parsed()) return run_solve(cfg_path, out_dir, threads, with_z);
        if (simulate->parsed())
            return run_simulate(cfg_path, solution_dir, seed_spec, agents_n, out_dir, threads);
        if (audit->parsed())
            return run_audit(cfg_path, solution_dir, agents_spec, seed_spec, audit_class, out_dir,
                             threads);
        if (report->parsed()) return run_report(solution_dir, report_cfg, out_dir);
    } catch (const srec::NonConvergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNonConvergence;
    } catch (const srec::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const srec::InvariantError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const srec::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return kExitOk;
}
