#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "srec/config.hpp"
#include "srec/nash_audit.hpp"
#include "srec/simulation.hpp"
#include "srec/solver.hpp"

namespace srec::io {

// Strict sectioned key=value configuration.  Unknown sections or keys are
// rejected; all constraint violations are reported together.  Values may be
// plain numbers, "a/b" fractions, or (for compliance.R) comma-separated
// lists.  Omitted optional keys get documented defaults, recorded in
// MarketConfig::defaults_applied.
MarketConfig load_config(const std::string& path);
MarketConfig parse_config(const std::string& text, const std::string& origin);

// Canonical serialisation: fixed section/key order, 17-significant-digit
// numbers.  parse_config(emit_config(cfg)) reproduces cfg exactly.
std::string emit_config(const MarketConfig& cfg);

// SHA-256 of the canonical serialisation; identifies a configuration
// independently of the formatting of its source file.
std::string config_digest(const MarketConfig& cfg);

// Writes bytes to out_dir/name via a temp file and atomic rename, creating
// the directory if needed.  Returns the content's SHA-256.
std::string write_artifact(const std::string& out_dir, const std::string& name,
                           const std::string& bytes);

// name -> sha256 of everything written by one emit call.
using FileDigests = std::map<std::string, std::string>;

// price.csv, surface.csv, flow.csv, diagnostics.json (and z_surface.csv when
// `z` is given).  Row order is fixed: time-major, x-minor, class-innermost;
// numbers carry 17 significant digits so they parse back exactly.
FileDigests emit_solution(const EquilibriumSolution& solution, const MarketConfig& cfg,
                          const std::string& out_dir, const SurfaceArray* z = nullptr);

// Written by `solve` on failure so later runs can refuse with a reason.
FileDigests emit_failure_diagnostics(const MarketConfig& cfg, const std::string& out_dir,
                                     const std::vector<double>& residual_history,
                                     const std::string& reason);

// Reads a solution directory back.  The grid is rebuilt from cfg and every
// stored coordinate must match it bit for bit; throws IoError otherwise or
// when artifacts are missing/corrupt.  Does not check convergence; callers
// decide whether to refuse.
EquilibriumSolution load_solution(const std::string& dir, const MarketConfig& cfg);

// Convergence flag and config digest stored in diagnostics.json.
struct SolutionStamp {
    bool converged = false;
    std::string config_digest;
    int iterations = 0;
    double final_residual = 0.0;
};
SolutionStamp read_solution_stamp(const std::string& dir);

// sim_price.csv, sim_agents.csv, sim_summary.json for a batch of seeds.
FileDigests emit_simulation(std::span<const SimulationRun> runs, const MarketConfig& cfg,
                            const std::string& out_dir);

// deviation_report.json, optionally with a first-order probe section.
FileDigests emit_deviation_report(const DeviationReport& report, const ProbeReport* probe,
                                  const std::string& out_dir);

// Plot-ready views of a run directory: controls_slice.csv and
// flow_params.csv always; report_price.csv and histograms.csv when
// simulation artifacts are present.
FileDigests emit_report(const std::string& run_dir, const MarketConfig& cfg,
                        const std::string& out_dir);

// manifest.json bookkeeping: one entry per subcommand with timings and the
// artifact checksums.  Timings vary run to run; the checksums do not.
void update_manifest(const std::string& out_dir, const std::string& subcommand,
                     const MarketConfig& cfg, double elapsed_ms, const FileDigests& files);

// Artifacts whose current bytes no longer match the manifest checksums.
std::vector<std::string> manifest_mismatches(const std::string& out_dir);

}  // namespace srec::io
