#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "srec/simulation.hpp"

namespace srec {

// One candidate unilateral deviation from the feedback controls.
struct DeviationCell {
    double shift_gen = 0.0;
    double shift_trade = 0.0;
    int bump_step = -1;
    double bump_gen = 0.0;
    double bump_trade = 0.0;
    std::string label;

    bool identity() const {
        return shift_gen == 0.0 && shift_trade == 0.0 && bump_step < 0;
    }
};

// Constant shifts on a 5x5 grid (including the identity) plus one-step bumps
// of +-0.5 on each control at five evenly spaced times.
std::vector<DeviationCell> default_deviation_family(int n_steps);

struct CellStat {
    std::string label;
    double mean_gain = 0.0;  // mean over seeds of J(base) - J(deviated)
    double se = 0.0;
    double paired_var = 0.0;
    double unpaired_var_sum = 0.0;  // var(J base) + var(J dev)
};

struct GainEstimate {
    int n_agents = 0;
    double estimate = 0.0;  // best achievable gain over the family (lower bound on epsilon)
    double se = 0.0;        // standard error of the selected cell
    std::string best_cell;
    std::vector<CellStat> cells;
    bool crn_variance_reduced = false;  // paired variance < unpaired sum on all non-identity cells
};

struct DeviationReport {
    std::vector<int> agent_counts;
    std::vector<GainEstimate> gains;
    std::vector<std::uint64_t> seeds;
    int deviant_class = 0;
    std::string family_description;
};

// Estimates the best gain one agent of class `cls` extracts by deviating to a
// member of the family while everyone else plays the feedback controls; the
// clearing price is recomputed with the deviant included.  Paired runs share
// random-number streams, so the identity deviation scores exactly zero.
// Refuses a non-converged solution.
DeviationReport deviation_gain(const EquilibriumSolution& solution, const MarketConfig& cfg,
                               std::span<const int> agent_counts, int cls,
                               std::span<const std::uint64_t> seeds, int threads = 1);

struct ProbeResult {
    double t = 0.0;
    double x = 0.0;
    int cls = 0;
    double d_gen = 0.0, se_gen = 0.0;      // cost derivative per unit control-year
    double d_trade = 0.0, se_trade = 0.0;
    double scheme_tol = 0.0;  // grid-resolution floor added to the 3-SE band
    bool pass = false;
};

struct ProbeReport {
    std::vector<ProbeResult> probes;
    bool all_pass = false;
};

// First-order-condition check of the feedback controls against the frozen
// equilibrium price path.  At each random (t, x) probe the single-agent
// cost-to-go is simulated and centrally differenced in a one-step constant
// perturbation of each control, paired on common shocks; both derivative
// estimates must vanish within three standard errors.  A non-zero
// `gen_shift` probes a deliberately offset generation control instead; the
// expected derivative is then generation_cost * gen_shift.
ProbeReport optimality_probe(const EquilibriumSolution& solution, const MarketConfig& cfg, int cls,
                             int n_probes, int paths_per_probe, std::uint64_t seed,
                             double gen_shift = 0.0, int threads = 1);

}  // namespace srec
