#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "srec/solver.hpp"

namespace srec {

// Optional unilateral deviation applied to one agent: constant shifts of the
// feedback controls plus an optional one-step bump.  All-zero shifts must
// reproduce the undeviated run bit for bit.
struct DeviationSpec {
    int agent = -1;
    double shift_gen = 0.0;
    double shift_trade = 0.0;
    int bump_step = -1;
    double bump_gen = 0.0;
    double bump_trade = 0.0;

    bool active() const { return agent >= 0; }
};

// One finite-player replay of the compliance period.
struct SimulationRun {
    std::uint64_t seed = 0;
    int n = 0;
    std::vector<int> class_of;                 // per agent
    std::vector<int> class_counts;             // largest-remainder split of n
    std::vector<double> inventories;           // (steps+1) x n, time-major
    std::vector<double> gen_rate, trade_rate;  // steps x n, time-major
    std::vector<double> price;                 // steps+1, stochastic clearing path
    std::vector<double> noncompliance_rate;    // per class, raw indicator x_T < R_k
    std::vector<double> generation_total;      // per class, certificates
    std::vector<double> trading_total;         // per class, certificates (signed)
    double max_clearing_imbalance = 0.0;       // max_j |sum_i trade_i(t_j)|
    std::string digest;                        // sha256 of the numerical payload

    double inventory(int j, int agent) const {
        return inventories[static_cast<std::size_t>(j) * n + agent];
    }
    double gen(int j, int agent) const {
        return gen_rate[static_cast<std::size_t>(j) * n + agent];
    }
    double trade(int j, int agent) const {
        return trade_rate[static_cast<std::size_t>(j) * n + agent];
    }
};

// Number of agents per class: round n*pi_k, assigning remainders to the
// largest fractional parts (ties to the lower class index).
std::vector<int> class_counts_largest_remainder(int n, std::span<const SubPopulationParams> classes);

// Market-clearing price given every agent's adjoint value:
//   P * (sum_i y_i/gamma_i + extra_trade/P') / sum_i 1/gamma_i
// where `extra_trade` is an exogenous trading rate added to the clearing
// condition (a deviating agent's shift).  Throws ConfigError when no agents.
double clearing_price(std::span<const double> y, std::span<const int> class_of,
                      const MarketConfig& cfg, double extra_trade = 0.0);

// Replays the finite-player game: agents apply the solved feedback controls
// to their own inventories, the price clears endogenously each step, and
// idiosyncratic generation noise comes from counter-based per-agent streams
// keyed by (seed, agent).  Identical (seed, n, config) give a bitwise
// identical run at any thread count.
SimulationRun simulate(const EquilibriumSolution& solution, const MarketConfig& cfg, int n,
                       std::uint64_t seed, int threads = 1,
                       const DeviationSpec& deviation = {});

// Realised cost of one agent over a run (left Riemann sum of the running
// cost plus the smoothed terminal penalty).
double agent_cost(const SimulationRun& run, const MarketConfig& cfg, int agent, double dt);

}  // namespace srec
