#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srec/market_model.hpp"

namespace srec {

// Numerical-scheme knobs. Defaults suit the base two-class scenario.
struct SchemeSettings {
    double dt = 1.0 / 52.0;   // years; must divide the horizon
    int x_nodes = 401;        // inventory-grid resolution, >= 16
    double epsilon = 1e-4;    // fixed-point tolerance, Wasserstein-2 units
    int max_iters = 200;
    double omega = 0.5;       // damping in (0,1]; 1 = undamped
    int quad_nodes = 41;      // Gauss-Hermite nodes for the forward pass
};

struct RunSettings {
    std::uint64_t seed = 1;
    int n_agents = 2000;
    std::string out_dir;      // empty: resolved by the CLI (env or ./out)
    int threads = 1;          // worker threads for per-node/per-agent loops
};

// One validated bundle of everything a run needs.
struct MarketConfig {
    ComplianceParams compliance;
    std::vector<SubPopulationParams> classes;
    SchemeSettings scheme;
    RunSettings run;

    // Keys that were absent from the source file and filled with defaults,
    // as "section.key=value" strings; recorded in the run manifest.
    std::vector<std::string> defaults_applied;

    std::size_t n_classes() const { return classes.size(); }

    // Number of time steps m with m*dt == T; call validate() first.
    int n_steps() const;

    // Checks every structural constraint and throws ConfigError listing all
    // violations with the offending keys.
    void validate() const;
};

// The base two-class scenario used across tests and benchmarks.
MarketConfig paper_base_config();

}  // namespace srec
