#pragma once

#include <vector>

#include "srec/config.hpp"

namespace srec {

// Shared time/inventory lattice for the scheme.  The inventory range is
// auto-sized to cover every class's reachable states: from the lowest initial
// mean minus six terminal standard deviations up to the highest initial mean
// plus the maximal drift over the horizon plus the same margin.
struct SchemeGrid {
    double dt = 0.0;
    int steps = 0;                  // m; times has m+1 nodes
    std::vector<double> times;      // t_0 = 0 ... t_m = T
    std::vector<double> x;          // uniform, strictly increasing
    double dx = 0.0;
    std::vector<double> class_lo;   // per-class reachable bounds (diagnostics)
    std::vector<double> class_hi;

    int n_nodes() const { return static_cast<int>(x.size()); }

    static SchemeGrid make(const MarketConfig& cfg);
};

}  // namespace srec
