#include "srec/grid.hpp"

#include <algorithm>
#include <cmath>

#include "srec/errors.hpp"

namespace srec {

SchemeGrid SchemeGrid::make(const MarketConfig& cfg) {
    cfg.validate();
    const auto coeff = derive_coefficients(cfg.classes);
    const double T = cfg.compliance.horizon_years;
    const double P = cfg.compliance.penalty;

    SchemeGrid grid;
    grid.steps = cfg.n_steps();
    grid.dt = T / grid.steps;
    grid.times.resize(grid.steps + 1);
    for (int j = 0; j <= grid.steps; ++j) grid.times[j] = T * j / grid.steps;

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
        const auto& pop = cfg.classes[k];
        const double spread = 6.0 * std::sqrt(pop.initial_var + pop.volatility * pop.volatility * T);
        const double max_drift = (pop.baseline_rate + P * coeff[k].inventory_response) * T;
        grid.class_lo.push_back(pop.initial_mean - spread);
        grid.class_hi.push_back(pop.initial_mean + max_drift + spread);
        lo = std::min(lo, grid.class_lo.back());
        hi = std::max(hi, grid.class_hi.back());
    }

    const int d = cfg.scheme.x_nodes;
    grid.dx = (hi - lo) / (d - 1);
    if (!(grid.dx > 0.0)) throw GridError("degenerate inventory range");
    grid.x.resize(d);
    for (int u = 0; u < d; ++u) grid.x[u] = lo + grid.dx * u;
    grid.x.back() = hi;
    return grid;
}

}  // namespace srec
