#include "srec/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "srec/digest.hpp"
#include "srec/errors.hpp"
#include "srec/market_model.hpp"
#include "srec/rng.hpp"
#include "srec/threading.hpp"

namespace srec {

std::vector<int> class_counts_largest_remainder(int n,
                                                std::span<const SubPopulationParams> classes) {
    if (n < 1) throw ConfigError("class_counts: need at least one agent");
    if (classes.empty()) throw ConfigError("class_counts: need at least one class");

    std::vector<int> counts(classes.size());
    std::vector<std::pair<double, std::size_t>> remainders;  // (-frac, k) for stable ordering
    int assigned = 0;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const double exact = n * classes[k].fraction;
        counts[k] = static_cast<int>(std::floor(exact));
        assigned += counts[k];
        remainders.emplace_back(-(exact - counts[k]), k);
    }
    std::stable_sort(remainders.begin(), remainders.end());
    for (int r = 0; r < n - assigned; ++r) {
        ++counts[remainders[static_cast<std::size_t>(r) % remainders.size()].second];
    }
    return counts;
}

double clearing_price(std::span<const double> y, std::span<const int> class_of,
                      const MarketConfig& cfg, double extra_trade) {
    if (y.empty()) throw ConfigError("clearing_price: no agents");
    if (y.size() != class_of.size()) {
        throw DimensionError("clearing_price: y and class labels differ in length");
    }
    double weighted = 0.0, liquidity = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double inv_gamma = 1.0 / cfg.classes[class_of[i]].trading_cost;
        weighted += y[i] * inv_gamma;
        liquidity += inv_gamma;
    }
    return (cfg.compliance.penalty * weighted + extra_trade) / liquidity;
}

SimulationRun simulate(const EquilibriumSolution& solution, const MarketConfig& cfg, int n,
                       std::uint64_t seed, int threads, const DeviationSpec& deviation) {
    cfg.validate();
    if (n < 1) throw ConfigError("simulate: n_agents must be >= 1");
    if (deviation.active() && deviation.agent >= n) {
        throw ConfigError("simulate: deviating agent index out of range");
    }

    const SchemeGrid& grid = solution.grid;
    const int m = grid.steps;
    const double dt = grid.dt;
    const double P = cfg.compliance.penalty;
    const std::size_t nn = static_cast<std::size_t>(n);

    SimulationRun run;
    run.seed = seed;
    run.n = n;
    run.class_counts = class_counts_largest_remainder(n, cfg.classes);
    run.class_of.resize(nn);
    {
        int next = 0;
        for (std::size_t k = 0; k < run.class_counts.size(); ++k) {
            for (int c = 0; c < run.class_counts[k]; ++c) run.class_of[next++] = static_cast<int>(k);
        }
    }

    run.inventories.assign(static_cast<std::size_t>(m + 1) * nn, 0.0);
    run.gen_rate.assign(static_cast<std::size_t>(m) * nn, 0.0);
    run.trade_rate.assign(static_cast<std::size_t>(m) * nn, 0.0);
    run.price.assign(m + 1, 0.0);

    parallel_for(nn, threads, [&](std::size_t i) {
        const auto& pop = cfg.classes[run.class_of[i]];
        const rng::Stream stream(seed, i, rng::Domain::InitialInventory);
        run.inventories[i] = pop.initial_mean + std::sqrt(pop.initial_var) * stream.normal(0);
    });

    std::vector<double> y_buf(nn, 0.0);
    const auto eval_values = [&](int j) {
        parallel_for(nn, threads, [&](std::size_t i) {
            const int k = run.class_of[i];
            y_buf[i] = pwl_interpolate(grid.x, solution.y.slice(k, j),
                                       run.inventories[static_cast<std::size_t>(j) * nn + i]);
        });
    };
    const auto deviant_extra_trade = [&](int j) {
        if (!deviation.active()) return 0.0;
        return deviation.shift_trade + (j == deviation.bump_step ? deviation.bump_trade : 0.0);
    };

    for (int j = 0; j < m; ++j) {
        eval_values(j);
        const double s = clearing_price(y_buf, run.class_of, cfg, deviant_extra_trade(j));
        run.price[j] = s;

        double* x_now = run.inventories.data() + static_cast<std::size_t>(j) * nn;
        double* x_next = run.inventories.data() + static_cast<std::size_t>(j + 1) * nn;
        double* g_row = run.gen_rate.data() + static_cast<std::size_t>(j) * nn;
        double* t_row = run.trade_rate.data() + static_cast<std::size_t>(j) * nn;

        parallel_for(nn, threads, [&](std::size_t i) {
            const auto& pop = cfg.classes[run.class_of[i]];
            double g = pop.baseline_rate + P / pop.generation_cost * y_buf[i];
            double tr = (P * y_buf[i] - s) / pop.trading_cost;
            if (deviation.active() && static_cast<int>(i) == deviation.agent) {
                g += deviation.shift_gen;
                tr += deviation.shift_trade;
                if (j == deviation.bump_step) {
                    g += deviation.bump_gen;
                    tr += deviation.bump_trade;
                }
            }
            g_row[i] = g;
            t_row[i] = tr;
            const rng::Stream stream(seed, i, rng::Domain::StepShock);
            x_next[i] = x_now[i] + (g + tr) * dt
                      + pop.volatility * std::sqrt(dt) * stream.normal(static_cast<std::uint64_t>(j));
        });

        double imbalance = 0.0;
        for (std::size_t i = 0; i < nn; ++i) imbalance += t_row[i];
        run.max_clearing_imbalance = std::max(run.max_clearing_imbalance, std::abs(imbalance));
    }
    if (run.max_clearing_imbalance > 1e-9 * std::max(1, n)) {
        throw SolverError("simulate: clearing imbalance " + std::to_string(run.max_clearing_imbalance)
                          + " exceeds 1e-9 * n");
    }

    eval_values(m);
    run.price[m] = clearing_price(y_buf, run.class_of, cfg, deviant_extra_trade(m));

    const std::size_t n_classes = cfg.classes.size();
    run.noncompliance_rate.assign(n_classes, 0.0);
    run.generation_total.assign(n_classes, 0.0);
    run.trading_total.assign(n_classes, 0.0);
    const double* x_T = run.inventories.data() + static_cast<std::size_t>(m) * nn;
    for (std::size_t i = 0; i < nn; ++i) {
        const int k = run.class_of[i];
        if (x_T[i] < cfg.compliance.requirement[k]) run.noncompliance_rate[k] += 1.0;
        for (int j = 0; j < m; ++j) {
            run.generation_total[k] += run.gen(j, static_cast<int>(i)) * dt;
            run.trading_total[k] += run.trade(j, static_cast<int>(i)) * dt;
        }
    }
    for (std::size_t k = 0; k < n_classes; ++k) {
        if (run.class_counts[k] > 0) run.noncompliance_rate[k] /= run.class_counts[k];
    }

    Sha256 h;
    h.update(seed);
    h.update(static_cast<std::uint64_t>(n));
    h.update(run.inventories);
    h.update(run.gen_rate);
    h.update(run.trade_rate);
    h.update(run.price);
    run.digest = h.hex();
    return run;
}

double agent_cost(const SimulationRun& run, const MarketConfig& cfg, int agent, double dt) {
    const int m = static_cast<int>(run.gen_rate.size() / run.n);
    const int k = run.class_of[agent];
    std::vector<ControlPair> controls(m);
    for (int j = 0; j < m; ++j) {
        controls[j] = ControlPair{run.gen(j, agent), run.trade(j, agent)};
    }
    return path_cost(cfg.classes[k], controls, run.price, run.inventory(m, agent), dt,
                     cfg.compliance.penalty, cfg.compliance.requirement[k],
                     cfg.compliance.smoothing_delta);
}

}  // namespace srec
